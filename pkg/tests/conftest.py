import pytest

# Configuración mínima compartida: 3 λ × 2 semillas × 2 rondas sobre el ejemplo de juguete
SMOKE_CONFIG = """
name = "smoke"
method = "fedreg"

[dataset]
kind = "toy"
per_client = 30
client_components = [0, 0, 3, 3]

[network]
latent_dim = 4
extractor_hidden = [8]
head_hidden = 8
noise_dim = 2
generator_hidden = [8]
discriminator_hidden = [8]

[training]
rounds = 2
local_epochs = 2
gan_epochs = 2
lr_classifier = 0.01
lr_fair = 0.01

[sweep]
lambdas = [0.0, 0.5, 1.0]
seeds = [0, 1]
"""


@pytest.fixture
def smoke_text():
    return SMOKE_CONFIG
