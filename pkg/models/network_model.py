from dataclasses import dataclass

from models.nn_model import Mlp

N_ATTRIBUTES = 2


@dataclass
class Classifier:
    """f = h^y ∘ E, más la cabeza auxiliar h^a sobre el mismo espacio latente."""

    extractor: Mlp
    label_head: Mlp
    attribute_head: Mlp

    @property
    def latent_dim(self) -> int:
        return self.extractor.output_dim

    def copy(self) -> "Classifier":
        return Classifier(
            extractor=self.extractor.copy(),
            label_head=self.label_head.copy(),
            attribute_head=self.attribute_head.copy(),
        )


@dataclass
class CondGenerator:
    """
    Entrada fija: [ε (noise_dim) ∥ one-hot(a) (2)]. Salida: latente de dimensión p.
    """

    net: Mlp
    noise_dim: int

    @property
    def latent_dim(self) -> int:
        return self.net.output_dim

    def copy(self) -> "CondGenerator":
        return CondGenerator(net=self.net.copy(), noise_dim=self.noise_dim)


@dataclass
class CondDiscriminator:
    """
    Entrada [z ∥ one-hot(a)] si es condicional, solo z si no. Salida sigmoid.
    """

    net: Mlp
    conditional: bool = True

    def copy(self) -> "CondDiscriminator":
        return CondDiscriminator(net=self.net.copy(), conditional=self.conditional)
