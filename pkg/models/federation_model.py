from dataclasses import dataclass, field
from typing import Dict, Optional

from models.network_model import Classifier, CondDiscriminator, CondGenerator


@dataclass
class FederationState:
    """Parámetros globales del servidor más la contabilidad de rondas."""

    classifier: Classifier
    generator: Optional[CondGenerator]
    discriminator: Optional[CondDiscriminator]
    round_index: int = 0
    seed: int = 0


@dataclass
class ClientUpdate:
    client_id: int
    n_k: int
    classifier: Classifier
    generator: Optional[CondGenerator] = None
    discriminator: Optional[CondDiscriminator] = None
    losses: Dict[str, float] = field(default_factory=dict)
