from typing import Annotated, List, Literal, Optional, Union

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from models.data_model import CsvSchema

Method = Literal["fedavg", "fedreg", "afed_g", "afed_gan"]


class NetworkBlock(BaseModel):
    model_config = ConfigDict(extra="forbid")

    latent_dim: int = Field(default=64, ge=1)
    extractor_hidden: List[int] = Field(default_factory=lambda: [64])
    head_hidden: int = Field(default=32, ge=1)
    noise_dim: int = Field(default=32, ge=1)
    generator_hidden: List[int] = Field(default_factory=lambda: [64])
    discriminator_hidden: List[int] = Field(default_factory=lambda: [64])
    conditional_discriminator: bool = True

    @field_validator("extractor_hidden", "generator_hidden", "discriminator_hidden")
    @classmethod
    def _positive_widths(cls, value: List[int]) -> List[int]:
        if any(w < 1 for w in value):
            raise ValueError("los anchos ocultos deben ser >= 1")
        return value


class TrainingBlock(BaseModel):
    """Hiperparámetros de ronda. Valores por defecto de la configuración experimental de AFed."""

    model_config = ConfigDict(extra="forbid")

    participant_ratio: float = Field(default=1.0, gt=0.0, le=1.0)
    local_epochs: int = Field(default=5, ge=1)  # T1
    gan_epochs: int = Field(default=5, ge=1)  # T2
    rounds: int = Field(default=150, ge=1)
    lr_classifier: float = Field(default=0.005, gt=0.0)  # η
    lr_fair: float = Field(default=0.005, gt=0.0)  # β
    lr_discriminator: float = Field(default=0.0003, gt=0.0)  # γ_D
    lr_generator: float = Field(default=0.0001, gt=0.0)  # γ_G
    lr_server_generator: float = Field(default=0.0001, gt=0.0)  # α
    server_generator_steps: int = Field(default=5, ge=0)
    server_batch_size: int = Field(default=256, ge=1)
    mixup_alpha: float = Field(default=1.0, gt=0.0)
    penalty_mode: Literal["signed", "absolute"] = "signed"
    gan_loss: Literal["nonsaturating", "saturating"] = "nonsaturating"
    classifier_optimizer: Literal["adam", "rmsprop", "sgd"] = "adam"
    gan_optimizer: Literal["adam", "rmsprop", "sgd"] = "rmsprop"
    attribute_head_feedback: bool = True


class RoundConfig(TrainingBlock):
    method: Method
    lam: float = Field(default=0.0, ge=0.0)


class ToyDatasetBlock(BaseModel):
    model_config = ConfigDict(extra="forbid")

    kind: Literal["toy"] = "toy"
    per_client: int = Field(default=100, ge=20)
    dominant_fraction: float = Field(default=0.85, gt=0.0, le=1.0)
    separation: float = Field(default=2.0, gt=0.0)
    variance: float = Field(default=0.5, gt=0.0)
    client_components: Optional[List[int]] = None
    # Separación propia de y en x_0; sin valor se usa `separation`
    label_separation: Optional[float] = Field(default=None, gt=0.0)
    # "clients": prueba = partición estratificada de cada cliente; "balanced": los clientes
    # entrenan con todo y la prueba es global con los cuatro componentes por igual
    test_distribution: Literal["clients", "balanced"] = "clients"
    test_per_component: int = Field(default=250, ge=1)

    @field_validator("client_components")
    @classmethod
    def _valid_components(cls, value: Optional[List[int]]) -> Optional[List[int]]:
        if value is not None and any(c not in (0, 1, 2, 3) for c in value):
            raise ValueError("cada componente debe estar en {0, 1, 2, 3}")
        return value


class SyntheticDatasetBlock(BaseModel):
    model_config = ConfigDict(extra="forbid")

    kind: Literal["synthetic"] = "synthetic"
    n_samples: int = Field(default=2000, ge=10)
    n_features: int = Field(default=8, ge=2)
    correlation: float = Field(default=1.0, ge=0.0)


class CsvDatasetBlock(BaseModel):
    model_config = ConfigDict(extra="forbid", populate_by_name=True)

    kind: Literal["csv"] = "csv"
    path: str
    columns: CsvSchema


DatasetBlock = Annotated[
    Union[ToyDatasetBlock, SyntheticDatasetBlock, CsvDatasetBlock],
    Field(discriminator="kind"),
]


class PartitionBlock(BaseModel):
    model_config = ConfigDict(extra="forbid")

    n_clients: int = Field(default=4, ge=2)
    scheme: Literal["dominant_component", "dirichlet"] = "dominant_component"
    concentration: float = Field(default=1.0, gt=0.0)
    test_fraction: float = Field(default=0.2, ge=0.0, lt=1.0)


class SweepBlock(BaseModel):
    model_config = ConfigDict(extra="forbid")

    lambdas: List[float] = Field(default_factory=lambda: [0.0], min_length=1)
    seeds: List[int] = Field(default_factory=lambda: [0], min_length=1)

    @field_validator("lambdas")
    @classmethod
    def _non_negative(cls, value: List[float]) -> List[float]:
        if any(v < 0 for v in value):
            raise ValueError("λ debe ser >= 0")
        return value


class OutputBlock(BaseModel):
    model_config = ConfigDict(extra="forbid")

    out_dir: Optional[str] = None
    trace_file: str = "trace.csv"
    summary_file: str = "summary.json"
    checkpoint_every: int = Field(default=0, ge=0)


class ExperimentConfig(BaseModel):
    """Descripción declarativa completa de un experimento (barrido λ × semillas)."""

    model_config = ConfigDict(extra="forbid")

    name: str = "afed"
    method: Method
    dataset: DatasetBlock = Field(default_factory=ToyDatasetBlock)
    partition: PartitionBlock = Field(default_factory=PartitionBlock)
    network: NetworkBlock = Field(default_factory=NetworkBlock)
    training: TrainingBlock = Field(default_factory=TrainingBlock)
    sweep: SweepBlock = Field(default_factory=SweepBlock)
    output: OutputBlock = Field(default_factory=OutputBlock)

    @model_validator(mode="after")
    def _coherent_partition(self) -> "ExperimentConfig":
        if self.dataset.kind == "toy" and self.partition.scheme != "dominant_component":
            raise ValueError("partition.scheme: el dataset toy usa 'dominant_component'")
        if self.dataset.kind != "toy" and self.partition.scheme != "dirichlet":
            raise ValueError("partition.scheme: los datasets csv/synthetic usan 'dirichlet'")
        components = getattr(self.dataset, "client_components", None)
        if components is not None and len(components) != self.partition.n_clients:
            raise ValueError(
                "dataset.client_components: debe tener un elemento por cliente"
            )
        return self

    def round_config(self, lam: float) -> RoundConfig:
        return RoundConfig(method=self.method, lam=lam, **self.training.model_dump())
