from dataclasses import dataclass
from typing import Dict, Iterator, List, Literal, Optional, Tuple

import numpy as np
from pydantic import BaseModel, Field, field_validator, model_validator


@dataclass(frozen=True, eq=False)
class Sample:
    x: np.ndarray
    y: int
    a: int


@dataclass(eq=False)
class LabeledData:
    """
    Almacenamiento columnar de muestras: x (n, m) float64, y (n,) y a (n,) enteros en {0, 1}.
    """

    x: np.ndarray
    y: np.ndarray
    a: np.ndarray

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=np.float64)
        if self.x.ndim == 1:
            self.x = self.x.reshape(-1, 1)
        self.y = np.asarray(self.y, dtype=np.int64).reshape(-1)
        self.a = np.asarray(self.a, dtype=np.int64).reshape(-1)
        if not (self.x.shape[0] == self.y.shape[0] == self.a.shape[0]):
            raise ValueError("x, y y a deben tener el mismo número de filas")

    def __len__(self) -> int:
        return int(self.y.shape[0])

    @property
    def n_features(self) -> int:
        return int(self.x.shape[1])

    def samples(self) -> Iterator[Sample]:
        for i in range(len(self)):
            yield Sample(x=self.x[i], y=int(self.y[i]), a=int(self.a[i]))

    def subset(self, idx: np.ndarray) -> "LabeledData":
        return LabeledData(x=self.x[idx], y=self.y[idx], a=self.a[idx])

    @classmethod
    def from_samples(cls, samples: List[Sample], n_features: int = 0) -> "LabeledData":
        if not samples:
            return cls(x=np.zeros((0, n_features)), y=np.zeros(0), a=np.zeros(0))
        return cls(
            x=np.stack([s.x for s in samples]),
            y=np.array([s.y for s in samples]),
            a=np.array([s.a for s in samples]),
        )

    @classmethod
    def concat(cls, parts: List["LabeledData"]) -> "LabeledData":
        return cls(
            x=np.concatenate([p.x for p in parts]),
            y=np.concatenate([p.y for p in parts]),
            a=np.concatenate([p.a for p in parts]),
        )


@dataclass(eq=False)
class ClientDataset(LabeledData):
    client_id: int = 0

    @property
    def n_k(self) -> int:
        return len(self)


class MixtureSpec(BaseModel):
    """
    Cuatro gaussianas en R^2, cada una asignada a un par (y, a) distinto.
    """

    means: List[Tuple[float, float]]
    covariances: List[List[List[float]]]
    groups: List[Tuple[int, int]]
    dominant_fraction: float = Field(default=0.85, gt=0.0, le=1.0)
    client_components: Optional[List[int]] = None

    @model_validator(mode="after")
    def _four_components(self) -> "MixtureSpec":
        if not (len(self.means) == len(self.covariances) == len(self.groups) == 4):
            raise ValueError("se necesitan exactamente 4 componentes")
        if len(set(self.groups)) != 4 or any(
            y not in (0, 1) or a not in (0, 1) for y, a in self.groups
        ):
            raise ValueError("los cuatro pares (y, a) deben ser binarios y distintos")
        for cov in self.covariances:
            if np.asarray(cov).shape != (2, 2):
                raise ValueError("cada covarianza debe ser 2x2")
        return self

    @classmethod
    def default(
        cls,
        separation: float = 2.0,
        variance: float = 0.5,
        dominant_fraction: float = 0.85,
        client_components: Optional[List[int]] = None,
        label_separation: Optional[float] = None,
    ) -> "MixtureSpec":
        """
        Medias en (±s_y, ±s): y separa izquierda/derecha, a separa abajo/arriba.
        Componente c = 2*y + a. Sin label_separation, s_y = s.
        """
        label_separation = separation if label_separation is None else label_separation
        groups = [(0, 0), (0, 1), (1, 0), (1, 1)]
        means = [(label_separation * (2 * y - 1), separation * (2 * a - 1)) for y, a in groups]
        cov = [[variance, 0.0], [0.0, variance]]
        return cls(
            means=means,
            covariances=[cov] * 4,
            groups=groups,
            dominant_fraction=dominant_fraction,
            client_components=client_components,
        )


class PartitionSpec(BaseModel):
    n_clients: int = Field(ge=1)
    scheme: Literal["dominant_component", "dirichlet"] = "dirichlet"
    concentration: float = Field(default=1.0, gt=0.0)
    seed: int = 0


class CsvSchema(BaseModel):
    """
    Roles de columnas. Las categorías vacías se infieren (orden alfabético).
    Orden de features: numéricas en el orden dado, luego bloques one-hot por columna categórica.
    """

    label_column: str
    attribute_column: str
    label_positive: Optional[str] = None
    attribute_positive: Optional[str] = None
    numeric_columns: List[str] = Field(default_factory=list)
    categorical_columns: Dict[str, List[str]] = Field(default_factory=dict)

    @field_validator("numeric_columns")
    @classmethod
    def _unique(cls, value: List[str]) -> List[str]:
        if len(set(value)) != len(value):
            raise ValueError("columnas numéricas repetidas")
        return value


class GroupStats(BaseModel):
    y0_a0: int
    y0_a1: int
    y1_a0: int
    y1_a1: int

    @property
    def total(self) -> int:
        return self.y0_a0 + self.y0_a1 + self.y1_a0 + self.y1_a1

    def cell(self, y: int, a: int) -> int:
        return getattr(self, f"y{y}_a{a}")


@dataclass
class NormalizationStats:
    mean: np.ndarray
    std: np.ndarray
    feature_names: List[str]
