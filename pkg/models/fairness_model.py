from dataclasses import dataclass
from typing import List, Optional

import numpy as np
from pydantic import BaseModel, Field

from models.nn_model import MlpGrads


class DpReport(BaseModel):
    """Tasas de predicción positiva por grupo y brecha ΔDP = |γ0 − γ1|."""

    gamma0: float = Field(ge=0.0, le=1.0)
    gamma1: float = Field(ge=0.0, le=1.0)
    gap: float = Field(ge=0.0, le=1.0)
    count0: int
    count1: int


@dataclass
class MixBatch:
    """
    z̄ = t·z_t + (1−t)·z_f por fila; ā = t·a_t + (1−t)·a_f se guarda solo para reportes.
    """

    z_t: np.ndarray
    a_t: np.ndarray
    z_f: np.ndarray
    a_f: np.ndarray
    t: np.ndarray
    z_bar: np.ndarray
    a_bar: np.ndarray

    def __len__(self) -> int:
        return int(self.z_t.shape[0])


@dataclass
class PenaltyResult:
    value: float
    row_values: np.ndarray
    label_head_grads: MlpGrads
    grad_z_t: np.ndarray
    grad_z_f: np.ndarray
    extractor_grads: Optional[MlpGrads] = None


class IntegralCheck(BaseModel):
    lhs: float
    rhs: float
    grid: int

    @property
    def error(self) -> float:
        return abs(self.lhs - self.rhs)


class ProbeCapacity(BaseModel):
    """Clasificador de dominio usado como proxy del supremo sobre H."""

    hidden: int = 16
    depth: int = 2
    steps: int = 200
    lr: float = 0.01
    holdout_fraction: float = 0.5


class GeneratorDiagnostics(BaseModel):
    spread_ratio: float
    pairwise_distance_ratio: float
    attribute_entropy: float
    conditional_accuracy: float
    per_attribute_spread: List[float]
