from typing import List, Optional

from pydantic import BaseModel, ConfigDict, Field

TRACE_COLUMNS = [
    "round",
    "method",
    "seed",
    "lambda",
    "acc",
    "dp_gap",
    "loss_y",
    "loss_fair",
    "loss_g",
    "loss_d",
]


class MetricRow(BaseModel):
    """Una fila de la traza por ronda."""

    model_config = ConfigDict(populate_by_name=True)

    round: int
    method: str
    seed: int
    lam: float = Field(alias="lambda")
    acc: float
    dp_gap: float
    loss_y: float
    loss_fair: float
    loss_g: Optional[float] = None
    loss_d: Optional[float] = None

    def as_record(self) -> dict:
        return self.model_dump(by_alias=True)


class SummaryEntry(BaseModel):
    lam: float
    seed: int
    acc: float
    dp_gap: float


class LambdaAggregate(BaseModel):
    lam: float
    n_seeds: int
    acc_mean: float
    acc_std: float
    dp_mean: float
    dp_std: float


class RunSummary(BaseModel):
    name: str
    method: str
    rounds: int
    entries: List[SummaryEntry]
    aggregates: List[LambdaAggregate]


class TradeoffRow(BaseModel):
    method: str
    lam: float
    n_seeds: int
    acc: float
    dp_gap: float
    dp_std: float


class RunArtifacts(BaseModel):
    """Rutas escritas por una ejecución y tamaño de la traza."""

    out_dir: str
    trace_path: str
    summary_path: str
    log_path: str
    n_rows: int
    summary: RunSummary
