import io
import json
import logging
import math
try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from pathlib import Path
from typing import Dict, IO, List, Optional, Sequence, Union

import numpy as np
import pandas as pd
from pydantic import ValidationError
from scipy.stats import spearmanr

from config import LOG_FORMAT, get_logger, settings
from exceptions import ConfigError, DataError, SchemaError
from models.experiment_model import ExperimentConfig
from models.metric_model import (
    TRACE_COLUMNS,
    LambdaAggregate,
    MetricRow,
    RunArtifacts,
    RunSummary,
    SummaryEntry,
    TradeoffRow,
)
from services import federation_service

logger = get_logger(__name__)

DATASET_KINDS = ("toy", "synthetic", "csv")
TradeoffSource = Union[str, Path, IO[bytes], IO[str]]


def _error_key(loc: Sequence) -> str:
    parts = [str(p) for p in loc]
    # La etiqueta de la unión discriminada no es una clave del archivo
    if len(parts) > 1 and parts[0] == "dataset" and parts[1] in DATASET_KINDS:
        parts.pop(1)
    return ".".join(parts)


def _format_errors(exc: ValidationError) -> List[str]:
    errors = []
    for err in exc.errors():
        msg = err["msg"].removeprefix("Value error, ")
        key = _error_key(err["loc"])
        # Los validadores del modelo completo ya nombran la clave en el mensaje
        errors.append(f"{key}: {msg}" if key else msg)
    return errors


def _parse_text(text: str) -> dict:
    stripped = text.lstrip()
    try:
        if stripped.startswith("{"):
            return json.loads(stripped)
        return tomllib.loads(text)
    except (json.JSONDecodeError, tomllib.TOMLDecodeError) as e:
        raise ConfigError([f"config: no se pudo leer el archivo ({e})"])


def validate(text: str, base_dir: Optional[Union[str, Path]] = None) -> ExperimentConfig:
    """
    Parsea TOML (o JSON) y valida. Cada error nombra la clave culpable con notación
    de puntos. Las rutas relativas del dataset se resuelven contra `base_dir`.
    """
    data = _parse_text(text)
    try:
        cfg = ExperimentConfig.model_validate(data)
    except ValidationError as e:
        raise ConfigError(_format_errors(e))

    if cfg.dataset.kind == "csv":
        path = Path(cfg.dataset.path)
        if not path.is_absolute() and base_dir is not None:
            path = Path(base_dir) / path
        if not path.is_file():
            raise ConfigError([f"dataset.path: el archivo {path} no existe"])
        cfg.dataset.path = str(path)
    return cfg


def load_config(path: Union[str, Path]) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as e:
        raise ConfigError([f"config: no se pudo abrir {path} ({e})"])
    return validate(text, base_dir=path.parent)


def canonical_form(cfg: ExperimentConfig) -> str:
    """JSON con claves ordenadas y todos los valores por defecto explícitos."""
    return json.dumps(cfg.model_dump(mode="json"), indent=2, sort_keys=True) + "\n"


# --- run ---


def trace_frame(rows: Sequence[MetricRow]) -> pd.DataFrame:
    frame = pd.DataFrame([row.as_record() for row in rows], columns=TRACE_COLUMNS)
    return frame.sort_values(["lambda", "seed", "round"], kind="mergesort").reset_index(drop=True)


def summarize(cfg: ExperimentConfig, rows: Sequence[MetricRow]) -> RunSummary:
    """Exactitud y ΔDP finales por (λ, semilla) más media y desviación entre semillas."""
    final: Dict[tuple, MetricRow] = {}
    for row in rows:
        key = (row.lam, row.seed)
        if key not in final or row.round > final[key].round:
            final[key] = row
    entries = [
        SummaryEntry(lam=lam, seed=seed, acc=row.acc, dp_gap=row.dp_gap)
        for (lam, seed), row in sorted(final.items())
    ]
    aggregates = []
    for lam in sorted({e.lam for e in entries}):
        accs = np.array([e.acc for e in entries if e.lam == lam])
        dps = np.array([e.dp_gap for e in entries if e.lam == lam])
        aggregates.append(
            LambdaAggregate(
                lam=lam,
                n_seeds=int(accs.size),
                acc_mean=float(accs.mean()),
                acc_std=float(accs.std()),
                dp_mean=float(dps.mean()),
                dp_std=float(dps.std()),
            )
        )
    return RunSummary(
        name=cfg.name,
        method=cfg.method,
        rounds=cfg.training.rounds,
        entries=entries,
        aggregates=aggregates,
    )


def resolve_out_dir(cfg: ExperimentConfig, out_dir: Optional[Union[str, Path]] = None) -> Path:
    if out_dir is not None:
        return Path(out_dir)
    if cfg.output.out_dir is not None:
        return Path(cfg.output.out_dir)
    return Path(settings.OUT_DIR) / cfg.name


def run_config(
    cfg: ExperimentConfig,
    out_dir: Optional[Union[str, Path]] = None,
    threads: Optional[int] = None,
    seed: Optional[int] = None,
    resume: bool = False,
) -> RunArtifacts:
    """
    Ejecuta el barrido y escribe la traza CSV y el resumen JSON. Las marcas de tiempo solo
    van al log lateral run.log, así la traza es idéntica byte a byte entre ejecuciones.
    Con resume=True cada celda continúa desde su último checkpoint en el directorio.
    """
    target = resolve_out_dir(cfg, out_dir)
    target.mkdir(parents=True, exist_ok=True)
    log_path = target / "run.log"
    handler = logging.FileHandler(log_path, mode="a" if resume else "w", encoding="utf-8")
    handler.setFormatter(logging.Formatter(LOG_FORMAT))
    root = logging.getLogger()
    root.addHandler(handler)
    try:
        logger.info(f"Ejecutando {cfg.name} ({cfg.method}) en {target}")
        rows = federation_service.run_sweep(
            cfg,
            threads=threads or settings.THREADS,
            out_dir=target,
            seeds=[seed] if seed is not None else None,
            resume=resume,
        )
        trace_path = target / cfg.output.trace_file
        trace_frame(rows).to_csv(trace_path, index=False)
        summary = summarize(cfg, rows)
        summary_path = target / cfg.output.summary_file
        summary_path.write_text(summary.model_dump_json(indent=2) + "\n", encoding="utf-8")
        logger.info(f"Traza: {trace_path} ({len(rows)} filas); resumen: {summary_path}")
    finally:
        root.removeHandler(handler)
        handler.close()
    return RunArtifacts(
        out_dir=str(target),
        trace_path=str(trace_path),
        summary_path=str(summary_path),
        log_path=str(log_path),
        n_rows=len(rows),
        summary=summary,
    )


# --- compare ---


def read_trace(source: TradeoffSource) -> pd.DataFrame:
    try:
        frame = pd.read_csv(source)
    except pd.errors.EmptyDataError:
        return pd.DataFrame(columns=TRACE_COLUMNS)
    except (OSError, pd.errors.ParserError) as e:
        raise SchemaError(f"No se pudo leer la traza {source}: {e}")
    missing = [c for c in ("round", "method", "seed", "lambda", "acc", "dp_gap") if c not in frame]
    if missing:
        raise SchemaError(f"La traza no tiene la columna '{missing[0]}'", column=missing[0])
    return frame


def compare(sources: Sequence[TradeoffSource]) -> List[TradeoffRow]:
    """
    Tabla de compromiso método × λ: ronda final de cada (método, λ, semilla), promediada
    entre semillas. Filas ordenadas por método y luego λ.
    """
    frames = [read_trace(s) for s in sources]
    frames = [f for f in frames if not f.empty]
    if not frames:
        raise DataError("No hay trazas que comparar")
    merged = pd.concat(frames, ignore_index=True)
    keys = ["method", "lambda", "seed"]
    last = merged.sort_values(keys + ["round"], kind="mergesort").groupby(keys, sort=True).tail(1)
    grouped = last.groupby(["method", "lambda"], sort=True)
    rows = []
    for (method, lam), group in grouped:
        dps = group["dp_gap"].to_numpy(dtype=np.float64)
        rows.append(
            TradeoffRow(
                method=str(method),
                lam=float(lam),
                n_seeds=int(len(group)),
                acc=float(group["acc"].mean()),
                dp_gap=float(dps.mean()),
                dp_std=float(dps.std()),
            )
        )
    return sorted(rows, key=lambda r: (r.method, r.lam))


def compare_uploads(payloads: Sequence[bytes]) -> List[TradeoffRow]:
    return compare([io.BytesIO(p) for p in payloads])


def spearman_by_method(rows: Sequence[TradeoffRow]) -> Dict[str, float]:
    """Correlación de Spearman entre λ y ΔDP medio por método (NaN con menos de 2 λ)."""
    out = {}
    for method in sorted({r.method for r in rows}):
        subset = [r for r in rows if r.method == method]
        if len({r.lam for r in subset}) < 2:
            out[method] = math.nan
            continue
        rho = spearmanr([r.lam for r in subset], [r.dp_gap for r in subset]).statistic
        out[method] = float(rho)
    return out


def tradeoff_frame(rows: Sequence[TradeoffRow]) -> pd.DataFrame:
    frame = pd.DataFrame([r.model_dump() for r in rows])
    return frame.rename(columns={"lam": "lambda"})
