from typing import Dict, List, Optional

from fastapi import APIRouter, Body, File, HTTPException, UploadFile, status
from pydantic import BaseModel

from config import get_logger, settings
from exceptions import AFedError, ConfigError, NumericalError
from models.metric_model import RunArtifacts, TradeoffRow
from services import experiment_service

logger = get_logger(__name__)

router = APIRouter()


class ValidateResponse(BaseModel):
    canonical: dict


class CompareResponse(BaseModel):
    rows: List[TradeoffRow]
    spearman: Dict[str, Optional[float]]


def _http_error(e: AFedError) -> HTTPException:
    if isinstance(e, ConfigError):
        return HTTPException(
            status_code=status.HTTP_422_UNPROCESSABLE_ENTITY, detail={"errors": e.errors}
        )
    if isinstance(e, NumericalError):
        return HTTPException(
            status_code=status.HTTP_500_INTERNAL_SERVER_ERROR,
            detail=f"{e.detail} (ronda {e.round_index})",
        )
    return HTTPException(status_code=status.HTTP_400_BAD_REQUEST, detail=e.detail)


# --- Validación de una configuración (TOML o JSON en el cuerpo) ---
@router.post("/validate", response_model=ValidateResponse)
async def validate_config(text: str = Body(..., media_type="text/plain")):
    """
    Valida la configuración y devuelve su forma canónica con todos los valores por defecto.
    """
    try:
        cfg = experiment_service.validate(text)
        return ValidateResponse(canonical=cfg.model_dump(mode="json"))
    except AFedError as e:
        raise _http_error(e)


# --- Ejecución síncrona de un barrido pequeño ---
@router.post("/run", response_model=RunArtifacts, status_code=status.HTTP_201_CREATED)
def run_experiment(
    text: str = Body(..., media_type="text/plain"),
    seed: Optional[int] = None,
):
    """
    Ejecuta la configuración y escribe traza y resumen en el directorio de salida.
    Las ejecuciones largas deben lanzarse desde la CLI.
    """
    try:
        cfg = experiment_service.validate(text)
        n_seeds = 1 if seed is not None else len(cfg.sweep.seeds)
        total_rounds = cfg.training.rounds * len(cfg.sweep.lambdas) * n_seeds
        if total_rounds > settings.MAX_HTTP_ROUNDS:
            raise HTTPException(
                status_code=status.HTTP_413_REQUEST_ENTITY_TOO_LARGE,
                detail=(
                    f"{total_rounds} rondas superan el límite de {settings.MAX_HTTP_ROUNDS}; "
                    "usa la CLI"
                ),
            )
        return experiment_service.run_config(cfg, seed=seed)
    except HTTPException as e:
        raise e
    except AFedError as e:
        logger.error(f"Error ejecutando experimento: {e.detail}")
        raise _http_error(e)
    except Exception as e:
        logger.error(f"Error inesperado en router al ejecutar experimento: {e}", exc_info=True)
        raise HTTPException(
            status_code=status.HTTP_500_INTERNAL_SERVER_ERROR,
            detail=f"Ocurrió un error inesperado en el servidor: {str(e)}",
        )


# --- Tabla de compromiso a partir de trazas subidas ---
@router.post("/compare", response_model=CompareResponse)
async def compare_traces(traces: List[UploadFile] = File(...)):
    """
    Une las trazas CSV subidas y devuelve método × λ → (acc, ΔDP) más Spearman(λ, ΔDP).
    """
    try:
        payloads = [await trace.read() for trace in traces]
        rows = experiment_service.compare_uploads(payloads)
        rho = experiment_service.spearman_by_method(rows)
        # NaN no es JSON válido
        spearman = {k: (None if v != v else v) for k, v in rho.items()}
        return CompareResponse(rows=rows, spearman=spearman)
    except AFedError as e:
        raise _http_error(e)
