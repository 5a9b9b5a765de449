import logging

from pydantic_settings import BaseSettings, SettingsConfigDict


class Settings(BaseSettings):
    """
    Configuración del proceso. Se lee de variables de entorno o de un archivo .env.
    La configuración de cada experimento va aparte (models/experiment_model.py).
    """

    model_config = SettingsConfigDict(env_file=".env", extra="ignore")

    LOG_LEVEL: str = "INFO"
    OUT_DIR: str = "runs"
    THREADS: int = 1
    # Límite de rondas para ejecuciones síncronas vía HTTP
    MAX_HTTP_ROUNDS: int = 200


settings = Settings()

LOG_FORMAT = "%(asctime)s - %(name)s - %(levelname)s - %(message)s"


def get_logger(name: str) -> logging.Logger:
    """Logger del módulo con un único StreamHandler (evita duplicados al recargar)."""
    logger = logging.getLogger(name)
    logger.setLevel(settings.LOG_LEVEL.upper())
    if not logger.handlers:
        handler = logging.StreamHandler()
        handler.setFormatter(logging.Formatter(LOG_FORMAT))
        logger.addHandler(handler)
    return logger
