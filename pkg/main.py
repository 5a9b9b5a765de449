from contextlib import asynccontextmanager

from fastapi import FastAPI
from fastapi.middleware.cors import CORSMiddleware

from config import get_logger, settings
from routers import experiments

logger = get_logger(__name__)


@asynccontextmanager
async def lifespan(app: FastAPI):
    logger.info(
        f"main.py: simulador listo (OUT_DIR={settings.OUT_DIR}, THREADS={settings.THREADS}, "
        f"MAX_HTTP_ROUNDS={settings.MAX_HTTP_ROUNDS})"
    )
    yield
    logger.info("main.py: cerrando la aplicación")


app = FastAPI(
    title="AFed API",
    description="Simulador de aprendizaje federado justo (AFed-G / AFed-GAN).",
    version="0.1.0",
    lifespan=lifespan,
)

# Orígenes locales para herramientas de visualización de trazas
origins = [
    "http://localhost",
    "http://localhost:3000",
    "http://localhost:8080",
]

app.add_middleware(
    CORSMiddleware,
    allow_origins=origins,
    allow_credentials=True,
    allow_methods=["*"],
    allow_headers=["*"],
)


@app.get("/", tags=["Root"])
def root():
    return {"mensaje": "API de AFed activa"}


app.include_router(experiments.router, prefix="/api/experiments", tags=["Experimentos"])


@app.get("/health", tags=["Health Check"])
async def health_check():
    return {"status": "ok", "out_dir": settings.OUT_DIR}
