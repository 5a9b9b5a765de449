import json
from pathlib import Path
from typing import List, Literal, Optional, Sequence, Tuple, Union

import numpy as np

from config import get_logger
from exceptions import DataError, ShapeError
from models.experiment_model import NetworkBlock
from models.federation_model import FederationState
from models.metric_model import MetricRow
from models.network_model import (
    N_ATTRIBUTES,
    Classifier,
    CondDiscriminator,
    CondGenerator,
)
from services import nn_service

logger = get_logger(__name__)

CHECKPOINT_VERSION = 1

GanLoss = Literal["nonsaturating", "saturating"]


# --- Construcción de las cinco redes ---


def build_classifier(input_dim: int, block: NetworkBlock, rng: np.random.Generator) -> Classifier:
    """E: MLP m → p; h^y y h^a: dos capas densas p → 32 → 2 con softmax."""
    p = block.latent_dim
    extractor = nn_service.init_mlp([input_dim, *block.extractor_hidden, p], rng)
    label_head = nn_service.init_mlp(
        [p, block.head_hidden, 2], rng, output_activation="softmax"
    )
    attribute_head = nn_service.init_mlp(
        [p, block.head_hidden, N_ATTRIBUTES], rng, output_activation="softmax"
    )
    return Classifier(extractor=extractor, label_head=label_head, attribute_head=attribute_head)


def build_generator(block: NetworkBlock, rng: np.random.Generator) -> CondGenerator:
    net = nn_service.init_mlp(
        [block.noise_dim + N_ATTRIBUTES, *block.generator_hidden, block.latent_dim], rng
    )
    return CondGenerator(net=net, noise_dim=block.noise_dim)


def build_discriminator(block: NetworkBlock, rng: np.random.Generator) -> CondDiscriminator:
    in_dim = block.latent_dim + (N_ATTRIBUTES if block.conditional_discriminator else 0)
    net = nn_service.init_mlp(
        [in_dim, *block.discriminator_hidden, 1],
        rng,
        hidden_activation="leaky_relu",
        output_activation="sigmoid",
    )
    return CondDiscriminator(net=net, conditional=block.conditional_discriminator)


# --- Semántica forward ---


def one_hot(a: np.ndarray, k: int = N_ATTRIBUTES) -> np.ndarray:
    a = np.asarray(a).astype(np.int64).reshape(-1)
    if np.any((a < 0) | (a >= k)):
        raise DataError(f"Atributo sensible fuera de {{0, ..., {k - 1}}}")
    out = np.zeros((a.shape[0], k))
    out[np.arange(a.shape[0]), a] = 1.0
    return out


def extract(c: Classifier, x: np.ndarray) -> np.ndarray:
    return nn_service.forward(c.extractor, x)


def predict_y(c: Classifier, z: np.ndarray) -> np.ndarray:
    return nn_service.forward(c.label_head, z)


def predict_a(c: Classifier, z: np.ndarray) -> np.ndarray:
    return nn_service.forward(c.attribute_head, z)


def positive_proba(c: Classifier, x: np.ndarray) -> np.ndarray:
    """f(x) = h^y(E(x))[:, 1]."""
    return predict_y(c, extract(c, x))[:, 1]


def predict_labels(c: Classifier, x: np.ndarray) -> np.ndarray:
    return (positive_proba(c, x) >= 0.5).astype(np.int64)


def sample_noise(g: CondGenerator, n: int, rng: np.random.Generator) -> np.ndarray:
    return rng.standard_normal((n, g.noise_dim))


def generator_input(g: CondGenerator, a: np.ndarray, noise: np.ndarray) -> np.ndarray:
    """Disposición fija: [ε ∥ one-hot(a)]."""
    noise = np.asarray(noise, dtype=np.float64)
    enc = one_hot(a)
    if noise.shape != (enc.shape[0], g.noise_dim):
        raise ShapeError(f"Ruido de forma {noise.shape}, se esperaba {(enc.shape[0], g.noise_dim)}")
    return np.concatenate([noise, enc], axis=1)


def generate(
    g: CondGenerator,
    a: np.ndarray,
    seed: Optional[int] = None,
    *,
    rng: Optional[np.random.Generator] = None,
    noise: Optional[np.ndarray] = None,
) -> np.ndarray:
    """z_f = G(ε, a). Misma semilla y mismo a producen la misma salida."""
    a = np.asarray(a).reshape(-1)
    if noise is None:
        rng = rng if rng is not None else np.random.default_rng(seed)
        noise = sample_noise(g, a.shape[0], rng)
    return nn_service.forward(g.net, generator_input(g, a, noise))


def discriminator_input(d: CondDiscriminator, z: np.ndarray, a: np.ndarray) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64)
    if not d.conditional:
        return z
    return np.concatenate([z, one_hot(a)], axis=1)


def discriminate(d: CondDiscriminator, z: np.ndarray, a: np.ndarray) -> np.ndarray:
    return nn_service.forward(d.net, discriminator_input(d, z, a))[:, 0]


# --- Pérdidas del GAN ---


def discriminator_loss(
    p_real: np.ndarray, p_fake: np.ndarray, mode: GanLoss = "nonsaturating"
) -> Tuple[float, np.ndarray, np.ndarray]:
    """
    J3. Devuelve (pérdida, dL/dlogits reales, dL/dlogits falsos), columnas (n, 1).
    nonsaturating: BCE con D→1 en reales y D→0 en falsos.
    saturating: E[log(1 − D(real))] + E[log D(fake)], orientación invertida.
    """
    p_real = np.asarray(p_real, dtype=np.float64).reshape(-1, 1)
    p_fake = np.asarray(p_fake, dtype=np.float64).reshape(-1, 1)
    if mode == "nonsaturating":
        loss_r, g_r = nn_service.binary_cross_entropy(p_real, np.ones(p_real.shape[0]))
        loss_f, g_f = nn_service.binary_cross_entropy(p_fake, np.zeros(p_fake.shape[0]))
        return loss_r + loss_f, g_r, g_f
    eps = nn_service.PROB_EPS
    loss = float(
        np.mean(np.log(np.maximum(1.0 - p_real, eps))) + np.mean(np.log(np.maximum(p_fake, eps)))
    )
    return loss, -p_real / p_real.shape[0], (1.0 - p_fake) / p_fake.shape[0]


def generator_loss(p_fake: np.ndarray, mode: GanLoss = "nonsaturating") -> Tuple[float, np.ndarray]:
    """J4. nonsaturating: −E[log D(fake)]; saturating: E[log(1 − D(fake))]."""
    p_fake = np.asarray(p_fake, dtype=np.float64).reshape(-1, 1)
    n = p_fake.shape[0]
    eps = nn_service.PROB_EPS
    if mode == "nonsaturating":
        return float(-np.mean(np.log(np.maximum(p_fake, eps)))), (p_fake - 1.0) / n
    return float(np.mean(np.log(np.maximum(1.0 - p_fake, eps)))), -p_fake / n


# --- Checkpoints ---


def state_to_dict(state: FederationState) -> dict:
    c = state.classifier
    bundles = {
        "extractor": nn_service.mlp_to_dict(c.extractor),
        "label_head": nn_service.mlp_to_dict(c.label_head),
        "attribute_head": nn_service.mlp_to_dict(c.attribute_head),
    }
    generator = None
    if state.generator is not None:
        generator = {
            "net": nn_service.mlp_to_dict(state.generator.net),
            "noise_dim": state.generator.noise_dim,
        }
    discriminator = None
    if state.discriminator is not None:
        discriminator = {
            "net": nn_service.mlp_to_dict(state.discriminator.net),
            "conditional": state.discriminator.conditional,
        }
    return {
        "version": CHECKPOINT_VERSION,
        "round_index": state.round_index,
        "seed": state.seed,
        "classifier": bundles,
        "generator": generator,
        "discriminator": discriminator,
    }


def state_from_dict(data: dict) -> FederationState:
    if data.get("version") != CHECKPOINT_VERSION:
        raise DataError(f"Versión de checkpoint no soportada: {data.get('version')}")
    bundles = data["classifier"]
    classifier = Classifier(
        extractor=nn_service.mlp_from_dict(bundles["extractor"]),
        label_head=nn_service.mlp_from_dict(bundles["label_head"]),
        attribute_head=nn_service.mlp_from_dict(bundles["attribute_head"]),
    )
    generator = None
    if data.get("generator"):
        generator = CondGenerator(
            net=nn_service.mlp_from_dict(data["generator"]["net"]),
            noise_dim=int(data["generator"]["noise_dim"]),
        )
    discriminator = None
    if data.get("discriminator"):
        discriminator = CondDiscriminator(
            net=nn_service.mlp_from_dict(data["discriminator"]["net"]),
            conditional=bool(data["discriminator"]["conditional"]),
        )
    return FederationState(
        classifier=classifier,
        generator=generator,
        discriminator=discriminator,
        round_index=int(data["round_index"]),
        seed=int(data["seed"]),
    )


def save_checkpoint(
    path: Union[str, Path], state: FederationState, trace: Optional[Sequence[MetricRow]] = None
) -> Path:
    """Guarda el estado y, si se pasa, la traza hasta esa ronda para poder reanudar."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    data = state_to_dict(state)
    if trace is not None:
        data["trace"] = [row.as_record() for row in trace]
    path.write_text(json.dumps(data, sort_keys=True))
    logger.debug(f"Checkpoint guardado en {path} (ronda {state.round_index})")
    return path


def read_checkpoint(path: Union[str, Path]) -> Tuple[FederationState, List[MetricRow]]:
    path = Path(path)
    try:
        data = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as e:
        raise DataError(f"No se pudo leer el checkpoint {path}: {e}")
    state = state_from_dict(data)
    trace = [MetricRow.model_validate(record) for record in data.get("trace") or []]
    return state, trace


def load_checkpoint(path: Union[str, Path]) -> FederationState:
    return read_checkpoint(path)[0]
