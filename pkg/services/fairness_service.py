from typing import Literal, Optional

import numpy as np
from scipy.integrate import trapezoid
from sklearn.metrics import roc_auc_score

from config import get_logger
from exceptions import EmptyGroupError, ProbeCapacityError, ShapeError
from models.fairness_model import (
    DpReport,
    GeneratorDiagnostics,
    IntegralCheck,
    MixBatch,
    PenaltyResult,
    ProbeCapacity,
)
from models.network_model import Classifier
from models.nn_model import Mlp
from services import nn_service

logger = get_logger(__name__)

PenaltyMode = Literal["signed", "absolute"]


def dp_gap(predictions: np.ndarray, attributes: np.ndarray) -> DpReport:
    """
    ΔDP = |E[ŷ | a=0] − E[ŷ | a=1]|. Acepta etiquetas duras o probabilidades de la clase positiva.
    """
    pred = np.asarray(predictions, dtype=np.float64).reshape(-1)
    a = np.asarray(attributes).reshape(-1)
    if pred.shape != a.shape:
        raise ShapeError(f"{pred.shape[0]} predicciones para {a.shape[0]} atributos")
    mask0, mask1 = a == 0, a == 1
    n0, n1 = int(mask0.sum()), int(mask1.sum())
    if n0 == 0 or n1 == 0:
        raise EmptyGroupError(f"Grupo sensible vacío (n0={n0}, n1={n1}); ΔDP no está definido")
    g0 = float(pred[mask0].mean())
    g1 = float(pred[mask1].mean())
    return DpReport(gamma0=g0, gamma1=g1, gap=abs(g0 - g1), count0=n0, count1=n1)


def mix(
    z_t: np.ndarray,
    a_t: np.ndarray,
    z_f: np.ndarray,
    a_f: np.ndarray,
    alpha: float = 1.0,
    seed: Optional[int] = None,
    *,
    rng: Optional[np.random.Generator] = None,
    t: Optional[np.ndarray] = None,
) -> MixBatch:
    """z̄ = t·z_t + (1−t)·z_f con t ~ Beta(α, α) por fila (o `t` dado)."""
    z_t = np.asarray(z_t, dtype=np.float64)
    z_f = np.asarray(z_f, dtype=np.float64)
    if z_t.shape != z_f.shape:
        raise ShapeError(f"z_t {z_t.shape} y z_f {z_f.shape} deben coincidir")
    if alpha <= 0:
        raise ValueError("alpha debe ser > 0")
    n = z_t.shape[0]
    if t is None:
        rng = rng if rng is not None else np.random.default_rng(seed)
        t = rng.beta(alpha, alpha, size=n)
    t = np.broadcast_to(np.asarray(t, dtype=np.float64), (n,)).copy()
    a_t = np.asarray(a_t, dtype=np.float64).reshape(-1)
    a_f = np.asarray(a_f, dtype=np.float64).reshape(-1)
    return MixBatch(
        z_t=z_t,
        a_t=a_t,
        z_f=z_f,
        a_f=a_f,
        t=t,
        z_bar=t[:, None] * z_t + (1.0 - t[:, None]) * z_f,
        a_bar=t * a_t + (1.0 - t) * a_f,
    )


def fairness_penalty(
    c: Classifier,
    batch: MixBatch,
    mode: PenaltyMode = "signed",
    x_t: Optional[np.ndarray] = None,
) -> PenaltyResult:
    """
    Penalización mixup: media del producto interno <∇_z f(z̄), z_t − z_f>, con f la
    probabilidad positiva de h^y. Gradientes exactos hacia θ^y, z_t y z_f; si se pasa x_t,
    también hacia θ^E a través de z_t. En modo "absolute" se toma |media|.
    """
    n = len(batch)
    if n == 0:
        raise ShapeError("Lote de mezcla vacío: la penalización no está definida")
    direction = batch.z_t - batch.z_f
    values = nn_service.jvp(c.label_head, batch.z_bar, direction)
    mean = float(values.mean())
    if mode == "absolute":
        value = abs(mean)
        weight = np.sign(mean) / n
    else:
        value = mean
        weight = 1.0 / n
    _, head_grads, grad_dir = nn_service.jvp_backward(
        c.label_head, batch.z_bar, direction, np.full(n, weight)
    )
    grad_zbar = head_grads.input
    grad_z_t = batch.t[:, None] * grad_zbar + grad_dir
    grad_z_f = (1.0 - batch.t[:, None]) * grad_zbar - grad_dir
    extractor_grads = None
    if x_t is not None:
        extractor_grads = nn_service.backward(c.extractor, x_t, grad_z_t)
    return PenaltyResult(
        value=value,
        row_values=values,
        label_head_grads=head_grads,
        grad_z_t=grad_z_t,
        grad_z_f=grad_z_f,
        extractor_grads=extractor_grads,
    )


def dp_integral_check(
    f: Mlp, z0: np.ndarray, z1: np.ndarray, grid: int = 256, positive_class: int = 1
) -> IntegralCheck:
    """
    Compara ΔDP = |E f(z0) − E f(z1)| con |∫₀¹ d/dt E[f(t·z0 + (1−t)·z1)] dt|, derivada
    analítica y regla del trapecio. Con grupos de igual tamaño se emparejan por índice;
    si no, se usan todos los pares.
    """
    if grid < 64:
        raise ValueError("grid debe ser >= 64")
    z0 = np.asarray(z0, dtype=np.float64)
    z1 = np.asarray(z1, dtype=np.float64)
    if z0.shape[0] == 0 or z1.shape[0] == 0:
        raise EmptyGroupError("Ambos grupos deben tener muestras")
    lhs = abs(
        float(nn_service.score(f, z0, positive_class).mean())
        - float(nn_service.score(f, z1, positive_class).mean())
    )
    if z0.shape[0] == z1.shape[0]:
        p0, p1 = z0, z1
    else:
        i0, i1 = np.meshgrid(np.arange(z0.shape[0]), np.arange(z1.shape[0]), indexing="ij")
        p0, p1 = z0[i0.ravel()], z1[i1.ravel()]
    direction = p0 - p1
    ts = np.linspace(0.0, 1.0, grid)
    derivs = np.array(
        [
            nn_service.jvp(f, t * p0 + (1.0 - t) * p1, direction, positive_class).mean()
            for t in ts
        ]
    )
    rhs = abs(float(trapezoid(derivs, ts)))
    return IntegralCheck(lhs=lhs, rhs=rhs, grid=grid)


# --- Diagnósticos de divergencia ---


def _validate_capacity(capacity: ProbeCapacity) -> None:
    if capacity.hidden < 1 or capacity.depth < 1 or capacity.steps < 1 or capacity.lr <= 0:
        raise ProbeCapacityError(f"Capacidad de sonda inválida: {capacity.model_dump()}")
    if not 0.0 < capacity.holdout_fraction < 1.0:
        raise ProbeCapacityError("holdout_fraction debe estar en (0, 1)")


def _train_probe(
    x: np.ndarray, labels: np.ndarray, capacity: ProbeCapacity, rng: np.random.Generator
) -> Mlp:
    widths = [x.shape[1], *([capacity.hidden] * (capacity.depth - 1)), 2]
    net = nn_service.init_mlp(widths, rng, output_activation="softmax")
    state = nn_service.init_opt_state("adam", capacity.lr)
    for _ in range(capacity.steps):
        probs = nn_service.forward(net, x)
        _, grad = nn_service.cross_entropy(probs, labels)
        grads = nn_service.backward(net, x, grad, wrt="logits")
        net, state = nn_service.step_mlp(net, grads, state)
    return net


def _balanced_probe_split(ds_a: np.ndarray, ds_b: np.ndarray, capacity: ProbeCapacity, rng):
    """Submuestrea al tamaño menor y separa train/holdout por dominio."""
    n = min(ds_a.shape[0], ds_b.shape[0])
    ia = rng.permutation(ds_a.shape[0])[:n]
    ib = rng.permutation(ds_b.shape[0])[:n]
    n_hold = max(1, int(round(capacity.holdout_fraction * n)))
    if n - n_hold < 1:
        raise ProbeCapacityError("Muy pocas muestras para separar entrenamiento y holdout")
    x_train = np.concatenate([ds_a[ia[n_hold:]], ds_b[ib[n_hold:]]])
    y_train = np.concatenate([np.zeros(n - n_hold), np.ones(n - n_hold)]).astype(np.int64)
    x_hold = np.concatenate([ds_a[ia[:n_hold]], ds_b[ib[:n_hold]]])
    y_hold = np.concatenate([np.zeros(n_hold), np.ones(n_hold)]).astype(np.int64)
    mean = x_train.mean(axis=0)
    std = np.maximum(x_train.std(axis=0), 1e-8)
    return (x_train - mean) / std, y_train, (x_hold - mean) / std, y_hold


def h_div_proxy(
    ds_a: np.ndarray,
    ds_b: np.ndarray,
    capacity: Optional[ProbeCapacity] = None,
    seed: int = 0,
) -> float:
    """
    Estimación de la H-divergencia: 2·(2·acc − 1) recortado a [0, 2], con acc la exactitud
    balanceada de un clasificador de dominio sobre un holdout.
    """
    capacity = capacity or ProbeCapacity()
    _validate_capacity(capacity)
    ds_a = np.asarray(ds_a, dtype=np.float64)
    ds_b = np.asarray(ds_b, dtype=np.float64)
    if ds_a.shape[0] == 0 or ds_b.shape[0] == 0:
        raise EmptyGroupError("Ambas muestras deben ser no vacías")
    if ds_a.ndim != 2 or ds_a.shape[1] != ds_b.shape[1]:
        raise ShapeError("Las muestras deben ser matrices con el mismo número de columnas")
    rng = np.random.default_rng(seed)
    x_train, y_train, x_hold, y_hold = _balanced_probe_split(ds_a, ds_b, capacity, rng)
    probe = _train_probe(x_train, y_train, capacity, rng)
    pred = np.argmax(nn_service.forward(probe, x_hold), axis=1)
    acc = float(np.mean(pred == y_hold))
    return float(np.clip(2.0 * (2.0 * acc - 1.0), 0.0, 2.0))


def augment(local: np.ndarray, generated: np.ndarray, ratio: float, seed: int = 0) -> np.ndarray:
    """
    Sustituye una fracción `ratio` de las filas locales por filas generadas; el tamaño no cambia.
    """
    local = np.asarray(local, dtype=np.float64)
    generated = np.asarray(generated, dtype=np.float64)
    if not 0.0 <= ratio <= 1.0:
        raise ValueError(f"ratio debe estar en [0, 1], recibido {ratio}")
    if local.ndim != 2 or generated.ndim != 2 or local.shape[1] != generated.shape[1]:
        raise ShapeError("Las muestras deben ser matrices con el mismo número de columnas")
    n = local.shape[0]
    k = int(round(ratio * n))
    if k > generated.shape[0]:
        raise ShapeError(f"Se piden {k} filas generadas y solo hay {generated.shape[0]}")
    rng = np.random.default_rng(seed)
    keep = rng.permutation(n)[: n - k]
    take = rng.permutation(generated.shape[0])[:k]
    return np.concatenate([local[keep], generated[take]])


def two_sample_auc(
    real: np.ndarray, fake: np.ndarray, capacity: Optional[ProbeCapacity] = None, seed: int = 0
) -> float:
    """AUC en holdout de una sonda entrenada para separar reales (1) de falsos (0)."""
    capacity = capacity or ProbeCapacity()
    _validate_capacity(capacity)
    rng = np.random.default_rng(seed)
    x_train, y_train, x_hold, y_hold = _balanced_probe_split(
        np.asarray(fake, dtype=np.float64), np.asarray(real, dtype=np.float64), capacity, rng
    )
    probe = _train_probe(x_train, y_train, capacity, rng)
    return float(roc_auc_score(y_hold, nn_service.forward(probe, x_hold)[:, 1]))


def _mean_pairwise_distance(z: np.ndarray) -> float:
    if z.shape[0] < 2:
        return 0.0
    sq = (z * z).sum(axis=1)
    d2 = np.maximum(sq[:, None] + sq[None, :] - 2.0 * z @ z.T, 0.0)
    n = z.shape[0]
    return float(np.sqrt(d2).sum() / (n * (n - 1)))


def generator_diagnostics(
    fake: np.ndarray,
    fake_a: np.ndarray,
    real: np.ndarray,
    real_a: np.ndarray,
    attribute_head: Mlp,
) -> GeneratorDiagnostics:
    """
    Diversidad de latentes generados frente a reales. Un generador que solo ve la frontera
    de decisión de h^a tiende a producir muestras "seguras": dispersión baja y entropía
    condicional baja.
    """
    fake = np.asarray(fake, dtype=np.float64)
    real = np.asarray(real, dtype=np.float64)
    fake_a = np.asarray(fake_a).reshape(-1)
    real_a = np.asarray(real_a).reshape(-1)
    spread = float(fake.std(axis=0).mean() / max(real.std(axis=0).mean(), 1e-12))
    pairwise = _mean_pairwise_distance(fake) / max(_mean_pairwise_distance(real), 1e-12)
    probs = nn_service.forward(attribute_head, fake)
    entropy = float(-np.mean(np.sum(probs * np.log(np.maximum(probs, nn_service.PROB_EPS)), axis=1)))
    accuracy = float(np.mean(np.argmax(probs, axis=1) == fake_a))
    per_attr = []
    for a in (0, 1):
        f_a, r_a = fake[fake_a == a], real[real_a == a]
        if f_a.shape[0] == 0 or r_a.shape[0] == 0:
            per_attr.append(float("nan"))
            continue
        per_attr.append(float(f_a.std(axis=0).mean() / max(r_a.std(axis=0).mean(), 1e-12)))
    return GeneratorDiagnostics(
        spread_ratio=spread,
        pairwise_distance_ratio=pairwise,
        attribute_entropy=entropy,
        conditional_accuracy=accuracy,
        per_attribute_spread=per_attr,
    )
