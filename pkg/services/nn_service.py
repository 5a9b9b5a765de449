import base64
from typing import Dict, List, Literal, Optional, Sequence, Tuple

import numpy as np

from config import get_logger
from exceptions import DataError, NumericalError, ShapeError
from models.nn_model import (
    HiddenActivation,
    Mlp,
    MlpGrads,
    OptimizerKind,
    OptState,
    OutputActivation,
)

logger = get_logger(__name__)

# Límite inferior de probabilidad dentro de log
PROB_EPS = 1e-12

FORMAT_VERSION = 1
INIT_BIAS = 0.01


# --- Construcción ---


def init_mlp(
    widths: Sequence[int],
    rng: np.random.Generator,
    hidden_activation: HiddenActivation = "relu",
    output_activation: OutputActivation = "identity",
    leaky_slope: float = 0.2,
) -> Mlp:
    """
    Inicialización tipo He (escalada por fan-in). Los sesgos arrancan en INIT_BIAS para que
    ninguna preactivación quede exactamente en el quiebre de la ReLU.
    """
    widths = [int(w) for w in widths]
    if len(widths) < 2 or any(w < 1 for w in widths):
        raise ShapeError(f"Anchos de capa inválidos: {widths}")
    gain = 2.0 if hidden_activation == "relu" else 2.0 / (1.0 + leaky_slope**2)
    weights = []
    biases = []
    for fan_in, fan_out in zip(widths[:-1], widths[1:]):
        weights.append(rng.normal(0.0, np.sqrt(gain / fan_in), size=(fan_in, fan_out)))
        biases.append(np.full(fan_out, INIT_BIAS))
    return Mlp(
        widths=widths,
        weights=weights,
        biases=biases,
        hidden_activation=hidden_activation,
        output_activation=output_activation,
        leaky_slope=leaky_slope,
    )


def zero_mlp(
    widths: Sequence[int],
    hidden_activation: HiddenActivation = "relu",
    output_activation: OutputActivation = "identity",
) -> Mlp:
    widths = [int(w) for w in widths]
    return Mlp(
        widths=widths,
        weights=[np.zeros((i, o)) for i, o in zip(widths[:-1], widths[1:])],
        biases=[np.zeros(o) for o in widths[1:]],
        hidden_activation=hidden_activation,
        output_activation=output_activation,
    )


# --- Activaciones ---


def softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x, dtype=np.float64)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def _hidden(net: Mlp, u: np.ndarray) -> np.ndarray:
    if net.hidden_activation == "relu":
        return np.maximum(u, 0.0)
    return np.where(u > 0, u, net.leaky_slope * u)


def _hidden_deriv(net: Mlp, u: np.ndarray) -> np.ndarray:
    if net.hidden_activation == "relu":
        return (u > 0).astype(np.float64)
    return np.where(u > 0, 1.0, net.leaky_slope)


def _output(net: Mlp, logits: np.ndarray) -> np.ndarray:
    if net.output_activation == "softmax":
        return softmax(logits)
    if net.output_activation == "sigmoid":
        return sigmoid(logits)
    return logits


def check_finite(arr: np.ndarray, what: str, round_index: int = -1) -> None:
    if not np.all(np.isfinite(arr)):
        raise NumericalError(f"Valores no finitos en {what}", round_index=round_index)


# --- Forward / backward ---


def _as_batch(net: Mlp, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != net.input_dim:
        raise ShapeError(
            f"Entrada de forma {x.shape} incompatible con la primera capa ({net.input_dim})"
        )
    return x


def forward_cache(net: Mlp, x: np.ndarray) -> Tuple[np.ndarray, Dict[str, list]]:
    """Forward que guarda entradas de cada capa y preactivaciones."""
    h = _as_batch(net, x)
    inputs: List[np.ndarray] = []
    pre: List[np.ndarray] = []
    for i, (w, b) in enumerate(zip(net.weights, net.biases)):
        inputs.append(h)
        u = h @ w + b
        pre.append(u)
        h = _hidden(net, u) if i < net.depth - 1 else u
    out = _output(net, h)
    return out, {"inputs": inputs, "pre": pre, "out": [out]}


def forward(net: Mlp, x: np.ndarray) -> np.ndarray:
    return forward_cache(net, x)[0]


def _output_backward(net: Mlp, out: np.ndarray, upstream: np.ndarray) -> np.ndarray:
    if net.output_activation == "softmax":
        return out * (upstream - (upstream * out).sum(axis=1, keepdims=True))
    if net.output_activation == "sigmoid":
        return upstream * out * (1.0 - out)
    return upstream


def backward(
    net: Mlp,
    x: np.ndarray,
    upstream_grad: np.ndarray,
    wrt: Literal["output", "logits"] = "output",
) -> MlpGrads:
    """
    Backprop exacto. `upstream_grad` es dL/d(salida activada) o, con wrt="logits",
    dL/d(preactivación de la última capa) (así lo devuelve cross_entropy).
    """
    out, cache = forward_cache(net, x)
    upstream_grad = np.asarray(upstream_grad, dtype=np.float64)
    if upstream_grad.shape != out.shape:
        raise ShapeError(
            f"Gradiente de forma {upstream_grad.shape}, se esperaba {out.shape}"
        )
    g = upstream_grad if wrt == "logits" else _output_backward(net, out, upstream_grad)

    grads_w: List[np.ndarray] = [np.empty(0)] * net.depth
    grads_b: List[np.ndarray] = [np.empty(0)] * net.depth
    for i in range(net.depth - 1, -1, -1):
        h_in = cache["inputs"][i]
        grads_w[i] = h_in.T @ g
        grads_b[i] = g.sum(axis=0)
        gh = g @ net.weights[i].T
        if i > 0:
            g = gh * _hidden_deriv(net, cache["pre"][i - 1])
        else:
            grad_input = gh
    return MlpGrads(weights=grads_w, biases=grads_b, input=grad_input)


def score_column(net: Mlp, positive_class: int = 1) -> int:
    return positive_class if net.output_dim > 1 else 0


def score(net: Mlp, x: np.ndarray, positive_class: int = 1) -> np.ndarray:
    """Salida escalar f(x) por fila (probabilidad de la clase positiva en softmax)."""
    return forward(net, x)[:, score_column(net, positive_class)]


def _tangent_forward(net: Mlp, x: np.ndarray, direction: np.ndarray):
    h = _as_batch(net, x)
    hd = np.asarray(direction, dtype=np.float64)
    if hd.shape != h.shape:
        raise ShapeError(f"Dirección de forma {hd.shape}, se esperaba {h.shape}")
    inputs, tangents, pre = [], [], []
    for i, (w, b) in enumerate(zip(net.weights, net.biases)):
        inputs.append(h)
        tangents.append(hd)
        u = h @ w + b
        ud = hd @ w
        pre.append(u)
        if i < net.depth - 1:
            d = _hidden_deriv(net, u)
            h, hd = _hidden(net, u), d * ud
        else:
            h, hd = u, ud
    return h, hd, inputs, tangents, pre


def jvp(net: Mlp, x: np.ndarray, direction: np.ndarray, positive_class: int = 1) -> np.ndarray:
    """Derivada direccional por fila: <∇_x f(x_i), direction_i>."""
    logits, dlogits, _, _, _ = _tangent_forward(net, x, direction)
    c = score_column(net, positive_class)
    return _score_tangent(net, logits, dlogits, c)


def _score_tangent(net: Mlp, logits: np.ndarray, dlogits: np.ndarray, c: int) -> np.ndarray:
    if net.output_activation == "softmax":
        p = softmax(logits)
        mu = (p * dlogits).sum(axis=1)
        return p[:, c] * (dlogits[:, c] - mu)
    if net.output_activation == "sigmoid":
        s = sigmoid(logits[:, c])
        return s * (1.0 - s) * dlogits[:, c]
    return dlogits[:, c]


def jvp_backward(
    net: Mlp,
    x: np.ndarray,
    direction: np.ndarray,
    upstream: np.ndarray,
    positive_class: int = 1,
) -> Tuple[np.ndarray, MlpGrads, np.ndarray]:
    """
    Gradiente exacto de L = Σ_i upstream_i · <∇f(x_i), direction_i> respecto a los
    parámetros, a x y a la dirección. Las activaciones ocultas son lineales a trozos
    (segunda derivada nula), así que basta propagar primal y tangente.
    Devuelve (valores jvp, grads con input = dL/dx, dL/d(direction)).
    """
    logits, dlogits, inputs, tangents, pre = _tangent_forward(net, x, direction)
    c = score_column(net, positive_class)
    w = np.asarray(upstream, dtype=np.float64).reshape(-1)
    n, k = logits.shape
    if w.shape[0] != n:
        raise ShapeError(f"upstream de longitud {w.shape[0]}, se esperaban {n} filas")

    values = _score_tangent(net, logits, dlogits, c)
    g = np.zeros((n, k))
    gd = np.zeros((n, k))
    if net.output_activation == "softmax":
        p = softmax(logits)
        mu = (p * dlogits).sum(axis=1, keepdims=True)
        pc = p[:, [c]]
        onehot = np.zeros(k)
        onehot[c] = 1.0
        gd = w[:, None] * pc * (onehot[None, :] - p)
        g = w[:, None] * pc * (
            (onehot[None, :] - p) * (dlogits[:, [c]] - mu) - p * (dlogits - mu)
        )
    elif net.output_activation == "sigmoid":
        s = sigmoid(logits[:, c])
        gd[:, c] = w * s * (1.0 - s)
        g[:, c] = w * s * (1.0 - s) * (1.0 - 2.0 * s) * dlogits[:, c]
    else:
        gd[:, c] = w

    grads_w: List[np.ndarray] = [np.empty(0)] * net.depth
    grads_b: List[np.ndarray] = [np.empty(0)] * net.depth
    for i in range(net.depth - 1, -1, -1):
        grads_w[i] = inputs[i].T @ g + tangents[i].T @ gd
        grads_b[i] = g.sum(axis=0)
        gh = g @ net.weights[i].T
        ghd = gd @ net.weights[i].T
        if i > 0:
            deriv = _hidden_deriv(net, pre[i - 1])
            g, gd = gh * deriv, ghd * deriv
        else:
            grad_x, grad_dir = gh, ghd
    return values, MlpGrads(weights=grads_w, biases=grads_b, input=grad_x), grad_dir


# --- Pérdidas ---


def cross_entropy(probs: np.ndarray, labels: np.ndarray) -> Tuple[float, np.ndarray]:
    """
    Entropía cruzada media. Devuelve (pérdida, gradiente respecto a los logits de softmax).
    """
    probs = np.asarray(probs, dtype=np.float64)
    labels = np.asarray(labels).astype(np.int64).reshape(-1)
    n, k = probs.shape
    if labels.shape[0] != n:
        raise ShapeError(f"{labels.shape[0]} etiquetas para {n} filas")
    if np.any(labels < 0) or np.any(labels >= k):
        raise DataError(f"Índice de etiqueta fuera de rango [0, {k})")
    picked = probs[np.arange(n), labels]
    loss = float(-np.mean(np.log(np.maximum(picked, PROB_EPS))))
    grad = probs.copy()
    grad[np.arange(n), labels] -= 1.0
    return loss, grad / n


def binary_cross_entropy(probs: np.ndarray, targets: np.ndarray) -> Tuple[float, np.ndarray]:
    """BCE media para salidas sigmoid; gradiente respecto a los logits."""
    probs = np.asarray(probs, dtype=np.float64)
    shape = probs.shape
    p = probs.reshape(-1)
    t = np.asarray(targets, dtype=np.float64).reshape(-1)
    if t.shape != p.shape:
        raise ShapeError(f"{t.shape[0]} objetivos para {p.shape[0]} salidas")
    loss = float(
        -np.mean(t * np.log(np.maximum(p, PROB_EPS)) + (1 - t) * np.log(np.maximum(1 - p, PROB_EPS)))
    )
    return loss, ((p - t) / p.shape[0]).reshape(shape)


# --- Optimizadores ---


def init_opt_state(kind: OptimizerKind, lr: float, **hyper) -> OptState:
    return OptState(kind=kind, lr=lr, **hyper)


def opt_step(
    params: List[np.ndarray], grads: List[np.ndarray], state: OptState
) -> Tuple[List[np.ndarray], OptState]:
    """Un paso del optimizador. No muta las entradas."""
    if len(params) != len(grads):
        raise ShapeError(f"{len(params)} parámetros y {len(grads)} gradientes")
    for p, g in zip(params, grads):
        if p.shape != g.shape:
            raise ShapeError(f"Parámetro {p.shape} y gradiente {g.shape} no coinciden")

    m = state.m or [np.zeros_like(p) for p in params]
    v = state.v or [np.zeros_like(p) for p in params]
    step = state.step + 1
    new_params, new_m, new_v = [], [], []

    if state.kind == "sgd":
        new_params = [p - state.lr * g for p, g in zip(params, grads)]
        new_m, new_v = m, v
    elif state.kind == "adam":
        c1 = 1.0 - state.beta1**step
        c2 = 1.0 - state.beta2**step
        for p, g, mi, vi in zip(params, grads, m, v):
            mi = state.beta1 * mi + (1.0 - state.beta1) * g
            vi = state.beta2 * vi + (1.0 - state.beta2) * g * g
            new_params.append(p - state.lr * (mi / c1) / (np.sqrt(vi / c2) + state.eps))
            new_m.append(mi)
            new_v.append(vi)
    elif state.kind == "rmsprop":
        for p, g, vi in zip(params, grads, v):
            vi = state.rho * vi + (1.0 - state.rho) * g * g
            new_params.append(p - state.lr * g / (np.sqrt(vi) + state.eps))
            new_v.append(vi)
        new_m = m
    else:
        raise ValueError(f"Optimizador desconocido: {state.kind}")

    new_state = OptState(
        kind=state.kind,
        lr=state.lr,
        beta1=state.beta1,
        beta2=state.beta2,
        rho=state.rho,
        eps=state.eps,
        step=step,
        m=new_m,
        v=new_v,
    )
    return new_params, new_state


def step_mlp(net: Mlp, grads: MlpGrads, state: OptState) -> Tuple[Mlp, OptState]:
    params, state = opt_step(net.params(), grads.params(), state)
    return net.with_params(params), state


# --- Serialización ---


def flatten_params(net: Mlp) -> np.ndarray:
    """Vector plano: capa por capa, peso (fila mayor) y luego sesgo."""
    return np.concatenate([p.reshape(-1) for p in net.params()])


def unflatten_params(template: Mlp, flat: np.ndarray) -> Mlp:
    flat = np.asarray(flat, dtype=np.float64).reshape(-1)
    if flat.size != template.n_params:
        raise ShapeError(f"Vector de {flat.size} valores, la red tiene {template.n_params}")
    params, offset = [], 0
    for p in template.params():
        params.append(flat[offset : offset + p.size].reshape(p.shape))
        offset += p.size
    return template.with_params(params)


def params_to_bytes(net: Mlp) -> bytes:
    return flatten_params(net).astype("<f8").tobytes()


def params_from_bytes(template: Mlp, raw: bytes) -> Mlp:
    return unflatten_params(template, np.frombuffer(raw, dtype="<f8"))


def mlp_to_dict(net: Mlp) -> dict:
    return {
        "version": FORMAT_VERSION,
        "widths": list(net.widths),
        "hidden_activation": net.hidden_activation,
        "output_activation": net.output_activation,
        "leaky_slope": net.leaky_slope,
        # base64 de float64 little-endian: exacto bit a bit
        "params": base64.b64encode(params_to_bytes(net)).decode("ascii"),
    }


def mlp_from_dict(data: dict) -> Mlp:
    version = data.get("version")
    if version != FORMAT_VERSION:
        raise DataError(f"Versión de parámetros no soportada: {version}")
    template = zero_mlp(
        data["widths"],
        hidden_activation=data["hidden_activation"],
        output_activation=data["output_activation"],
    )
    template.leaky_slope = float(data.get("leaky_slope", 0.2))
    return params_from_bytes(template, base64.b64decode(data["params"]))


def same_structure(a: Mlp, b: Mlp) -> bool:
    return (
        list(a.widths) == list(b.widths)
        and a.hidden_activation == b.hidden_activation
        and a.output_activation == b.output_activation
    )


def weighted_average(nets: List[Mlp], weights: Sequence[float], what: Optional[str] = None) -> Mlp:
    """Σ ω_k θ_k sumando en el orden dado."""
    if not nets:
        raise ShapeError("No hay redes que promediar")
    ref = nets[0]
    for net in nets[1:]:
        if not same_structure(ref, net):
            raise ShapeError(f"Estructuras incompatibles al agregar {what or 'red'}")
    averaged = []
    for idx, p in enumerate(ref.params()):
        acc = np.zeros_like(p)
        for net, w in zip(nets, weights):
            acc = acc + w * net.params()[idx]
        averaged.append(acc)
    return ref.with_params(averaged)
