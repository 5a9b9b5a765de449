from dataclasses import dataclass, field
from typing import List, Literal

import numpy as np

HiddenActivation = Literal["relu", "leaky_relu"]
OutputActivation = Literal["identity", "softmax", "sigmoid"]
OptimizerKind = Literal["adam", "rmsprop", "sgd"]


# Un Tensor2 es un np.ndarray float64 de forma (rows, cols), fila mayor.
@dataclass(eq=False)
class Mlp:
    """
    Red densa. weights[i] tiene forma (widths[i], widths[i+1]); biases[i] forma (widths[i+1],).
    """

    widths: List[int]
    weights: List[np.ndarray]
    biases: List[np.ndarray]
    hidden_activation: HiddenActivation = "relu"
    output_activation: OutputActivation = "identity"
    leaky_slope: float = 0.2

    @property
    def depth(self) -> int:
        return len(self.weights)

    @property
    def input_dim(self) -> int:
        return self.widths[0]

    @property
    def output_dim(self) -> int:
        return self.widths[-1]

    def params(self) -> List[np.ndarray]:
        """Orden documentado: capa por capa, peso y luego sesgo."""
        out: List[np.ndarray] = []
        for w, b in zip(self.weights, self.biases):
            out.append(w)
            out.append(b)
        return out

    def with_params(self, params: List[np.ndarray]) -> "Mlp":
        return Mlp(
            widths=list(self.widths),
            weights=[np.array(p, dtype=np.float64) for p in params[0::2]],
            biases=[np.array(p, dtype=np.float64) for p in params[1::2]],
            hidden_activation=self.hidden_activation,
            output_activation=self.output_activation,
            leaky_slope=self.leaky_slope,
        )

    def copy(self) -> "Mlp":
        return self.with_params(self.params())

    @property
    def n_params(self) -> int:
        return int(sum(p.size for p in self.params()))


@dataclass(eq=False)
class MlpGrads:
    """Gradientes con las mismas formas que los parámetros, más el gradiente de la entrada."""

    weights: List[np.ndarray]
    biases: List[np.ndarray]
    input: np.ndarray

    def params(self) -> List[np.ndarray]:
        out: List[np.ndarray] = []
        for w, b in zip(self.weights, self.biases):
            out.append(w)
            out.append(b)
        return out


@dataclass(eq=False)
class OptState:
    kind: OptimizerKind
    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    rho: float = 0.99
    eps: float = 1e-8
    step: int = 0
    m: List[np.ndarray] = field(default_factory=list)
    v: List[np.ndarray] = field(default_factory=list)
