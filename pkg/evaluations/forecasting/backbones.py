"""
Small differentiable forecasting backbones g_theta: (B, L, D) -> (B, H, D).

All heads are channel independent: feature k is mapped by its own weights
(leading axis D), or by one shared set (leading axis 1) when ``individual``
is off.
"""

from dataclasses import dataclass
from typing import Any, Dict, Tuple

import numpy as np

from .errors import ShapeMismatch, UnknownMethod

Grads = Dict[str, np.ndarray]

BACKBONE_KINDS = ("identity", "linear", "dlinear", "mlp")


def _reduce_features(grad: np.ndarray, n_features: int) -> np.ndarray:
    if n_features == 1 and grad.shape[0] != 1:
        return grad.sum(axis=0, keepdims=True)
    return grad


def _expand(w: np.ndarray, D: int) -> np.ndarray:
    return np.broadcast_to(w, (D,) + w.shape[1:])


def _uniform(rng: np.random.Generator, shape: Tuple[int, ...], fan_in: int) -> np.ndarray:
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


def moving_average_matrix(L: int, kernel: int) -> np.ndarray:
    """Row t averages x[t-front .. t+back] with edge replication, front = (kernel-1)//2"""
    if kernel < 1:
        raise ValueError(f"moving-average kernel must be >= 1, got {kernel}")
    front = (kernel - 1) // 2
    back = kernel - 1 - front
    M = np.zeros((L, L))
    for t in range(L):
        for j in range(t - front, t + back + 1):
            M[t, min(max(j, 0), L - 1)] += 1.0 / kernel
    return M


class Backbone:
    kind = "identity"

    def __init__(self, individual: bool = True):
        self.individual = individual
        self.L = None
        self.H = None
        self.D = None

    def allocate(self, D: int, L: int, H: int, rng: np.random.Generator) -> Dict[str, np.ndarray]:
        self.D, self.L, self.H = D, L, H
        return {}

    def _check(self, x: np.ndarray) -> None:
        if x.ndim != 3 or x.shape[1] != self.L or x.shape[2] != self.D:
            raise ShapeMismatch(f"{self.kind} backbone expects (B, {self.L}, {self.D}), got {x.shape}")

    def forward(self, x: np.ndarray, p: Dict[str, np.ndarray]) -> Tuple[np.ndarray, Dict[str, Any]]:
        """ỹ[n] = x̃[min(n, L-1)]: truncate or repeat the last step"""
        self._check(x)
        idx = np.minimum(np.arange(self.H), self.L - 1)
        return x[:, idx, :].copy(), {"idx": idx}

    def backward(self, dy: np.ndarray, p: Dict[str, np.ndarray], cache: Dict[str, Any]) -> Tuple[np.ndarray, Grads]:
        dx = np.zeros((dy.shape[0], self.L, dy.shape[2]))
        np.add.at(dx, (slice(None), cache["idx"], slice(None)), dy)
        return dx, {}

    def describe(self) -> Dict[str, Any]:
        return {"kind": self.kind, "individual": self.individual}


class LinearBackbone(Backbone):
    """ỹ[:, k] = W_k x̃[:, k] + b_k"""

    kind = "linear"

    def allocate(self, D, L, H, rng):
        super().allocate(D, L, H, rng)
        d = D if self.individual else 1
        return {"W": _uniform(rng, (d, H, L), L), "b": _uniform(rng, (d, H), L)}

    @staticmethod
    def _head(x, W, b):
        D = x.shape[2]
        return np.einsum("btk,knt->bnk", x, _expand(W, D)) + _expand(b, D).T[None]

    @staticmethod
    def _head_backward(dy, x, W, b):
        D = x.shape[2]
        grads = {
            "W": _reduce_features(np.einsum("bnk,btk->knt", dy, x), W.shape[0]),
            "b": _reduce_features(dy.sum(axis=0).T, b.shape[0]),
        }
        dx = np.einsum("bnk,knt->btk", dy, _expand(W, D))
        return dx, grads

    def forward(self, x, p):
        self._check(x)
        return self._head(x, p["W"], p["b"]), {"x": x}

    def backward(self, dy, p, cache):
        return self._head_backward(dy, cache["x"], p["W"], p["b"])


class DLinearBackbone(LinearBackbone):
    """Moving-average trend + remainder, one linear head each, outputs summed"""

    kind = "dlinear"

    def __init__(self, individual: bool = True, kernel_size: int = 25):
        super().__init__(individual)
        self.kernel_size = kernel_size
        self.M = None

    def allocate(self, D, L, H, rng):
        Backbone.allocate(self, D, L, H, rng)
        self.M = moving_average_matrix(L, self.kernel_size)
        d = D if self.individual else 1
        return {
            "W_trend": _uniform(rng, (d, H, L), L),
            "b_trend": _uniform(rng, (d, H), L),
            "W_remainder": _uniform(rng, (d, H, L), L),
            "b_remainder": _uniform(rng, (d, H), L),
        }

    def decompose(self, x: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        trend = np.einsum("st,btk->bsk", self.M, x)
        return trend, x - trend

    def forward(self, x, p):
        self._check(x)
        trend, remainder = self.decompose(x)
        y = self._head(trend, p["W_trend"], p["b_trend"]) + \
            self._head(remainder, p["W_remainder"], p["b_remainder"])
        return y, {"trend": trend, "remainder": remainder}

    def backward(self, dy, p, cache):
        d_trend, g_t = self._head_backward(dy, cache["trend"], p["W_trend"], p["b_trend"])
        d_rem, g_r = self._head_backward(dy, cache["remainder"], p["W_remainder"], p["b_remainder"])
        # trend = M x, remainder = x - M x
        dx = d_rem + np.einsum("st,bsk->btk", self.M, d_trend - d_rem)
        grads = {"W_trend": g_t["W"], "b_trend": g_t["b"],
                 "W_remainder": g_r["W"], "b_remainder": g_r["b"]}
        return dx, grads

    def describe(self):
        return {**super().describe(), "kernel_size": self.kernel_size}


class MLPBackbone(Backbone):
    """Per-feature L -> hidden -> H network with ReLU"""

    kind = "mlp"

    def __init__(self, individual: bool = True, hidden: int = 64):
        super().__init__(individual)
        self.hidden = hidden

    def allocate(self, D, L, H, rng):
        super().allocate(D, L, H, rng)
        d = D if self.individual else 1
        return {
            "W1": _uniform(rng, (d, self.hidden, L), L),
            "b1": _uniform(rng, (d, self.hidden), L),
            "W2": _uniform(rng, (d, H, self.hidden), self.hidden),
            "b2": _uniform(rng, (d, H), self.hidden),
        }

    def forward(self, x, p):
        self._check(x)
        D = x.shape[2]
        z1 = np.einsum("btk,kjt->bjk", x, _expand(p["W1"], D)) + _expand(p["b1"], D).T[None]
        a1 = np.maximum(z1, 0.0)
        y = np.einsum("bjk,knj->bnk", a1, _expand(p["W2"], D)) + _expand(p["b2"], D).T[None]
        return y, {"x": x, "z1": z1, "a1": a1}

    def backward(self, dy, p, cache):
        D = dy.shape[2]
        x, z1, a1 = cache["x"], cache["z1"], cache["a1"]
        d_a1 = np.einsum("bnk,knj->bjk", dy, _expand(p["W2"], D))
        d_z1 = d_a1 * (z1 > 0)
        grads = {
            "W2": _reduce_features(np.einsum("bnk,bjk->knj", dy, a1), p["W2"].shape[0]),
            "b2": _reduce_features(dy.sum(axis=0).T, p["b2"].shape[0]),
            "W1": _reduce_features(np.einsum("bjk,btk->kjt", d_z1, x), p["W1"].shape[0]),
            "b1": _reduce_features(d_z1.sum(axis=0).T, p["b1"].shape[0]),
        }
        dx = np.einsum("bjk,kjt->btk", d_z1, _expand(p["W1"], D))
        return dx, grads

    def describe(self):
        return {**super().describe(), "hidden": self.hidden}


def build_backbone(kind: str, individual: bool = True, kernel_size: int = 25, hidden: int = 64) -> Backbone:
    kind = kind.lower()
    if kind == "identity":
        return Backbone(individual)
    if kind == "linear":
        return LinearBackbone(individual)
    if kind == "dlinear":
        return DLinearBackbone(individual, kernel_size)
    if kind == "mlp":
        return MLPBackbone(individual, hidden)
    raise UnknownMethod(f"unknown backbone kind {kind!r}")


@dataclass
class BackboneParams:
    """A backbone kind with its weights as one flat vector and the shape map to unpack it"""
    kind: str
    shapes: Dict[str, Tuple[int, ...]]
    weights: np.ndarray
    D: int
    L: int
    H: int
    individual: bool = True
    kernel_size: int = 25
    hidden: int = 64

    def __post_init__(self):
        total = int(sum(np.prod(s) for s in self.shapes.values()))
        if total != self.weights.size:
            raise ShapeMismatch(f"shape map holds {total} scalars, weight vector has {self.weights.size}")

    def unpack(self) -> Dict[str, np.ndarray]:
        tensors, offset = {}, 0
        for name, shape in self.shapes.items():
            n = int(np.prod(shape))
            tensors[name] = self.weights[offset:offset + n].reshape(shape)
            offset += n
        return tensors

    def build(self) -> Backbone:
        backbone = build_backbone(self.kind, self.individual, self.kernel_size, self.hidden)
        backbone.allocate(self.D, self.L, self.H, np.random.default_rng(0))
        return backbone

    @classmethod
    def initialize(cls, kind: str, D: int, L: int, H: int, seed: int = 0, **options) -> "BackboneParams":
        backbone = build_backbone(kind, **options)
        tensors = backbone.allocate(D, L, H, np.random.default_rng(seed))
        weights = np.concatenate([t.ravel() for t in tensors.values()]) if tensors else np.zeros(0)
        return cls(kind=kind, shapes={n: t.shape for n, t in tensors.items()}, weights=weights,
                   D=D, L=L, H=H, **options)


def backbone_forward(x_tilde: np.ndarray, params: BackboneParams) -> np.ndarray:
    """Apply the backbone to one instance (L x D) or a batch (B x L x D)"""
    x = np.asarray(x_tilde, dtype=np.float64)
    squeeze = x.ndim == 2
    if squeeze:
        x = x[None]
    y, _ = params.build().forward(x, params.unpack())
    return y[0] if squeeze else y
