"""
Normalization / denormalization transforms wrapped around a backbone.

Functional forms (``zscore_normalize``, ``ld_normalize``, ``lcd_scales_linear`` ...)
accept a single instance (L x D) or a batch (B x L x D) and are pure. The
``Normalizer`` classes at the bottom bind them to named trainable tensors and
add the backward passes the engine needs.

Shape conventions for broadcastable parameters: the feature axis has size D
when ``individual`` and 1 when shared; the time axis has size L (or H) at
point level and 1 at instance level.
"""

from dataclasses import dataclass, field
from fractions import Fraction
from typing import Any, Dict, Optional, Tuple

import numpy as np

from .errors import DivisionByZero, ShapeMismatch, UnknownMethod

DEFAULT_EPS = 1e-5

Grads = Dict[str, np.ndarray]


def _as_batch(arr: np.ndarray) -> Tuple[np.ndarray, bool]:
    arr = np.asarray(arr, dtype=np.float64)
    if arr.ndim == 2:
        return arr[None], True
    if arr.ndim == 3:
        return arr, False
    raise ShapeMismatch(f"expected (L, D) or (B, L, D), got shape {arr.shape}")


def _unbatch(arr: np.ndarray, squeeze: bool) -> np.ndarray:
    return arr[0] if squeeze else arr


def _reduce_to(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    """Sum a broadcast gradient back down to a parameter's shape"""
    g = grad
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g.reshape(shape)


def softplus(z: np.ndarray) -> np.ndarray:
    return np.logaddexp(0.0, z)


def softplus_inverse(y: float) -> float:
    return float(np.log(np.expm1(y)))


def _sigmoid(z: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * z))


# ---------------------------------------------------------------------------
# z-score

@dataclass
class NormContext:
    """Per-instance lookback statistics, consumed once at denormalization"""
    mu_x: np.ndarray
    sigma_x: np.ndarray
    eps: float = DEFAULT_EPS


def zscore_normalize(x: np.ndarray, eps: float = DEFAULT_EPS) -> Tuple[np.ndarray, NormContext]:
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-2] < 2:
        raise ShapeMismatch(f"z-score needs L >= 2, got L={x.shape[-2]}")
    mu = x.mean(axis=-2)
    sigma = x.std(axis=-2, ddof=1)
    x_bar = (x - mu[..., None, :]) / (sigma[..., None, :] + eps)
    return x_bar, NormContext(mu_x=mu, sigma_x=sigma, eps=eps)


def zscore_denormalize(y_bar: np.ndarray, ctx: NormContext) -> np.ndarray:
    return y_bar * (ctx.sigma_x[..., None, :] + ctx.eps) + ctx.mu_x[..., None, :]


# ---------------------------------------------------------------------------
# LD

@dataclass
class LDParams:
    A: np.ndarray
    P: np.ndarray
    B: Optional[np.ndarray] = None
    Q: Optional[np.ndarray] = None
    use_scale: bool = False

    def __post_init__(self):
        if self.use_scale:
            if self.B is None or self.Q is None:
                raise ShapeMismatch("use_scale requires both B and Q")
            if np.any(self.B <= 0) or np.any(self.Q <= 0):
                raise ValueError("B and Q must be strictly positive")
        elif self.B is not None or self.Q is not None:
            raise ShapeMismatch("B and Q are only allowed with use_scale")


def ld_normalize(x_bar: np.ndarray, params: LDParams) -> np.ndarray:
    shifted = x_bar - params.A
    if params.use_scale:
        return shifted / params.B
    return shifted


def ld_denormalize(y_tilde: np.ndarray, params: LDParams) -> np.ndarray:
    if params.use_scale:
        return y_tilde * params.Q + params.P
    return y_tilde + params.P


# ---------------------------------------------------------------------------
# RevIN

@dataclass
class RevINParams:
    gamma: np.ndarray
    beta: np.ndarray


def revin_normalize(x_bar: np.ndarray, params: RevINParams) -> np.ndarray:
    return params.gamma * x_bar + params.beta


def revin_denormalize(y_tilde: np.ndarray, params: RevINParams) -> np.ndarray:
    if np.any(np.abs(params.gamma) < 1e-12):
        raise DivisionByZero("RevIN gamma is zero for at least one feature")
    return (y_tilde - params.beta) / params.gamma


# ---------------------------------------------------------------------------
# LCD

@dataclass
class LCDParams:
    """
    h: (Dh, L); linear f: (Dh, Hf, L); attention U, V, W: (Dh, Hf, L),
    with Dh = D if individual else 1 and Hf = H at point level else 1.
    """
    variant: str
    level: str
    individual: bool
    centered_input: bool
    H: int
    h: np.ndarray
    f: Optional[np.ndarray] = None
    U: Optional[np.ndarray] = None
    V: Optional[np.ndarray] = None
    W: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.variant not in ("linear", "attention"):
            raise UnknownMethod(f"LCD variant {self.variant!r}")
        if self.level not in ("point", "instance"):
            raise UnknownMethod(f"LCD level {self.level!r}")
        maps = (self.f,) if self.variant == "linear" else (self.U, self.V, self.W)
        if any(m is None for m in maps):
            raise ShapeMismatch(f"LCD-{self.variant} is missing scale weights")
        expected_hf = self.H if self.level == "point" else 1
        for m in maps:
            if m.ndim != 3 or m.shape[1] != expected_hf or m.shape[2] != self.h.shape[1] \
                    or m.shape[0] != self.h.shape[0]:
                raise ShapeMismatch(f"scale weights of shape {m.shape} do not match h {self.h.shape}, H={self.H}")


@dataclass
class InnerState:
    """Scaling coefficients and predicted horizon mean of one normalize pass"""
    s: np.ndarray         # (..., H, D)
    mu_y_hat: np.ndarray  # (..., D)


def _expand_features(w: np.ndarray, D: int) -> np.ndarray:
    return np.broadcast_to(w, (D,) + w.shape[1:])


def lcd_center(x: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    x = np.asarray(x, dtype=np.float64)
    mu = x.mean(axis=-2)
    return x - mu[..., None, :], mu


def lcd_predict_mean(x: np.ndarray, params: LCDParams) -> np.ndarray:
    xb, squeeze = _as_batch(x)
    h = _expand_features(params.h, xb.shape[2])
    return _unbatch(np.einsum("btk,kt->bk", xb, h), squeeze)


def lcd_scales_linear(x_c: np.ndarray, params: LCDParams) -> np.ndarray:
    xb, squeeze = _as_batch(x_c)
    f = _expand_features(params.f, xb.shape[2])
    s = 1.0 + np.einsum("btk,knt->bnk", xb, f)
    s = np.broadcast_to(s, (xb.shape[0], params.H, xb.shape[2])).copy()
    return _unbatch(s, squeeze)


def _softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def _attention_parts(a: np.ndarray, params: LCDParams) -> Dict[str, np.ndarray]:
    """Query/key/value over the horizon from |x_c|, layout (B, D, Hf)"""
    D = a.shape[2]
    U = _expand_features(params.U, D)
    V = _expand_features(params.V, D)
    W = _expand_features(params.W, D)
    q = np.einsum("btk,knt->bkn", a, U)
    e = np.einsum("btk,knt->bkn", a, V)
    v = np.einsum("btk,knt->bkn", a, W)
    scale = np.sqrt(q.shape[2])
    alpha = _softmax(np.einsum("bkn,bkm->bknm", q, e) / scale)
    sv = np.einsum("bknm,bkm->bkn", alpha, v)
    return {"a": a, "q": q, "e": e, "v": v, "alpha": alpha, "sv": sv, "scale": scale}


def lcd_scales_attention(x_c: np.ndarray, params: LCDParams) -> np.ndarray:
    xb, squeeze = _as_batch(x_c)
    parts = _attention_parts(np.abs(xb), params)
    s = 1.0 + parts["sv"].transpose(0, 2, 1)
    s = np.broadcast_to(s, (xb.shape[0], params.H, xb.shape[2])).copy()
    return _unbatch(s, squeeze)


def lcd_denormalize(y_tilde: np.ndarray, state: InnerState) -> np.ndarray:
    return y_tilde * state.s + state.mu_y_hat[..., None, :]


# ---------------------------------------------------------------------------
# parameter-count oracle

def param_count(method: str, D: int, L: int, H: int, P_slice: Optional[int] = None) -> int:
    """Trainable scalars of each normalization model, by closed form"""
    method = method.lower()
    if min(D, L, H) < 0:
        raise ValueError("dimensions must be non-negative")
    if method == "revin":
        return 2 * D
    if method == "dish-ts":
        return 2 * D * L
    if method == "san":
        if not P_slice:
            raise ValueError("SAN parameter count needs the slice length P_slice")
        count = Fraction(1024 * (L + 2 * H + P_slice * L), P_slice)
        return int(round(count))
    if method == "nst":
        return 6 * L + 128 * (4 * D + 256 + 1 + L)
    if method == "ld":
        return D * (L + H)
    if method == "lcd-linear":
        return D * L * (H + 1)
    if method == "lcd-as":
        return D * L * (3 * H + 1)
    if method in ("zscore", "none", "center"):
        return 0
    raise UnknownMethod(f"no parameter count for method {method!r}")


# ---------------------------------------------------------------------------
# trainable normalizers

@dataclass
class NormState:
    """Everything a denormalize / backward pass needs from the normalize pass"""
    ctx: Optional[NormContext] = None
    inner: Optional[InnerState] = None
    cache: Dict[str, Any] = field(default_factory=dict)


class Normalizer:
    """Base: no parameters, identity in both directions"""

    method = "none"

    def __init__(self, eps: float = DEFAULT_EPS):
        self.eps = eps

    def allocate(self, D: int, L: int, H: int) -> Dict[str, np.ndarray]:
        """Neutral initial values of every trainable tensor"""
        return {}

    def normalize(self, x: np.ndarray, p: Dict[str, np.ndarray]) -> Tuple[np.ndarray, NormState]:
        return x, NormState()

    def denormalize(self, y_tilde: np.ndarray, p: Dict[str, np.ndarray], state: NormState) -> np.ndarray:
        return y_tilde

    def denormalize_backward(self, d_y_hat: np.ndarray, p: Dict[str, np.ndarray],
                             state: NormState) -> Tuple[np.ndarray, Grads]:
        return d_y_hat, {}

    def normalize_backward(self, d_x_tilde: np.ndarray, p: Dict[str, np.ndarray], state: NormState) -> Grads:
        return {}

    def describe(self) -> Dict[str, Any]:
        return {"method": self.method, "eps": self.eps}


class CenterNorm(Normalizer):
    """Subtract the lookback mean, nothing added back (neutral point of LCD)"""

    method = "center"

    def normalize(self, x, p):
        x_c, mu = lcd_center(x)
        return x_c, NormState(cache={"mu": mu})


class ZScoreNorm(Normalizer):
    method = "zscore"

    def normalize(self, x, p):
        x_bar, ctx = zscore_normalize(x, self.eps)
        return x_bar, NormState(ctx=ctx)

    def denormalize(self, y_tilde, p, state):
        return zscore_denormalize(y_tilde, state.ctx)

    def denormalize_backward(self, d_y_hat, p, state):
        return d_y_hat * (state.ctx.sigma_x[..., None, :] + state.ctx.eps), {}


class RevINNorm(ZScoreNorm):
    method = "revin"

    def allocate(self, D, L, H):
        return {"gamma": np.ones(D), "beta": np.zeros(D)}

    @staticmethod
    def _params(p) -> RevINParams:
        return RevINParams(gamma=p["gamma"], beta=p["beta"])

    def normalize(self, x, p):
        x_bar, ctx = zscore_normalize(x, self.eps)
        return revin_normalize(x_bar, self._params(p)), NormState(ctx=ctx, cache={"x_bar": x_bar})

    def denormalize(self, y_tilde, p, state):
        state.cache["y_tilde"] = y_tilde
        return zscore_denormalize(revin_denormalize(y_tilde, self._params(p)), state.ctx)

    def denormalize_backward(self, d_y_hat, p, state):
        gamma, beta = p["gamma"], p["beta"]
        d_y_bar = d_y_hat * (state.ctx.sigma_x[..., None, :] + state.ctx.eps)
        grads = {
            "beta": -_reduce_to(d_y_bar, gamma.shape) / gamma,
            "gamma": -_reduce_to(d_y_bar * (state.cache["y_tilde"] - beta), gamma.shape) / gamma ** 2,
        }
        return d_y_bar / gamma, grads

    def normalize_backward(self, d_x_tilde, p, state):
        return {
            "gamma": _reduce_to(d_x_tilde * state.cache["x_bar"], p["gamma"].shape),
            "beta": _reduce_to(d_x_tilde, p["beta"].shape),
        }


class LDNorm(ZScoreNorm):
    """z-score, then learnable per-step shift (and optional scale) on both sides"""

    method = "ld"

    def __init__(self, level: str = "point", individual: bool = True, use_scale: bool = False,
                 eps: float = DEFAULT_EPS):
        super().__init__(eps)
        if level not in ("point", "instance"):
            raise UnknownMethod(f"LD level {level!r}")
        self.level = level
        self.individual = individual
        self.use_scale = use_scale

    def allocate(self, D, L, H):
        d = D if self.individual else 1
        l, h = (L, H) if self.level == "point" else (1, 1)
        tensors = {"A": np.zeros((l, d)), "P": np.zeros((h, d))}
        if self.use_scale:
            # raw values map to exactly 1 through softplus
            tensors["B_raw"] = np.full((l, d), softplus_inverse(1.0))
            tensors["Q_raw"] = np.full((h, d), softplus_inverse(1.0))
        return tensors

    def _params(self, p) -> LDParams:
        if self.use_scale:
            return LDParams(A=p["A"], P=p["P"], B=softplus(p["B_raw"]), Q=softplus(p["Q_raw"]), use_scale=True)
        return LDParams(A=p["A"], P=p["P"])

    def normalize(self, x, p):
        x_bar, ctx = zscore_normalize(x, self.eps)
        return ld_normalize(x_bar, self._params(p)), NormState(ctx=ctx, cache={"x_bar": x_bar})

    def denormalize(self, y_tilde, p, state):
        state.cache["y_tilde"] = y_tilde
        return zscore_denormalize(ld_denormalize(y_tilde, self._params(p)), state.ctx)

    def denormalize_backward(self, d_y_hat, p, state):
        d_y_bar = d_y_hat * (state.ctx.sigma_x[..., None, :] + state.ctx.eps)
        grads = {"P": _reduce_to(d_y_bar, p["P"].shape)}
        if not self.use_scale:
            return d_y_bar, grads
        Q = softplus(p["Q_raw"])
        d_Q = _reduce_to(d_y_bar * state.cache["y_tilde"], Q.shape)
        grads["Q_raw"] = d_Q * _sigmoid(p["Q_raw"])
        return d_y_bar * Q, grads

    def normalize_backward(self, d_x_tilde, p, state):
        if not self.use_scale:
            return {"A": -_reduce_to(d_x_tilde, p["A"].shape)}
        B = softplus(p["B_raw"])
        shifted = state.cache["x_bar"] - p["A"]
        d_B = _reduce_to(-d_x_tilde * shifted / B ** 2, B.shape)
        return {
            "A": -_reduce_to(d_x_tilde / B, p["A"].shape),
            "B_raw": d_B * _sigmoid(p["B_raw"]),
        }

    def describe(self):
        return {**super().describe(), "level": self.level, "individual": self.individual,
                "use_scale": self.use_scale}


class LCDNorm(Normalizer):
    """Center, predict horizon mean and per-step scales, scale-and-translate the output"""

    def __init__(self, variant: str = "linear", level: str = "point", individual: bool = True,
                 centered_input: bool = True, eps: float = DEFAULT_EPS):
        super().__init__(eps)
        if variant not in ("linear", "attention"):
            raise UnknownMethod(f"LCD variant {variant!r}")
        if level not in ("point", "instance"):
            raise UnknownMethod(f"LCD level {level!r}")
        self.variant = variant
        self.level = level
        self.individual = individual
        self.centered_input = centered_input
        self.method = "lcd-linear" if variant == "linear" else "lcd-as"
        self._H = None

    def allocate(self, D, L, H):
        self._H = H
        d = D if self.individual else 1
        hf = H if self.level == "point" else 1
        tensors = {"h": np.zeros((d, L))}
        names = ("f",) if self.variant == "linear" else ("U", "V", "W")
        for name in names:
            tensors[name] = np.zeros((d, hf, L))
        return tensors

    def _params(self, p, H: int) -> LCDParams:
        return LCDParams(variant=self.variant, level=self.level, individual=self.individual,
                         centered_input=self.centered_input, H=H, h=p["h"],
                         f=p.get("f"), U=p.get("U"), V=p.get("V"), W=p.get("W"))

    def normalize(self, x, p):
        if self._H is None:
            raise ValueError("LCD normalizer used before allocate()")
        H = self._H
        params = self._params(p, H)
        x_c, mu = lcd_center(x)
        scale_input = x_c if self.centered_input else np.asarray(x, dtype=np.float64)
        mu_y_hat = lcd_predict_mean(x, params)
        cache = {"x": np.asarray(x, dtype=np.float64), "u": scale_input}
        if self.variant == "linear":
            s = lcd_scales_linear(scale_input, params)
        else:
            ub, squeeze = _as_batch(scale_input)
            parts = _attention_parts(np.abs(ub), params)
            s = 1.0 + parts["sv"].transpose(0, 2, 1)
            s = _unbatch(np.broadcast_to(s, (ub.shape[0], H, ub.shape[2])).copy(), squeeze)
            cache["attention"] = parts
        return x_c, NormState(inner=InnerState(s=s, mu_y_hat=mu_y_hat), cache=cache)

    def denormalize(self, y_tilde, p, state):
        state.cache["y_tilde"] = y_tilde
        return lcd_denormalize(y_tilde, state.inner)

    def denormalize_backward(self, d_y_hat, p, state):
        d_b, squeeze = _as_batch(d_y_hat)
        y_tilde, _ = _as_batch(state.cache["y_tilde"])
        s, _ = _as_batch(state.inner.s)
        x, _ = _as_batch(state.cache["x"])
        u, _ = _as_batch(state.cache["u"])

        d_mu = d_b.sum(axis=1)  # (B, D)
        grads = {"h": _reduce_to(np.einsum("bk,btk->kt", d_mu, x), p["h"].shape)}

        d_s = d_b * y_tilde  # (B, H, D)
        hf = p["f"].shape[1] if self.variant == "linear" else p["W"].shape[1]
        if hf == 1:
            d_s = d_s.sum(axis=1, keepdims=True)

        if self.variant == "linear":
            grads["f"] = _reduce_to(np.einsum("bnk,btk->knt", d_s, u), p["f"].shape)
        else:
            parts = state.cache["attention"]
            alpha, q, e, v, a = parts["alpha"], parts["q"], parts["e"], parts["v"], parts["a"]
            d_sv = d_s.transpose(0, 2, 1)  # (B, D, Hf)
            d_alpha = np.einsum("bkn,bkm->bknm", d_sv, v)
            d_v = np.einsum("bknm,bkn->bkm", alpha, d_sv)
            d_scores = alpha * (d_alpha - (d_alpha * alpha).sum(axis=-1, keepdims=True))
            d_q = np.einsum("bknm,bkm->bkn", d_scores, e) / parts["scale"]
            d_e = np.einsum("bknm,bkn->bkm", d_scores, q) / parts["scale"]
            for name, d_out in (("U", d_q), ("V", d_e), ("W", d_v)):
                grads[name] = _reduce_to(np.einsum("bkn,btk->knt", d_out, a), p[name].shape)

        return _unbatch(d_b * s, squeeze), grads

    def describe(self):
        return {**super().describe(), "method": self.method, "level": self.level,
                "individual": self.individual, "centered_input": self.centered_input}


NORMALIZER_METHODS = ("none", "center", "zscore", "revin", "ld", "lcd-linear", "lcd-as")


def build_normalizer(method: str, level: str = "point", individual: bool = True,
                     centered_input: bool = True, use_scale: bool = False,
                     eps: float = DEFAULT_EPS) -> Normalizer:
    method = method.lower()
    if method == "none":
        return Normalizer(eps)
    if method == "center":
        return CenterNorm(eps)
    if method == "zscore":
        return ZScoreNorm(eps)
    if method == "revin":
        return RevINNorm(eps)
    if method == "ld":
        return LDNorm(level=level, individual=individual, use_scale=use_scale, eps=eps)
    if method == "lcd-linear":
        return LCDNorm("linear", level=level, individual=individual, centered_input=centered_input, eps=eps)
    if method == "lcd-as":
        return LCDNorm("attention", level=level, individual=individual, centered_input=centered_input, eps=eps)
    raise UnknownMethod(f"unknown normalizer method {method!r}")


def allocated_param_count(method: str, D: int, L: int, H: int, **flags) -> int:
    """Instantiate a normalizer and count the scalars it actually allocates"""
    tensors = build_normalizer(method, **flags).allocate(D, L, H)
    return int(sum(t.size for t in tensors.values()))
