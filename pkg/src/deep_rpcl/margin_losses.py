"""Normalized-softmax margin losses with a rival margin.

The target logit gets the usual penalty (cosine margin ``s(cos t - m)`` or
angular margin ``s cos(t + m)``) and the strongest non-target class, the rival,
gets the opposite-signed margin ``gamma``. The rival is chosen on raw logits
and treated as a constant when differentiating.

All backward passes here are analytic; ``tests/test_gradients.py`` checks
them against central differences.
"""

import logging
import math
from dataclasses import dataclass

import numpy as np

from .numeric_core import COS_EPS, as_matrix, clamp_cos, log_softmax_stable, normalize_rows

log = logging.getLogger(__name__)

VARIANTS = ("softmax", "cos", "arc", "rpcl_cos", "rpcl_arc")
# (m, gamma) per margin family; m in cosine units for cos, radians for arc
DEFAULT_MARGINS = {"cos": (0.35, 0.05), "arc": (0.5, 0.05)}


_WARNED = set()


class NonFiniteError(FloatingPointError):
    pass


def family(variant):
    return variant.replace("rpcl_", "")


@dataclass
class MarginConfig:
    variant: str = "rpcl_cos"
    s: float = 30.0
    m: float = None
    gamma: float = None

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}; expected one of {', '.join(VARIANTS)}")
        m0, g0 = DEFAULT_MARGINS.get(family(self.variant), (0.0, 0.0))
        if self.m is None:
            self.m = m0
        if self.gamma is None:
            self.gamma = g0 if self.variant.startswith("rpcl_") else 0.0
        self.s, self.m, self.gamma = float(self.s), float(self.m), float(self.gamma)
        if self.variant == "softmax":
            return
        if self.s <= 0:
            raise ValueError(f"s must be positive, got {self.s}")
        if self.m < 0 or self.gamma < 0:
            raise ValueError("margins m and gamma must be non-negative")
        if self.m > 0 and self.gamma > self.m / 2:
            raise ValueError(f"gamma={self.gamma} violates γ ≪ m (require gamma <= m/2 with m={self.m})")
        if self.m > 0 and self.gamma > self.m / 10 and (self.m, self.gamma) not in _WARNED:
            _WARNED.add((self.m, self.gamma))
            log.warning("gamma=%g exceeds m/10 (m=%g); the rival margin should stay small", self.gamma, self.m)

    @property
    def uses_rival(self):
        return self.variant.startswith("rpcl_")


@dataclass
class ClassifierHead:
    """Class weight rows ``W`` (n x d). The bias is fixed at zero."""

    W: np.ndarray

    def __post_init__(self):
        self.W = as_matrix(self.W, "W").copy()
        if self.W.shape[0] < 2:
            raise ValueError("a classifier head needs at least 2 classes")

    @property
    def b(self):
        return np.zeros(self.W.shape[0])

    @property
    def n_classes(self):
        return self.W.shape[0]

    def normalized(self):
        Wn, bad = normalize_rows(self.W)
        if bad.any():
            raise ValueError(f"zero weight row {int(np.flatnonzero(bad)[0])}")
        return Wn

    def renormalize(self):
        # rows already unit-norm to a few ulps are kept bit-for-bit
        drift = np.abs(np.sqrt(np.sum(self.W * self.W, axis=1)) - 1.0) > 4 * np.finfo(float).eps
        if drift.any():
            self.W = np.where(drift[:, None], self.normalized(), self.W)
        return self


@dataclass
class LossOutput:
    loss: float
    adjusted_logits: np.ndarray
    grad_features: np.ndarray
    grad_W: np.ndarray
    rival_indices: np.ndarray


@dataclass
class CenterLossState:
    class_centers: np.ndarray = None
    beta_c: float = 0.008
    gamma_c: float = 0.002
    alpha: float = 0.5

    def __post_init__(self):
        if self.beta_c <= 0:
            raise ValueError("beta_c must be positive")
        if self.gamma_c < 0:
            raise ValueError("gamma_c must be non-negative")
        if self.gamma_c >= self.beta_c:
            raise ValueError(f"gamma_c={self.gamma_c} must stay below beta_c={self.beta_c}")
        if not 0 < self.alpha <= 1:
            raise ValueError("alpha must lie in (0, 1]")
        if self.class_centers is not None:
            self.class_centers = as_matrix(self.class_centers, "class_centers").copy()

    @classmethod
    def zeros(cls, n_classes, dim, **kw):
        return cls(np.zeros((n_classes, dim)), **kw)


def _labels(labels, n):
    y = np.asarray(labels, dtype=np.int64).ravel()
    if y.size and (y.min() < 0 or y.max() >= n):
        bad = int(y[(y < 0) | (y >= n)][0])
        raise ValueError(f"label {bad} out of range for {n} classes")
    return y


def _unit_rows(a, what):
    u, bad = normalize_rows(a)
    if bad.any():
        raise ValueError(f"zero {what} row at index {int(np.flatnonzero(bad)[0])}")
    return u, np.sqrt(np.sum(a * a, axis=1))


def raw_cosine_logits(features, head, cfg):
    """Return ``(cos, s * cos)`` for every (sample, class) pair."""
    X = as_matrix(features, "features")
    W = head.W
    if X.shape[1] != W.shape[1]:
        raise ValueError(f"dimension mismatch: features have {X.shape[1]} columns, W has {W.shape[1]}")
    Xn, _ = _unit_rows(X, "feature")
    Wn, _ = _unit_rows(W, "weight")
    cos = clamp_cos(Xn @ Wn.T)
    return cos, cfg.s * cos


def select_rival(raw_logits, target):
    """Highest non-target entry of one logit row; ties go to the lower index."""
    z = np.asarray(raw_logits, dtype=np.float64)
    if z.size < 2:
        raise ValueError("rival selection needs at least 2 classes")
    masked = z.copy()
    masked[target] = -np.inf
    return int(np.argmax(masked))


def _rivals(cos, y):
    masked = cos.copy()
    masked[np.arange(len(y)), y] = -np.inf
    return np.argmax(masked, axis=1)


def _margin_terms(cos, y, cfg):
    """Adjusted logits, d(logit)/d(cos) and rival indices for margin variants."""
    if cfg.variant == "softmax":
        raise ValueError("margins undefined for plain softmax")
    n_rows = np.arange(len(y))
    s, m, g = cfg.s, cfg.m, cfg.gamma
    rivals = _rivals(cos, y)
    z = s * cos
    dz = np.full_like(cos, s)

    ct = cos[n_rows, y]
    if family(cfg.variant) == "cos":
        z[n_rows, y] = s * (ct - m)
    else:
        th = np.arccos(ct)
        inside = th + m < math.pi
        sin_t = np.sqrt(1.0 - ct * ct)
        z[n_rows, y] = np.where(inside, s * np.cos(th + m), s * (ct - m * math.sin(m)))
        dz[n_rows, y] = np.where(inside, s * np.sin(th + m) / sin_t, s)

    if cfg.uses_rival:
        cr = cos[n_rows, rivals]
        if family(cfg.variant) == "cos":
            z[n_rows, rivals] = s * (cr + g)
        else:
            th = np.arccos(cr)
            shifted = np.maximum(th - g, 0.0)
            z[n_rows, rivals] = s * np.cos(shifted)
            dz[n_rows, rivals] = np.where(th > g, s * np.sin(shifted) / np.sqrt(1.0 - cr * cr), 0.0)
    return z, dz, rivals


def apply_rpcl_margins(cos_thetas, labels, cfg):
    """Margin-adjusted logits and the rival index of every row."""
    cos = clamp_cos(as_matrix(cos_thetas, "cos_thetas"))
    y = _labels(labels, cos.shape[1])
    z, _, rivals = _margin_terms(cos, y, cfg)
    return z, rivals


def cross_entropy(adjusted_logits, labels):
    z = as_matrix(adjusted_logits, "logits")
    y = _labels(labels, z.shape[1])
    lp = log_softmax_stable(z)
    return float(-np.mean(lp[np.arange(len(y)), y]))


def _check(stage, *arrays):
    for a in arrays:
        if not np.all(np.isfinite(a)):
            raise NonFiniteError(f"non-finite values at stage '{stage}'")


def _through_norm(g, unit, norm):
    # d/dv of a function of v/|v|, given the gradient g w.r.t. the unit vector
    return (g - unit * np.sum(unit * g, axis=1, keepdims=True)) / norm[:, None]


def loss_and_grads(features, labels, head, cfg):
    """Mean loss over the batch plus exact gradients for features and ``head.W``."""
    X = as_matrix(features, "features")
    W = head.W
    if X.shape[1] != W.shape[1]:
        raise ValueError(f"dimension mismatch: features have {X.shape[1]} columns, W has {W.shape[1]}")
    y = _labels(labels, W.shape[0])
    N = X.shape[0]
    if N == 0:
        raise ValueError("empty batch")
    rows = np.arange(N)
    Wn, w_norm = _unit_rows(W, "weight")
    _check("input", X, W)

    if cfg.variant == "softmax":
        z = X @ Wn.T
        _check("logits", z)
        rivals = _rivals(z, y)
        G = np.exp(log_softmax_stable(z))
        G[rows, y] -= 1.0
        G /= N
        grad_X = G @ Wn
        grad_Wn = G.T @ X
    else:
        Xn, x_norm = _unit_rows(X, "feature")
        raw = Xn @ Wn.T
        cos = clamp_cos(raw)
        z, dz, rivals = _margin_terms(cos, y, cfg)
        _check("margin logits", z, dz)
        G = np.exp(log_softmax_stable(z))
        G[rows, y] -= 1.0
        G /= N
        Gc = G * dz
        # clamped entries do not respond to the inputs
        Gc[np.abs(raw) > 1.0 - COS_EPS] = 0.0
        grad_X = _through_norm(Gc @ Wn, Xn, x_norm)
        grad_Wn = Gc.T @ Xn

    lp = log_softmax_stable(z)
    loss = float(-np.mean(lp[rows, y]))
    grad_W = _through_norm(grad_Wn, Wn, w_norm)
    _check("gradients", grad_X, grad_W)
    return LossOutput(loss, z, grad_X, grad_W, rivals)


def _rival_centers(X, y, centers):
    d = np.sum((X[:, None, :] - centers[None, :, :]) ** 2, axis=2)
    d[np.arange(len(y)), y] = np.inf
    return np.argmin(d, axis=1)


def center_rpcl_loss(features, labels, state, base_loss=0.0):
    """Center loss with a rival term added to ``base_loss``.

    ``L = base + beta_c * sum ||x - c_y||^2 - gamma_c * sum ||x - c_r||^2``
    where ``c_r`` is the nearest non-target center. Returns
    ``(loss, grad_features, rival_indices)``; the gradient covers only the
    center terms.
    """
    if state.class_centers is None:
        raise ValueError("class centers are not initialized")
    X = as_matrix(features, "features")
    C = state.class_centers
    if X.shape[1] != C.shape[1]:
        raise ValueError(f"dimension mismatch: features have {X.shape[1]} columns, centers have {C.shape[1]}")
    y = _labels(labels, C.shape[0])
    rivals = _rival_centers(X, y, C)
    to_target = X - C[y]
    to_rival = X - C[rivals]
    loss = (
        base_loss
        + state.beta_c * float(np.sum(to_target * to_target))
        - state.gamma_c * float(np.sum(to_rival * to_rival))
    )
    grad = 2.0 * state.beta_c * to_target - 2.0 * state.gamma_c * to_rival
    return loss, grad, rivals


def update_centers(state, features, labels):
    """Move each class center present in the batch toward its members' mean."""
    X = as_matrix(features, "features")
    if X.shape[0] == 0:
        raise ValueError("empty batch")
    C = state.class_centers.copy()
    y = _labels(labels, C.shape[0])
    for j in np.unique(y):
        members = X[y == j]
        C[j] -= state.alpha * np.mean(C[j] - members, axis=0)
    return CenterLossState(C, state.beta_c, state.gamma_c, state.alpha)
