"""Dense double-precision primitives with hand-derived gradients.

Scalar-valued operations come in pairs: ``op`` returns the value and
``op_grad`` returns a :class:`GradResult`. Vector-valued operations expose a
vector-Jacobian product (``op_vjp``) so callers can compose reverse-mode
passes by hand. Most functions also accept 2-D input and then act row-wise.
"""
from __future__ import annotations

from typing import Callable, NamedTuple

import numpy as np

from .errors import DimMismatch, IndexOutOfRange, NearZeroNorm, NonFiniteValue

NORM_EPS = 1e-12
SIGMOID_LO = np.finfo(np.float64).tiny
SIGMOID_HI = np.nextafter(1.0, 0.0)


class GradResult(NamedTuple):
    value: float | np.ndarray
    grads: tuple


def as_vec(v, name: str = "vector") -> np.ndarray:
    arr = np.asarray(v, dtype=np.float64)
    if arr.ndim != 1:
        raise DimMismatch(f"{name} must be 1-D, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise NonFiniteValue(f"{name} contains NaN or Inf")
    return arr


def as_mat(m, name: str = "matrix") -> np.ndarray:
    arr = np.asarray(m, dtype=np.float64)
    if arr.ndim != 2:
        raise DimMismatch(f"{name} must be 2-D, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise NonFiniteValue(f"{name} contains NaN or Inf")
    return arr


def norms(v: np.ndarray) -> np.ndarray:
    """Euclidean norm of a vector, or of each row of a matrix."""
    v = np.asarray(v, dtype=np.float64)
    n = np.sqrt(np.sum(v * v, axis=-1, keepdims=v.ndim > 1))
    if np.any(n < NORM_EPS):
        raise NearZeroNorm(f"norm below {NORM_EPS:g}")
    return n


def l2_normalize(v) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    return v / norms(v)


def l2_normalize_vjp(v, g) -> np.ndarray:
    """Pull ``g`` back through ``l2_normalize``: (I - v̂v̂ᵀ) g / ||v||."""
    v = np.asarray(v, dtype=np.float64)
    g = np.asarray(g, dtype=np.float64)
    n = norms(v)
    u = v / n
    proj = np.sum(u * g, axis=-1, keepdims=v.ndim > 1)
    return (g - u * proj) / n


def l2_normalize_jacobian(v) -> np.ndarray:
    v = as_vec(v)
    n = norms(v)
    u = v / n
    return (np.eye(v.size) - np.outer(u, u)) / n


def weighted_sum(z, rows) -> np.ndarray:
    """Σ_j z_j · rows[j]. ``z`` may be a matrix of weight vectors (one per row)."""
    z = np.asarray(z, dtype=np.float64)
    rows = np.asarray(rows, dtype=np.float64)
    if z.shape[-1] != rows.shape[0]:
        raise DimMismatch(f"weights of length {z.shape[-1]} vs {rows.shape[0]} rows")
    return z @ rows


def weighted_sum_vjp(z, rows, g) -> tuple[np.ndarray, np.ndarray]:
    """Returns (dz, drows) for upstream gradient ``g``."""
    z = np.asarray(z, dtype=np.float64)
    rows = np.asarray(rows, dtype=np.float64)
    g = np.asarray(g, dtype=np.float64)
    dz = g @ rows.T
    drows = np.outer(z, g) if z.ndim == 1 else z.T @ g
    return dz, drows


def cosine_sim(a, b) -> float:
    a = as_vec(a, "a")
    b = as_vec(b, "b")
    if a.size != b.size:
        raise DimMismatch(f"lengths {a.size} and {b.size}")
    return float(np.clip(l2_normalize(a) @ l2_normalize(b), -1.0, 1.0))


def cosine_sim_grad(a, b) -> GradResult:
    a = as_vec(a, "a")
    b = as_vec(b, "b")
    if a.size != b.size:
        raise DimMismatch(f"lengths {a.size} and {b.size}")
    na, nb = norms(a), norms(b)
    ua, ub = a / na, b / nb
    c = float(ua @ ub)
    da = (ub - c * ua) / na
    db = (ua - c * ub) / nb
    return GradResult(c, (da, db))


def cosine_matrix(A, B) -> np.ndarray:
    """Pairwise cosine similarities between rows of ``A`` and rows of ``B``."""
    return l2_normalize(np.atleast_2d(A)) @ l2_normalize(np.atleast_2d(B)).T


def sigmoid(x):
    x = np.asarray(x, dtype=np.float64)
    e = np.exp(-np.abs(x))
    out = np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
    # keep saturated outputs strictly inside (0, 1)
    out = np.clip(out, SIGMOID_LO, SIGMOID_HI)
    return float(out) if out.ndim == 0 else out


def sigmoid_grad(x) -> GradResult:
    s = sigmoid(x)
    return GradResult(s, (s * (1.0 - s),))


def softmax(logits, axis: int = -1) -> np.ndarray:
    logits = np.asarray(logits, dtype=np.float64)
    shifted = logits - np.max(logits, axis=axis, keepdims=True)
    e = np.exp(shifted)
    return e / np.sum(e, axis=axis, keepdims=True)


def log_softmax(logits, axis: int = -1) -> np.ndarray:
    logits = np.asarray(logits, dtype=np.float64)
    shifted = logits - np.max(logits, axis=axis, keepdims=True)
    return shifted - np.log(np.sum(np.exp(shifted), axis=axis, keepdims=True))


def softmax_xent(logits, target: int) -> float:
    return softmax_xent_grad(logits, target).value


def softmax_xent_grad(logits, target: int) -> GradResult:
    logits = as_vec(logits, "logits")
    if not 0 <= target < logits.size:
        raise IndexOutOfRange(f"target {target} outside [0, {logits.size})")
    loss = -float(log_softmax(logits)[target])
    g = softmax(logits)
    g[target] -= 1.0
    return GradResult(loss, (g,))


def softmax_xent_batch(logits, targets) -> GradResult:
    """Mean cross-entropy over rows; gradient is w.r.t. the logits matrix."""
    logits = np.asarray(logits, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.int64)
    n, c = logits.shape
    if targets.shape != (n,):
        raise DimMismatch(f"{targets.shape[0]} targets for {n} rows")
    if np.any(targets < 0) or np.any(targets >= c):
        raise IndexOutOfRange(f"target outside [0, {c})")
    rows = np.arange(n)
    loss = -float(np.mean(log_softmax(logits)[rows, targets]))
    g = softmax(logits)
    g[rows, targets] -= 1.0
    return GradResult(loss, (g / n,))


def grad_check(f: Callable, point, step: float = 1e-5) -> float:
    """Max relative error between ``f``'s analytic derivative and central differences.

    ``f(x)`` must return ``(value, derivative)``: a scalar with a gradient shaped
    like ``x``, or a vector with its Jacobian of shape ``(len(value), x.size)``.
    The error per coordinate is |analytic - fd| / max(1, |fd|).
    """
    x0 = np.array(point, dtype=np.float64)
    _, analytic = f(x0.copy())
    analytic = np.asarray(analytic, dtype=np.float64)
    flat = x0.ravel()
    worst = 0.0
    for i in range(flat.size):
        xp = flat.copy()
        xm = flat.copy()
        xp[i] += step
        xm[i] -= step
        fp = np.asarray(f(xp.reshape(x0.shape))[0], dtype=np.float64)
        fm = np.asarray(f(xm.reshape(x0.shape))[0], dtype=np.float64)
        fd = (fp - fm) / (2.0 * step)
        an = analytic.ravel()[i] if fd.ndim == 0 else analytic.reshape(fd.size, -1)[:, i]
        err = np.max(np.abs(an - fd) / np.maximum(1.0, np.abs(fd)))
        worst = max(worst, float(err))
    return worst
