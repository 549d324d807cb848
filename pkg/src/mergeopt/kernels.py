"""Pure tensor-level merging kernels.

Four merging methods (task arithmetic, TIES, SLERP, linear weighted
averaging) plus the scale-factor kernel. All kernels are deterministic pure
functions; given float32 inputs they stay in float32.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

WEIGHT_SUM_TOL = 1e-9
SLERP_COLINEAR_EPS = 1e-6
SFS_SCALE_RANGE = (0.5, 1.5)


@dataclass(frozen=True)
class TaskArithmetic:
    """Add the scaled sum of task vectors to the pre-trained base."""

    lam: float
    kind = "task_arithmetic"

    def __post_init__(self) -> None:
        if not 0.0 <= self.lam <= 1.0:
            raise ValueError(f"task-arithmetic lambda {self.lam} outside [0, 1]")

    def params(self) -> dict:
        return {"lambda": self.lam}


@dataclass(frozen=True)
class Ties:
    """Sparsify task vectors, elect a consensus sign, average aligned entries."""

    lam: float
    k: float
    kind = "ties"

    def __post_init__(self) -> None:
        if not 0.0 <= self.lam <= 1.0:
            raise ValueError(f"ties lambda {self.lam} outside [0, 1]")
        if not 0.1 <= self.k <= 0.99:
            raise ValueError(f"ties retention ratio {self.k} outside [0.1, 0.99]")

    def params(self) -> dict:
        return {"lambda": self.lam, "k": self.k}


@dataclass(frozen=True)
class Slerp:
    """Spherical interpolation along the geodesic between two weight vectors."""

    t: float
    kind = "slerp"

    def __post_init__(self) -> None:
        if not 0.0 <= self.t <= 1.0:
            raise ValueError(f"slerp t {self.t} outside [0, 1]")

    def params(self) -> dict:
        return {"t": self.t}


@dataclass(frozen=True)
class Linear:
    """Convex combination of model weights."""

    w: tuple[float, ...]
    kind = "linear"

    def __post_init__(self) -> None:
        object.__setattr__(self, "w", tuple(float(x) for x in self.w))
        if not self.w:
            raise ValueError("linear merge needs at least one weight")
        if any(x < 0 for x in self.w):
            raise ValueError(f"linear weights must be non-negative, got {self.w}")
        if abs(sum(self.w) - 1.0) > WEIGHT_SUM_TOL:
            raise ValueError(f"linear weights sum to {sum(self.w)}, expected 1")

    def params(self) -> dict:
        return {"w": list(self.w)}


MergeMethod = TaskArithmetic | Ties | Slerp | Linear

_METHOD_KINDS = {
    "task_arithmetic": TaskArithmetic,
    "ties": Ties,
    "slerp": Slerp,
    "linear": Linear,
}


def method_from_params(kind: str, params: dict) -> MergeMethod:
    """Rebuild a merge method from its serialized kind/params pair."""
    if kind == "task_arithmetic":
        return TaskArithmetic(float(params["lambda"]))
    if kind == "ties":
        return Ties(float(params["lambda"]), float(params["k"]))
    if kind == "slerp":
        return Slerp(float(params["t"]))
    if kind == "linear":
        return Linear(tuple(params["w"]))
    raise ValueError(f"unknown merge method {kind!r}")


def _check_same_shape(base: np.ndarray, others: list[np.ndarray]) -> None:
    for other in others:
        if other.shape != base.shape:
            raise ValueError(f"shape mismatch: {other.shape} vs {base.shape}")


def task_arithmetic_merge(
    base: np.ndarray, finetuned: list[np.ndarray], lam: float
) -> np.ndarray:
    """base + lam * sum_t (finetuned_t - base), elementwise."""
    base = np.asarray(base)
    tuned = [np.asarray(m) for m in finetuned]
    if not tuned:
        raise ValueError("task arithmetic needs at least one finetuned model")
    _check_same_shape(base, tuned)
    total = np.zeros_like(base)
    for m in tuned:
        total = total + (m - base)
    return base + float(lam) * total


def ties_retained_count(k: float, n: int) -> int:
    """Entries kept per task vector: max(1, round(k * n))."""
    return max(1, round(k * n))


def ties_merge(
    base: np.ndarray, finetuned: list[np.ndarray], k: float, lam: float
) -> np.ndarray:
    """TIES merge: per-vector magnitude top-k retention, consensus sign
    election with sgn(0) := +1, then the mean of sign-aligned retained
    entries scaled by lam on top of the base.

    Magnitude ties at the retention threshold keep the lower flat index.
    Coordinates with no aligned retained entry keep the base value.
    """
    base = np.asarray(base)
    tuned = [np.asarray(m) for m in finetuned]
    if not tuned:
        raise ValueError("ties merge needs at least one finetuned model")
    _check_same_shape(base, tuned)
    if not 0.1 <= k <= 0.99:
        raise ValueError(f"ties retention ratio {k} outside [0.1, 0.99]")

    n = base.size
    r = ties_retained_count(k, n)
    flat_base = base.reshape(-1)

    trimmed = np.zeros((len(tuned), n), dtype=base.dtype)
    retained = np.zeros((len(tuned), n), dtype=bool)
    for t, model in enumerate(tuned):
        tau = (model - base).reshape(-1)
        order = np.argsort(-np.abs(tau), kind="stable")
        keep = order[:r]
        trimmed[t, keep] = tau[keep]
        retained[t, keep] = True

    consensus = np.where(trimmed.sum(axis=0) >= 0, 1.0, -1.0)
    signs = np.where(trimmed >= 0, 1.0, -1.0)
    aligned = retained & (signs == consensus[None, :])
    count = aligned.sum(axis=0)
    summed = np.where(aligned, trimmed, 0).sum(axis=0)
    delta = np.where(count > 0, summed / np.maximum(count, 1), 0.0)
    return (flat_base + float(lam) * delta).reshape(base.shape).astype(base.dtype, copy=False)


def slerp(a: np.ndarray, b: np.ndarray, t: float) -> np.ndarray:
    """Spherical linear interpolation over the flattened tensors.

    The cosine is clamped to [-1, 1]; near-colinear inputs (sin(omega) below
    1e-6) fall back to straight linear interpolation.
    """
    a = np.asarray(a)
    b = np.asarray(b)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    if not 0.0 <= t <= 1.0:
        raise ValueError(f"slerp t {t} outside [0, 1]")
    if t == 0.0:
        return a.copy()
    if t == 1.0:
        return b.copy()

    av = a.reshape(-1).astype(np.float64)
    bv = b.reshape(-1).astype(np.float64)
    norm_a = float(np.linalg.norm(av))
    norm_b = float(np.linalg.norm(bv))
    if norm_a == 0.0 or norm_b == 0.0:
        raise ValueError("slerp requires non-zero-norm inputs")
    cos = min(1.0, max(-1.0, float(np.dot(av, bv)) / (norm_a * norm_b)))
    omega = math.acos(cos)
    sin_omega = math.sin(omega)
    if sin_omega < SLERP_COLINEAR_EPS:
        return (1.0 - t) * a + t * b
    ca = math.sin((1.0 - t) * omega) / sin_omega
    cb = math.sin(t * omega) / sin_omega
    return ca * a + cb * b


def linear_merge(models: list[np.ndarray], w: list[float]) -> np.ndarray:
    """Weighted average sum_t w_t * model_t with w on the probability simplex."""
    if len(models) != len(w):
        raise ValueError(f"{len(models)} models but {len(w)} weights")
    Linear(tuple(w))  # range and sum validation
    arrays = [np.asarray(m) for m in models]
    _check_same_shape(arrays[0], arrays[1:])
    out = np.zeros_like(arrays[0])
    for weight, arr in zip(w, arrays):
        out = out + float(weight) * arr
    return out


def sfs_scale(tensor: np.ndarray, weight_scale: float) -> np.ndarray:
    """Multiply a weight tensor by a scalar in [0.5, 1.5]."""
    lo, hi = SFS_SCALE_RANGE
    if not lo <= weight_scale <= hi:
        raise ValueError(f"weight scale {weight_scale} outside [{lo}, {hi}]")
    return np.asarray(tensor) * float(weight_scale)
