"""Dense linear algebra helpers shared by the rest of the package.

Matrices are plain 2-D ``float64`` numpy arrays. Every public function
validates shapes up front and refuses to return non-finite values.
"""
from __future__ import annotations

import numpy as np


class ShapeError(ValueError):
    """Operand shapes are incompatible."""


class RankDeficientError(np.linalg.LinAlgError):
    """A solve needed full rank and did not get it."""


def as_matrix(m, name: str = "matrix") -> np.ndarray:
    arr = np.asarray(m, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr.reshape(1, -1)
    if arr.ndim != 2:
        raise ShapeError(f"{name} must be 2-D, got shape {arr.shape}")
    return arr


def ensure_finite(m: np.ndarray, name: str = "result") -> np.ndarray:
    if not np.all(np.isfinite(m)):
        raise FloatingPointError(f"{name} contains non-finite values")
    return m


def make_rng(seed: int, *stream: int) -> np.random.Generator:
    """Seeded PCG64 stream; identical seeds give identical samples everywhere.

    Extra integers select an independent sub-stream of the same seed.
    """
    entropy = [int(seed) & 0xFFFFFFFFFFFFFFFF, *(int(s) for s in stream)]
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(entropy)))


def matmul(a, b) -> np.ndarray:
    a = as_matrix(a, "a")
    b = as_matrix(b, "b")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"cannot multiply {a.shape[0]}x{a.shape[1]} by {b.shape[0]}x{b.shape[1]}")
    return ensure_finite(a @ b)


def _rank_tol(s: np.ndarray, shape) -> float:
    if s.size == 0:
        return 0.0
    return float(s[0]) * max(shape) * np.finfo(np.float64).eps


def _filtered_inverse(s: np.ndarray, ridge: float) -> np.ndarray:
    # s / (s^2 + ridge) is the ridge-regularised reciprocal; equals 1/s at ridge 0
    return s / (s * s + ridge)


def solve_least_squares(a, b, ridge: float = 0.0) -> np.ndarray:
    """Return X minimising ||aX - b||^2 + ridge * ||X||^2.

    Uses the SVD of ``a`` instead of forming ``a.T @ a``. With ``ridge == 0``
    a rank-deficient ``a`` is rejected rather than silently returning the
    minimum-norm solution.
    """
    a = as_matrix(a, "a")
    b = np.asarray(b, dtype=np.float64)
    vector_rhs = b.ndim == 1
    b = b.reshape(-1, 1) if vector_rhs else as_matrix(b, "b")
    if a.shape[0] != b.shape[0]:
        raise ShapeError(f"row mismatch: a is {a.shape[0]}x{a.shape[1]}, b is {b.shape[0]}x{b.shape[1]}")
    if ridge < 0:
        raise ValueError(f"ridge must be non-negative, got {ridge}")

    u, s, vt = np.linalg.svd(a, full_matrices=False)
    if ridge == 0:
        tol = _rank_tol(s, a.shape)
        rank = int(np.sum(s > tol))
        if rank < a.shape[1]:
            raise RankDeficientError(
                f"design matrix {a.shape[0]}x{a.shape[1]} has rank {rank} < {a.shape[1]}; "
                "set ridge > 0 to regularise the solve"
            )
    x = vt.T @ (_filtered_inverse(s, ridge)[:, None] * (u.T @ b))
    ensure_finite(x, "least-squares solution")
    return x.ravel() if vector_rhs else x


def right_pinv_apply(y, w, ridge: float = 0.0) -> np.ndarray:
    """Return ``y @ w.T @ inv(w @ w.T + ridge*I)``.

    At ridge 0 this is the minimum-norm z with ``z @ w == y`` whenever ``w``
    has full row rank.
    """
    w = as_matrix(w, "w")
    y = np.asarray(y, dtype=np.float64)
    vector_in = y.ndim == 1
    y = y.reshape(1, -1) if vector_in else as_matrix(y, "y")
    if y.shape[1] != w.shape[1]:
        raise ShapeError(f"column mismatch: y is {y.shape[0]}x{y.shape[1]}, w is {w.shape[0]}x{w.shape[1]}")
    if ridge < 0:
        raise ValueError(f"ridge must be non-negative, got {ridge}")

    # w = U S Vt  =>  w.T (w w.T + rI)^-1 = V diag(s/(s^2+r)) U.T
    u, s, vt = np.linalg.svd(w, full_matrices=False)
    if ridge == 0:
        tol = _rank_tol(s, w.shape)
        if s.size < w.shape[0] or s[-1] <= tol:
            smin = float(s[-1]) if s.size else 0.0
            cond = float(s[0] / smin) if smin > 0 else float("inf")
            raise RankDeficientError(
                f"w @ w.T is singular for w of shape {w.shape[0]}x{w.shape[1]} "
                f"(condition number {cond:.3e}); set ridge > 0"
            )
    z = ((y @ vt.T) * _filtered_inverse(s, ridge)) @ u.T
    ensure_finite(z, "latent recovery")
    return z.ravel() if vector_in else z


def column_stats(m) -> tuple[np.ndarray, np.ndarray]:
    """Per-column mean and population (divide-by-N) standard deviation."""
    m = as_matrix(m, "m")
    if m.shape[0] < 2:
        raise ShapeError(f"column_stats needs at least 2 rows, got {m.shape[0]}")
    return m.mean(axis=0), m.std(axis=0)
