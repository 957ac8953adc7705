"""Dense linear-algebra and RNG primitives shared by every other module.

Everything operates on float64 row-major numpy arrays. All functions are pure:
inputs are never mutated, so values can be shared freely across worker threads.
"""

from __future__ import annotations

from typing import NamedTuple

import numpy as np

__all__ = [
    "DEFAULT_POWER_TOL",
    "DEFAULT_POWER_ITERS",
    "CHOLESKY_JITTER",
    "CHOLESKY_JITTER_CAP",
    "NotPositiveDefiniteError",
    "SpectralNorm",
    "as_matrix",
    "matmul",
    "frobenius_norm",
    "spectral_norm",
    "two_one_norm",
    "cholesky",
    "gaussian_sample",
    "make_rng",
    "split_rng",
]

DEFAULT_POWER_TOL = 1e-9
DEFAULT_POWER_ITERS = 1000

# Relative to mean(diag); deep arccosine Grams on near-duplicate inputs are
# near-singular, hence the wide escalation range.
CHOLESKY_JITTER = 1e-10
CHOLESKY_JITTER_CAP = 1e-4


class NotPositiveDefiniteError(RuntimeError):
    """Raised when a matrix stays indefinite after jitter escalation."""


class SpectralNorm(NamedTuple):
    """Largest singular value estimate plus convergence diagnostics."""

    value: float
    converged: bool
    iterations: int


def as_matrix(a, name: str = "matrix") -> np.ndarray:
    """Validate and return ``a`` as a 2-D float64 array."""
    m = np.asarray(a, dtype=np.float64)
    if m.ndim != 2:
        raise ValueError(f"{name} must be 2-D, got shape {m.shape}")
    return m


def matmul(a: np.ndarray, b: np.ndarray, *, transpose_a: bool = False,
           transpose_b: bool = False) -> np.ndarray:
    """Matrix product with explicit shape validation.

    The transpose flags multiply against a view, so no transposed copy is
    materialized.
    """
    a = as_matrix(a, "a")
    b = as_matrix(b, "b")
    left = a.T if transpose_a else a
    right = b.T if transpose_b else b
    if left.shape[1] != right.shape[0]:
        raise ValueError(
            f"matmul dimension mismatch: {left.shape} x {right.shape}"
        )
    return left @ right


def frobenius_norm(a: np.ndarray) -> float:
    """sqrt of the sum of squared entries."""
    return float(np.linalg.norm(as_matrix(a)))


def two_one_norm(a: np.ndarray) -> float:
    """Sum over columns of each column's Euclidean norm."""
    a = as_matrix(a)
    return float(np.sqrt((a * a).sum(axis=0)).sum())


def spectral_norm(a: np.ndarray, tol: float = DEFAULT_POWER_TOL,
                  max_iter: int = DEFAULT_POWER_ITERS,
                  rng: np.random.Generator | None = None) -> SpectralNorm:
    """Largest singular value via power iteration on ``a.T @ a``.

    Iterates v <- a.T (a v) with a random start vector and tracks the Rayleigh
    estimate of the top eigenvalue of a.T a; convergence is declared when its
    relative change drops below ``tol``. A non-converged result is returned
    with ``converged=False`` rather than raised.
    """
    a = as_matrix(a)
    if tol <= 0:
        raise ValueError("tol must be positive")
    if rng is None:
        rng = make_rng(0)
    v = rng.standard_normal(a.shape[1])
    nv = np.linalg.norm(v)
    if nv == 0.0:  # cannot happen with a continuous draw; belt and braces
        v = np.ones(a.shape[1])
        nv = np.linalg.norm(v)
    v /= nv

    estimate = 0.0
    for it in range(1, max_iter + 1):
        av = a @ v
        lam = float(av @ av)  # Rayleigh quotient of a.T a at unit v
        if lam == 0.0:
            # v is (numerically) in the null space; for a dense random start
            # this only happens when a itself is zero.
            return SpectralNorm(0.0, True, it)
        w = a.T @ av
        v = w / np.linalg.norm(w)
        if it > 1 and abs(lam - estimate) <= tol * lam:
            return SpectralNorm(float(np.sqrt(lam)), True, it)
        estimate = lam
    return SpectralNorm(float(np.sqrt(estimate)), False, max_iter)


def _first_bad_pivot(a: np.ndarray) -> tuple[int, float]:
    """Run a plain Cholesky until the first non-positive pivot."""
    n = a.shape[0]
    L = np.zeros_like(a)
    for j in range(n):
        pivot = a[j, j] - L[j, :j] @ L[j, :j]
        if pivot <= 0.0 or not np.isfinite(pivot):
            return j, float(pivot)
        L[j, j] = np.sqrt(pivot)
        if j + 1 < n:
            L[j + 1:, j] = (a[j + 1:, j] - L[j + 1:, :j] @ L[j, :j]) / L[j, j]
    return -1, float("inf")


def cholesky(a: np.ndarray, jitter: float = CHOLESKY_JITTER) -> np.ndarray:
    """Lower-triangular L with L L^T = a + jitter*mean(diag(a))*I.

    ``jitter`` is relative to the mean diagonal. On failure it escalates by
    factors of 10 up to ``CHOLESKY_JITTER_CAP``; past the cap the error names
    the first non-positive pivot encountered.
    """
    a = as_matrix(a)
    n, m = a.shape
    if n != m:
        raise ValueError(f"cholesky needs a square matrix, got {a.shape}")
    sym_err = float(np.max(np.abs(a - a.T))) if n else 0.0
    scale = float(np.mean(np.diag(a))) if n else 0.0
    if sym_err > 1e-10 * max(1.0, abs(scale)):
        raise ValueError(f"matrix is not symmetric (max asymmetry {sym_err:.3e})")
    if scale <= 0.0:
        scale = 1.0

    level = jitter
    while True:
        shifted = a if level == 0.0 else a + (level * scale) * np.eye(n)
        try:
            return np.linalg.cholesky(shifted)
        except np.linalg.LinAlgError:
            pass
        if level >= CHOLESKY_JITTER_CAP:
            idx, pivot = _first_bad_pivot(shifted)
            raise NotPositiveDefiniteError(
                f"matrix not positive definite after jitter escalation to "
                f"{level:.1e} (relative); first non-positive pivot "
                f"{pivot:.3e} at index {idx}"
            )
        level = CHOLESKY_JITTER if level == 0.0 else level * 10.0


def gaussian_sample(rng: np.random.Generator, n: int) -> np.ndarray:
    """n iid standard normal draws from the supplied generator."""
    if n < 1:
        raise ValueError("n must be >= 1")
    return rng.standard_normal(int(n))


def make_rng(seed: int) -> np.random.Generator:
    """Deterministic PCG64 generator; identical seed => identical stream."""
    return np.random.default_rng(np.random.SeedSequence(int(seed)))


def split_rng(seed: int, *indices: int) -> np.random.Generator:
    """Independent stream for (seed, trial-index, ...).

    Mixing is numpy's SeedSequence entropy hash over the tuple, so concurrent
    trials each own a generator that never overlaps the parent stream.
    """
    return np.random.default_rng(
        np.random.SeedSequence((int(seed), *[int(i) for i in indices]))
    )
