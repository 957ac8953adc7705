"""Gaussian-process model of normalized margin for deep ReLU networks.

The infinite-width prior over outputs of a depth-L ReLU MLP with layer scale
sigma is a zero-mean GP whose covariance composes the arccosine step

    h(t) = (sqrt(1 - t^2) + t * (pi - arccos t)) / pi

L-1 times on x.x'/d0 and multiplies by sigma^(2L). All stored Gram quantities
are "normalized" (the sigma^(2L) prefactor divided out), so a single
factorization serves any (gamma, sigma) pair: the interpolation posterior at a
test point is N(gamma * C1, sigma^(2L) * C2) and averaging m independent draws
gives N(gamma * C1, sigma^(2L) * C2 / m). Classification quality therefore
depends on the data only through C1, C2 and on the parameters only through the
normalized margin gamma / sigma^L (and m).
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve_triangular

from ._io import atomic_write_text
from .numerics import CHOLESKY_JITTER, cholesky

__all__ = [
    "GpModel",
    "PosteriorAtPoint",
    "arccos_step",
    "gram",
    "kernel",
    "fit",
    "posterior_batch",
    "posterior_at",
    "ensemble_draws",
    "ensemble_predict",
    "dump_model",
    "write_predictions_csv",
]

VARIANCE_FLOOR = -1e-8


def arccos_step(t) -> np.ndarray | float:
    """h(t) with the argument clamped into [-1, 1] against float round-off."""
    t = np.clip(t, -1.0, 1.0)
    result = (np.sqrt(1.0 - t * t) + t * (np.pi - np.arccos(t))) / np.pi
    return result


def _check_normalized(X: np.ndarray, name: str) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[None, :]
    norms = np.linalg.norm(X, axis=1) / np.sqrt(X.shape[1])
    worst = float(np.max(np.abs(norms - 1.0))) if X.shape[0] else 0.0
    if worst > 1e-6:
        raise ValueError(
            f"{name} rows must be hypersphere-normalized (off by {worst:.2e})"
        )
    return X


def gram(A: np.ndarray, B: np.ndarray | None = None, depth: int = 1) -> np.ndarray:
    """Normalized Gram block: h composed depth-1 times on A B^T / d0."""
    if depth < 1:
        raise ValueError("depth must be >= 1")
    A = np.asarray(A, dtype=np.float64)
    B = A if B is None else np.asarray(B, dtype=np.float64)
    K = (A @ B.T) / A.shape[1]
    for _ in range(depth - 1):
        K = arccos_step(K)
    return K


def kernel(x: np.ndarray, x_prime: np.ndarray, depth: int, sigma: float) -> float:
    """Covariance sigma^(2 depth) * h^(depth-1)(x.x'/d0) for a single pair."""
    x = np.asarray(x, dtype=np.float64).ravel()
    x_prime = np.asarray(x_prime, dtype=np.float64).ravel()
    if x.shape != x_prime.shape:
        raise ValueError("kernel inputs must share a dimension")
    value = gram(x[None, :], x_prime[None, :], depth=depth)[0, 0]
    return float(sigma ** (2 * depth) * value)


@dataclass(frozen=True)
class GpModel:
    depth: int
    sigma: float
    gamma: float
    X: np.ndarray
    Y: np.ndarray
    chol: np.ndarray            # lower factor of the jittered normalized Gram
    solve_y: np.ndarray         # refined solution of Gram^-1 Y
    solve_residual: float       # max |Y - Gram @ solve_y| actually achieved

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def normalized_margin(self) -> float:
        return self.gamma / self.sigma ** self.depth


def _refined_solve(K: np.ndarray, L: np.ndarray, b: np.ndarray,
                   max_rounds: int = 50) -> tuple[np.ndarray, float]:
    """Solve K x = b using the jittered factor L plus iterative refinement.

    The factor inverts K + jitter*I; refining against K itself removes the
    jitter bias whenever K is numerically invertible, and otherwise stops at
    the stagnation point (duplicated training rows), returning the best
    iterate.
    """
    def solve(rhs):
        return solve_triangular(
            L.T, solve_triangular(L, rhs, lower=True), lower=False
        )

    x = solve(b)
    r = b - K @ x
    res = float(np.max(np.abs(r)))
    best_x, best_res = x, res
    target = 1e-14 * max(1.0, float(np.max(np.abs(b))))
    for _ in range(max_rounds):
        if res <= target:
            break
        x = x + solve(r)
        r = b - K @ x
        prev, res = res, float(np.max(np.abs(r)))
        if res < best_res:
            best_x, best_res = x, res
        if res >= 0.5 * prev:
            break  # stagnated: Gram is singular to working precision
    return best_x, best_res


def fit(X: np.ndarray, Y: np.ndarray, depth: int, sigma: float = 1.0,
        gamma: float = 1.0, jitter: float = CHOLESKY_JITTER) -> GpModel:
    """Factorize the normalized Gram of the training set and cache Gram^-1 Y.

    X rows must be hypersphere-normalized and Y must be +/-1 labels. The
    stored quantities are sigma-free; sigma and gamma only scale predictions.
    """
    X = _check_normalized(X, "X")
    Y = np.asarray(Y, dtype=np.float64).ravel()
    if Y.shape[0] != X.shape[0]:
        raise ValueError("X and Y disagree on n")
    if not np.all(np.abs(Y) == 1.0):
        raise ValueError("Y must contain only +/-1 labels")
    if depth < 1:
        raise ValueError("depth must be >= 1")
    if sigma <= 0 or gamma <= 0:
        raise ValueError("sigma and gamma must be positive")

    K = gram(X, depth=depth)
    L = cholesky(K, jitter)
    solve_y, residual = _refined_solve(K, L, Y)
    return GpModel(depth=int(depth), sigma=float(sigma), gamma=float(gamma),
                   X=X, Y=Y, chol=L, solve_y=solve_y,
                   solve_residual=residual)


def posterior_batch(model: GpModel, Xt: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Normalized posterior coefficients (C1, C2) at each test row.

    C1 = k^T Gram^-1 Y uses the refined solve; C2 = 1 - ||L^-1 k||^2 uses the
    jittered factor, which overestimates the variance by at most the jitter
    and keeps it nonnegative (values below -1e-8 raise, tiny negatives clamp).
    """
    Xt = _check_normalized(Xt, "test inputs")
    K_cross = gram(model.X, Xt, depth=model.depth)   # (n, m)
    c1 = K_cross.T @ model.solve_y
    V = solve_triangular(model.chol, K_cross, lower=True)
    c2 = 1.0 - (V * V).sum(axis=0)
    low = float(c2.min()) if c2.size else 0.0
    if low < VARIANCE_FLOOR:
        raise FloatingPointError(
            f"posterior variance fell below tolerance: {low:.3e}"
        )
    return c1, np.maximum(c2, 0.0)


@dataclass(frozen=True)
class PosteriorAtPoint:
    mean: float
    variance: float
    c1: float
    c2: float


def posterior_at(model: GpModel, x: np.ndarray) -> PosteriorAtPoint:
    """Interpolation posterior N(gamma*C1, sigma^(2L)*C2) at one test point."""
    c1, c2 = posterior_batch(model, np.atleast_2d(x))
    scale = model.sigma ** (2 * model.depth)
    return PosteriorAtPoint(mean=float(model.gamma * c1[0]),
                            variance=float(scale * c2[0]),
                            c1=float(c1[0]), c2=float(c2[0]))


def ensemble_draws(model: GpModel, Xt: np.ndarray, m: int,
                   rng: np.random.Generator,
                   coeffs: tuple[np.ndarray, np.ndarray] | None = None) -> np.ndarray:
    """One draw per test point of the average of m iid posterior samples.

    The average follows N(gamma*C1, sigma^(2L)*C2/m) pointwise; draws are
    formed as mean + std * z with a shared standard-normal stream, so two
    parameter settings with equal gamma/sigma^L produce identical signs under
    matched seeds. Cross-test-point posterior correlations are ignored: sign
    decisions and expected accuracy only depend on the marginals.
    """
    if m < 1:
        raise ValueError("ensemble size m must be >= 1")
    c1, c2 = posterior_batch(model, Xt) if coeffs is None else coeffs
    std = model.sigma ** model.depth * np.sqrt(c2 / m)
    z = rng.standard_normal(c1.shape[0])
    return model.gamma * c1 + std * z


def ensemble_predict(model: GpModel, x: np.ndarray, m: int,
                     rng: np.random.Generator) -> tuple[float, int]:
    """Averaged-ensemble draw and its sign decision at a single point."""
    draw = float(ensemble_draws(model, np.atleast_2d(x), m, rng)[0])
    return draw, (1 if draw > 0 else -1)


def dump_model(model: GpModel, path) -> None:
    """Audit dump: hyperparameters plus the Gram solve vector."""
    payload = {
        "depth": model.depth,
        "sigma": model.sigma,
        "gamma": model.gamma,
        "n": model.n,
        "normalized_margin": model.normalized_margin,
        "solve_residual": model.solve_residual,
        "gram_inv_y": [repr(float(v)) for v in model.solve_y],
    }
    atomic_write_text(path, json.dumps(payload, indent=2))


def write_predictions_csv(path, c1: np.ndarray, c2: np.ndarray, m: int,
                          draws: np.ndarray) -> None:
    lines = ["test_index,C1,C2,m,draw,sign"]
    for i, (a, b, d) in enumerate(zip(c1, c2, draws)):
        lines.append(f"{i},{float(a)!r},{float(b)!r},{m},{float(d)!r},"
                     f"{1 if d > 0 else -1}")
    atomic_write_text(path, "\n".join(lines) + "\n")
