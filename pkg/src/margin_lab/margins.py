"""Raw, Frobenius-normalized, and spectrally-normalized margins.

Conventions. For a binary head the margin of (x, y) is f(x) * y; for a k-way
head it is the true-class output minus the best other output. The
Frobenius-normalized margin multiplies by prod_l sqrt(d_l)/||W_l||_F and by
sqrt(d0)/||x||_2; the spectrally-normalized margin divides by the spectral
complexity

    R_w = (prod_l ||W_l||_sigma)
          * (sum_l ||W_l^T - M_l^T||_{2,1}^{2/3} / ||W_l||_sigma^{2/3})^{3/2}

where M is a reference network fixed before training (weights at
initialization by default, or zero).
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from . import network
from ._io import atomic_write_text
from .dataset import Task
from .numerics import (
    DEFAULT_POWER_ITERS,
    DEFAULT_POWER_TOL,
    spectral_norm,
    split_rng,
    two_one_norm,
)

__all__ = [
    "MarginReport",
    "raw_margins",
    "margin",
    "frobenius_factor",
    "spectral_complexity",
    "report",
    "margin_cdf",
    "cdf_median",
    "wasserstein1",
    "write_report_csv",
    "write_summary_json",
]


def raw_margins(outputs: np.ndarray, labels: np.ndarray, mode: str) -> np.ndarray:
    """Vector of per-example margins from a batch of network outputs."""
    outputs = np.asarray(outputs, dtype=np.float64)
    if mode == "binary":
        return outputs[:, 0] * np.asarray(labels, dtype=np.float64)
    if mode != "multiclass":
        raise ValueError(f"unknown mode {mode!r}")
    labels = np.asarray(labels, dtype=np.int64)
    if labels.min() < 0 or labels.max() >= outputs.shape[1]:
        raise ValueError("label out of range for the network's output width")
    n = outputs.shape[0]
    true_scores = outputs[np.arange(n), labels]
    masked = outputs.copy()
    masked[np.arange(n), labels] = -np.inf
    return true_scores - masked.max(axis=1)


def margin(net: network.Mlp, x: np.ndarray, y) -> float:
    """Margin of a single example; y is +/-1 (binary head) or a class index."""
    out, _ = network.forward(net, np.atleast_2d(x))
    if net.dims[-1] == 1:
        if y not in (-1, 1, -1.0, 1.0):
            raise ValueError("binary label must be +/-1")
        return float(out[0, 0] * y)
    return float(raw_margins(out, np.array([int(y)]), "multiclass")[0])


def frobenius_factor(net: network.Mlp) -> float:
    """prod_l sqrt(d_l) / ||W_l||_F; equals 1 for projected networks."""
    factor = 1.0
    for w in net.weights:
        factor *= np.sqrt(w.shape[0]) / np.linalg.norm(w)
    return float(factor)


def spectral_complexity(net: network.Mlp, ref=None,
                        tol: float = DEFAULT_POWER_TOL,
                        max_iter: int = DEFAULT_POWER_ITERS,
                        rng: np.random.Generator | None = None) -> float:
    """Spectral complexity of ``net`` against reference weights ``ref``.

    ``ref`` is a list of matrices matching the layer shapes (zero matrices
    when None). Spectral norms come from power iteration; each layer's norm is
    computed once and shared between the product and the correction sum.
    """
    if rng is None:
        rng = split_rng(0, 0x50EC)
    ref_weights = ref.weights if isinstance(ref, network.Mlp) else ref
    if ref_weights is None:
        ref_weights = [np.zeros_like(w) for w in net.weights]
    if len(ref_weights) != net.depth:
        raise ValueError("reference network depth mismatch")

    product = 1.0
    correction = 0.0
    for l, (w, m) in enumerate(zip(net.weights, ref_weights)):
        if w.shape != m.shape:
            raise ValueError(f"reference layer {l} has shape {m.shape}, "
                             f"expected {w.shape}")
        sigma = spectral_norm(w, tol=tol, max_iter=max_iter, rng=rng).value
        if sigma == 0.0:
            raise ValueError(f"layer {l} has zero spectral norm")
        dist = two_one_norm((w - m).T)
        product *= sigma
        correction += dist ** (2.0 / 3.0) / sigma ** (2.0 / 3.0)
    return float(product * correction ** 1.5)


@dataclass(frozen=True)
class MarginReport:
    """Per-example margin statistics for one network on one task."""

    raw: np.ndarray
    frob: np.ndarray
    spectral: np.ndarray
    complexity: float
    correct: np.ndarray
    clean: np.ndarray

    @property
    def n(self) -> int:
        return self.raw.shape[0]


def report(net: network.Mlp, task: Task, ref=None, *, inputs_normalized=True,
           rng: np.random.Generator | None = None) -> MarginReport:
    """Full margin report; spectral norms are computed once per layer.

    The per-example input factor sqrt(d0)/||x|| is evaluated from the task
    inputs; for hypersphere-normalized tasks it is 1 to float precision.
    """
    outputs, _ = network.forward(net, task.inputs)
    gamma = raw_margins(outputs, task.labels, task.mode)
    input_factor = np.sqrt(task.input_dim) / np.linalg.norm(task.inputs, axis=1)
    if inputs_normalized:
        worst = float(np.max(np.abs(input_factor - 1.0)))
        if worst > 1e-9:
            raise ValueError(
                f"task inputs are not hypersphere-normalized (off by {worst:.2e})"
            )
    complexity = spectral_complexity(net, ref, rng=rng)
    frob = gamma * frobenius_factor(net) * input_factor
    spectral = gamma / complexity * input_factor
    return MarginReport(raw=gamma, frob=frob, spectral=spectral,
                        complexity=complexity, correct=gamma > 0.0,
                        clean=task.clean.copy())


_KINDS = {"raw": "raw", "frob": "frob", "spectral": "spectral"}


def _filtered(rep: MarginReport, which: str, filter: str) -> np.ndarray:
    values = getattr(rep, _KINDS[which])
    if filter == "all":
        mask = np.ones(rep.n, dtype=bool)
    elif filter == "correct-only":
        mask = rep.correct
    elif filter == "clean-only":
        mask = rep.clean
    elif filter == "clean-correct":
        mask = rep.clean & rep.correct
    else:
        raise ValueError(f"unknown filter {filter!r}")
    picked = values[mask]
    if picked.size == 0:
        raise ValueError(f"no margins left after filter {filter!r}")
    return picked


def margin_cdf(rep: MarginReport, which: str = "frob",
               filter: str = "all") -> np.ndarray:
    """Empirical CDF support points: sorted (value, cumulative fraction)."""
    values = np.sort(_filtered(rep, which, filter))
    fractions = np.arange(1, values.size + 1) / values.size
    return np.column_stack([values, fractions])


def cdf_median(rep: MarginReport, which: str = "frob",
               filter: str = "all") -> float:
    return float(np.median(_filtered(rep, which, filter)))


def wasserstein1(a: np.ndarray, b: np.ndarray) -> float:
    """Wasserstein-1 distance between two empirical margin samples."""
    from scipy.stats import wasserstein_distance

    return float(wasserstein_distance(np.asarray(a), np.asarray(b)))


def write_report_csv(rep: MarginReport, path) -> None:
    lines = ["example_index,raw_margin,frob_margin,spectral_margin,correct,clean"]
    for i in range(rep.n):
        lines.append(",".join([
            str(i), repr(float(rep.raw[i])), repr(float(rep.frob[i])),
            repr(float(rep.spectral[i])), str(int(rep.correct[i])),
            str(int(rep.clean[i])),
        ]))
    atomic_write_text(path, "\n".join(lines) + "\n")


def write_summary_json(rep: MarginReport, path, which: str = "frob",
                       filter: str = "all") -> dict:
    values = _filtered(rep, which, filter)
    q1, q2, q3 = (float(q) for q in np.percentile(values, [25, 50, 75]))
    summary = {
        "which": which,
        "filter": filter,
        "count": int(values.size),
        "mean": float(values.mean()),
        "median": q2,
        "quartiles": [q1, q2, q3],
        "spectral_complexity": rep.complexity,
    }
    atomic_write_text(path, json.dumps(summary, indent=2))
    return summary
