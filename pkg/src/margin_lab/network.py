"""Bias-free ReLU multilayer perceptron with exact manual gradients.

The predictor is x -> W_L relu(W_{L-1} ... relu(W_1 x)), which is positive
homogeneous of degree L in the weights and degree 1 in the input. Weight
matrices are stored as (d_l, d_{l-1}) float64 arrays; there are no bias terms
(they would break the homogeneity the margin definitions rely on).

Mlp values are treated as immutable snapshots: every public operation returns
new arrays, so parallel trials can share instances freely.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .numerics import matmul

__all__ = [
    "Mlp",
    "ForwardTrace",
    "init",
    "forward",
    "backward",
    "frobenius_project",
    "nero_project",
    "save_checkpoint",
    "load_checkpoint",
]

CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class Mlp:
    dims: tuple[int, ...]
    weights: list[np.ndarray]

    def __post_init__(self):
        if len(self.weights) != len(self.dims) - 1:
            raise ValueError("need one weight matrix per layer")
        for l, w in enumerate(self.weights):
            want = (self.dims[l + 1], self.dims[l])
            if w.shape != want:
                raise ValueError(
                    f"layer {l} has shape {w.shape}, expected {want}"
                )

    @property
    def depth(self) -> int:
        return len(self.weights)


@dataclass(frozen=True)
class ForwardTrace:
    """Per-layer pre/post activations for one batch, consumed by backward."""

    inputs: np.ndarray
    pre: list[np.ndarray]    # z_l, one per layer
    post: list[np.ndarray]   # relu(z_l) for l < L; post[-1] is z_L itself


def init(dims, scale: float = 1.0, rule: str = "all-layers",
         rng: np.random.Generator | None = None) -> Mlp:
    """Gaussian init with variance scale^2 / fan-in.

    Base variance 1/fan-in makes ``scale`` commensurate with the prior scale
    of the infinite-width Gaussian process model (scale=1 <=> sigma=1).
    ``rule`` selects whether ``scale`` multiplies every layer or only the
    first one.
    """
    if scale <= 0:
        raise ValueError("scale must be positive")
    if rule not in ("all-layers", "first-layer-only"):
        raise ValueError(f"unknown init rule {rule!r}")
    if rng is None:
        raise ValueError("init needs an explicit rng for reproducibility")
    dims = tuple(int(d) for d in dims)
    weights = []
    for l in range(len(dims) - 1):
        layer_scale = scale if (rule == "all-layers" or l == 0) else 1.0
        std = layer_scale / np.sqrt(dims[l])
        weights.append(std * rng.standard_normal((dims[l + 1], dims[l])))
    return Mlp(dims=dims, weights=weights)


def forward(net: Mlp, inputs: np.ndarray) -> tuple[np.ndarray, ForwardTrace]:
    """Batched forward pass; returns (n, d_L) outputs plus the trace."""
    inputs = np.asarray(inputs, dtype=np.float64)
    if inputs.ndim == 1:
        inputs = inputs[None, :]
    if inputs.shape[1] != net.dims[0]:
        raise ValueError(
            f"inputs have dimension {inputs.shape[1]}, network expects {net.dims[0]}"
        )
    pre, post = [], []
    h = inputs
    last = net.depth - 1
    for l, w in enumerate(net.weights):
        z = matmul(h, w, transpose_b=True)
        pre.append(z)
        h = z if l == last else np.maximum(z, 0.0)
        post.append(h)
    return post[-1], ForwardTrace(inputs=inputs, pre=pre, post=post)


def backward(net: Mlp, trace: ForwardTrace, output_grad: np.ndarray) -> list[np.ndarray]:
    """Exact gradients of the traced forward pass w.r.t. each weight matrix.

    ``output_grad`` is dLoss/dOutput with the output's (n, d_L) shape. The
    ReLU subgradient at exactly zero is taken to be zero.
    """
    output_grad = np.asarray(output_grad, dtype=np.float64)
    if output_grad.shape != trace.pre[-1].shape:
        raise ValueError(
            f"output_grad shape {output_grad.shape} does not match trace "
            f"{trace.pre[-1].shape}"
        )
    grads: list[np.ndarray] = [None] * net.depth
    delta = output_grad
    for l in range(net.depth - 1, -1, -1):
        h_prev = trace.inputs if l == 0 else trace.post[l - 1]
        grads[l] = matmul(delta, h_prev, transpose_a=True)
        if l > 0:
            delta = matmul(delta, net.weights[l]) * (trace.pre[l - 1] > 0.0)
    return grads


def frobenius_project(net: Mlp) -> Mlp:
    """Rescale each layer to Frobenius norm sqrt(d_l). Idempotent."""
    weights = []
    for l, w in enumerate(net.weights):
        norm = np.linalg.norm(w)
        if norm == 0.0:
            raise ValueError(f"cannot project all-zero weight matrix (layer {l})")
        weights.append(w * (np.sqrt(w.shape[0]) / norm))
    return Mlp(dims=net.dims, weights=weights)


def nero_project(net: Mlp) -> Mlp:
    """Center every weight row to zero sum and rescale it to unit norm.

    Implies Frobenius norm sqrt(d_l) per layer. Rows of width 1 cannot be
    centered (they would vanish), so they are only normalized; any other row
    that is constant has no direction left after centering and is an error.
    """
    weights = []
    for l, w in enumerate(net.weights):
        if w.shape[1] > 1:
            centered = w - w.mean(axis=1, keepdims=True)
        else:
            centered = w.copy()
        norms = np.linalg.norm(centered, axis=1)
        bad = np.flatnonzero(norms == 0.0)
        if bad.size:
            raise ValueError(
                f"constant row {int(bad[0])} in layer {l} cannot satisfy the "
                f"zero-sum unit-norm constraint"
            )
        weights.append(centered / norms[:, None])
    return Mlp(dims=net.dims, weights=weights)


def save_checkpoint(net: Mlp, path) -> None:
    """Versioned binary container; float64 payload round-trips bit-exactly."""
    arrays = {f"W{l}": w for l, w in enumerate(net.weights)}
    np.savez(
        path,
        format_version=np.array(CHECKPOINT_VERSION, dtype=np.int64),
        dims=np.array(net.dims, dtype=np.int64),
        **arrays,
    )


def load_checkpoint(path) -> Mlp:
    with np.load(path, allow_pickle=False) as data:
        version = int(data["format_version"])
        if version != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {version}")
        dims = tuple(int(d) for d in data["dims"])
        weights = [np.ascontiguousarray(data[f"W{l}"], dtype=np.float64)
                   for l in range(len(dims) - 1)]
    return Mlp(dims=dims, weights=weights)
