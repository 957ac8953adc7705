"""Targeted-margin squared loss and the two full-batch optimizers.

The loss is the plain (unnormalized) sum over examples and output coordinates

    L(w) = sum_i || f(x_i; w) - alpha_i * y_i ||^2,

so driving it to zero pins every training margin to its target alpha_i.
``train_gd`` runs vanilla gradient descent with exponential step decay;
``train_nero`` runs the row-wise adaptive update with the zero-sum/unit-norm
row projection after every step, which keeps ||W_l||_F = sqrt(d_l) throughout
and therefore makes the Frobenius-normalized margin equal the raw margin.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from . import network
from ._io import atomic_write_text
from .dataset import Task
from .margins import raw_margins

__all__ = [
    "TrainingDivergence",
    "LossSpec",
    "OptimizerConfig",
    "TrainLog",
    "build_loss_spec",
    "loss_and_grad",
    "train_gd",
    "train_nero",
]

DIVERGENCE_LIMIT = 1e12
NERO_EPS = 1e-8


class TrainingDivergence(RuntimeError):
    """Loss became non-finite or exceeded the divergence guard."""


@dataclass(frozen=True)
class LossSpec:
    """Target matrix alpha_i * y_i: +/-alpha_i scalars or scaled one-hot rows."""

    targets: np.ndarray


@dataclass(frozen=True)
class OptimizerConfig:
    kind: str = "nero"               # "gd" | "nero"
    lr: float = 0.01
    lr_decay: float = 1.0            # multiplicative per-epoch factor
    nero_beta: float = 0.999
    epochs: int = 1000
    loss_threshold: float | None = None
    accuracy_threshold: float | None = None

    def __post_init__(self):
        if self.kind not in ("gd", "nero"):
            raise ValueError(f"unknown optimizer kind {self.kind!r}")
        if self.lr <= 0:
            raise ValueError("learning rate must be positive")
        if not 0.0 < self.lr_decay <= 1.0:
            raise ValueError("lr_decay must lie in (0, 1]")
        if not 0.0 <= self.nero_beta < 1.0:
            raise ValueError("nero_beta must lie in [0, 1)")

    def to_json(self) -> str:
        return json.dumps(self.__dict__, sort_keys=True)


@dataclass
class TrainLog:
    epochs: list[int] = field(default_factory=list)
    losses: list[float] = field(default_factory=list)
    accuracies: list[float] = field(default_factory=list)
    lrs: list[float] = field(default_factory=list)
    stop_reason: str = "epoch-budget"

    def record(self, epoch: int, loss: float, accuracy: float, lr: float):
        self.epochs.append(epoch)
        self.losses.append(loss)
        self.accuracies.append(accuracy)
        self.lrs.append(lr)

    @property
    def final_loss(self) -> float:
        return self.losses[-1]

    @property
    def final_accuracy(self) -> float:
        return self.accuracies[-1]

    def to_csv(self, path) -> None:
        lines = ["epoch,loss,train_accuracy,lr"]
        for row in zip(self.epochs, self.losses, self.accuracies, self.lrs):
            lines.append(f"{row[0]},{row[1]!r},{row[2]!r},{row[3]!r}")
        atomic_write_text(path, "\n".join(lines) + "\n")


def build_loss_spec(task: Task, targets: np.ndarray | None = None) -> LossSpec:
    """Targets alpha_i * y_i, or an explicit override matrix (e.g. when a
    network is trained to mimic another network's outputs)."""
    if targets is None:
        targets = task.alpha[:, None] * task.targets
    targets = np.asarray(targets, dtype=np.float64)
    if targets.shape[0] != task.n:
        raise ValueError("targets row count does not match the task")
    return LossSpec(targets=targets)


def loss_and_grad(net: network.Mlp, task: Task,
                  targets: np.ndarray | None = None):
    """Loss, per-layer gradients, and training accuracy at ``net``."""
    spec = build_loss_spec(task, targets)
    if spec.targets.shape[1] != net.dims[-1]:
        raise ValueError(
            f"targets have width {spec.targets.shape[1]}, network emits "
            f"{net.dims[-1]}"
        )
    outputs, trace = network.forward(net, task.inputs)
    diff = outputs - spec.targets
    loss = float((diff * diff).sum())
    grads = network.backward(net, trace, 2.0 * diff)
    accuracy = float((raw_margins(outputs, task.labels, task.mode) > 0.0).mean())
    return loss, grads, accuracy


def _check_divergence(loss: float, epoch: int, kind: str):
    if not np.isfinite(loss) or loss > DIVERGENCE_LIMIT:
        raise TrainingDivergence(
            f"{kind} diverged at epoch {epoch}: loss={loss:.3e}"
        )


def _stop_reason(cfg: OptimizerConfig, loss: float, accuracy: float) -> str | None:
    if cfg.loss_threshold is not None and loss < cfg.loss_threshold:
        return "loss-threshold"
    if cfg.accuracy_threshold is not None and accuracy >= cfg.accuracy_threshold:
        return "accuracy-threshold"
    return None


def train_gd(net: network.Mlp, task: Task, cfg: OptimizerConfig,
             targets: np.ndarray | None = None):
    """Full-batch gradient descent: w <- w - lr_t * grad, lr_t decaying."""
    if cfg.kind != "gd":
        raise ValueError("config kind must be 'gd'")
    weights = [w.copy() for w in net.weights]
    current = network.Mlp(dims=net.dims, weights=weights)
    log = TrainLog()
    lr = cfg.lr
    for epoch in range(cfg.epochs):
        loss, grads, acc = loss_and_grad(current, task, targets)
        _check_divergence(loss, epoch, "gd")
        log.record(epoch, loss, acc, lr)
        reason = _stop_reason(cfg, loss, acc)
        if reason:
            log.stop_reason = reason
            return current, log
        weights = [w - lr * g for w, g in zip(current.weights, grads)]
        current = network.Mlp(dims=net.dims, weights=weights)
        lr *= cfg.lr_decay
    loss, _, acc = loss_and_grad(current, task, targets)
    log.record(cfg.epochs, loss, acc, lr)
    return current, log


def train_nero(net: network.Mlp, task: Task, cfg: OptimizerConfig,
               targets: np.ndarray | None = None):
    """Row-adaptive projected descent (the published Nero form).

    Per step and per weight row: a running average of the squared gradient
    row-norm with coefficient beta (bias-corrected) scales the row update by
    ||w_row|| / (sqrt(avg) + eps); afterwards every row is re-centered to zero
    sum and unit norm. The network is projected once up front, so the row
    constraints hold at every step of the trajectory.
    """
    if cfg.kind != "nero":
        raise ValueError("config kind must be 'nero'")
    current = network.nero_project(net)
    state = [np.zeros(w.shape[0]) for w in current.weights]
    log = TrainLog()
    lr = cfg.lr
    for epoch in range(cfg.epochs):
        loss, grads, acc = loss_and_grad(current, task, targets)
        _check_divergence(loss, epoch, "nero")
        log.record(epoch, loss, acc, lr)
        reason = _stop_reason(cfg, loss, acc)
        if reason:
            log.stop_reason = reason
            return current, log
        correction = 1.0 - cfg.nero_beta ** (epoch + 1)
        new_weights = []
        for l, (w, g) in enumerate(zip(current.weights, grads)):
            grad_row_sq = (g * g).sum(axis=1)
            state[l] = cfg.nero_beta * state[l] + (1.0 - cfg.nero_beta) * grad_row_sq
            denom = np.sqrt(state[l] / correction) + NERO_EPS
            row_norm = np.linalg.norm(w, axis=1)
            new_weights.append(w - lr * (row_norm / denom)[:, None] * g)
        current = network.nero_project(
            network.Mlp(dims=net.dims, weights=new_weights)
        )
        lr *= cfg.lr_decay
    loss, _, acc = loss_and_grad(current, task, targets)
    log.record(cfg.epochs, loss, acc, lr)
    return current, log
