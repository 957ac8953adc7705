"""Render static figures from margin-lab result CSVs.

Five figure kinds, one per published CSV schema:

  margin-hist     overlaid histograms from margin report CSVs
                  (example_index,raw_margin,frob_margin,spectral_margin,correct,clean)
  margin-cdf      overlaid empirical CDFs from the same reports
  sweep-curve     margin_sweep_curve.csv
                  (sub_experiment,grid_value,normalized_abscissa,test_acc_mean,test_acc_sem,trials)
  width-errorbar  twin_sample_summary.csv
                  (width,pairs,sampled_acc_mean,sampled_acc_sem,trained_acc_mean,trained_acc_sem,...)
  ensemble-grid   ensembles_grid.csv
                  (mode,margin,m,acc_mean,acc_sem,trials)

Rendering never mutates its inputs and is deterministic: a fixed style, fixed
figure geometry, and the Agg backend mean identical inputs yield identical
image bytes.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

__all__ = ["FigureSpec", "SchemaError", "render", "FIGURE_KINDS"]

FIGURE_KINDS = ("margin-hist", "margin-cdf", "sweep-curve", "width-errorbar",
                "ensemble-grid")

_REQUIRED = {
    "margin-hist": ["raw_margin", "frob_margin", "spectral_margin", "correct",
                    "clean"],
    "margin-cdf": ["raw_margin", "frob_margin", "spectral_margin", "correct",
                   "clean"],
    "sweep-curve": ["sub_experiment", "normalized_abscissa", "test_acc_mean",
                    "test_acc_sem"],
    "width-errorbar": ["width", "sampled_acc_mean", "sampled_acc_sem",
                       "trained_acc_mean", "trained_acc_sem"],
    "ensemble-grid": ["margin", "m", "acc_mean", "acc_sem"],
}

_STYLE = {
    "figure.figsize": (6.0, 4.0),
    "figure.dpi": 120,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "font.size": 10,
}

_COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b")


class SchemaError(ValueError):
    """An input CSV does not carry the columns the figure kind needs."""


@dataclass(frozen=True)
class FigureSpec:
    kind: str
    inputs: tuple[str, ...]
    output: str
    labels: tuple[str, ...] = ()
    column: str = "frob_margin"       # margin figures: which margin to plot
    margin_filter: str = "clean-correct"  # all | correct | clean | clean-correct
    title: str = ""
    x_label: str = ""
    y_label: str = ""

    def __post_init__(self):
        if self.kind not in FIGURE_KINDS:
            raise ValueError(f"unknown figure kind {self.kind!r}; "
                             f"expected one of {FIGURE_KINDS}")
        if not self.inputs:
            raise ValueError("at least one input CSV is required")


def _read_csv(path: str, required: list[str]) -> list[dict]:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"input CSV {path} does not exist")
    with open(path, newline="") as f:
        reader = csv.DictReader(f)
        missing = [c for c in required if c not in (reader.fieldnames or [])]
        if missing:
            raise SchemaError(
                f"{path} is missing required columns {missing}; found "
                f"{reader.fieldnames}")
        return list(reader)


def _margin_values(rows: list[dict], column: str, margin_filter: str) -> np.ndarray:
    out = []
    for row in rows:
        if margin_filter in ("correct", "clean-correct") and row["correct"] != "1":
            continue
        if margin_filter in ("clean", "clean-correct") and row["clean"] != "1":
            continue
        out.append(float(row[column]))
    if not out:
        raise ValueError(f"no rows left after filter {margin_filter!r}")
    return np.asarray(out)


def _label(spec: FigureSpec, index: int) -> str:
    if index < len(spec.labels):
        return spec.labels[index]
    return Path(spec.inputs[index]).stem


def _render_margin_hist(spec: FigureSpec, ax) -> None:
    series = [_margin_values(_read_csv(p, _REQUIRED[spec.kind]), spec.column,
                             spec.margin_filter) for p in spec.inputs]
    lo = min(s.min() for s in series)
    hi = max(s.max() for s in series)
    span = (hi - lo) or 1.0
    bins = np.linspace(lo - 0.05 * span, hi + 0.05 * span, 41)
    for i, values in enumerate(series):
        ax.hist(values, bins=bins, alpha=0.55, color=_COLORS[i % len(_COLORS)],
                label=_label(spec, i), density=True)
    ax.set_xlabel(spec.x_label or spec.column.replace("_", " "))
    ax.set_ylabel(spec.y_label or "density")


def _render_margin_cdf(spec: FigureSpec, ax) -> None:
    for i, path in enumerate(spec.inputs):
        values = np.sort(_margin_values(_read_csv(path, _REQUIRED[spec.kind]),
                                        spec.column, spec.margin_filter))
        fractions = np.arange(1, values.size + 1) / values.size
        ax.step(values, fractions, where="post",
                color=_COLORS[i % len(_COLORS)], label=_label(spec, i))
    ax.set_ylim(0.0, 1.05)
    ax.set_xlabel(spec.x_label or spec.column.replace("_", " "))
    ax.set_ylabel(spec.y_label or "cumulative fraction")


def _render_sweep_curve(spec: FigureSpec, ax) -> None:
    for i, path in enumerate(spec.inputs):
        rows = _read_csv(path, _REQUIRED[spec.kind])
        rows.sort(key=lambda r: float(r["normalized_abscissa"]))
        x = np.array([float(r["normalized_abscissa"]) for r in rows])
        y = np.array([float(r["test_acc_mean"]) for r in rows])
        sem = np.array([float(r["test_acc_sem"]) for r in rows])
        name = rows[0]["sub_experiment"] if rows else _label(spec, i)
        ax.errorbar(x, y, yerr=sem, marker="o", capsize=3,
                    color=_COLORS[i % len(_COLORS)],
                    label=spec.labels[i] if i < len(spec.labels) else name)
    ax.set_xscale("log")
    ax.set_xlabel(spec.x_label or "targeted margin / layerwise Frobenius product")
    ax.set_ylabel(spec.y_label or "test accuracy")


def _render_width_errorbar(spec: FigureSpec, ax) -> None:
    rows = _read_csv(spec.inputs[0], _REQUIRED[spec.kind])
    rows.sort(key=lambda r: float(r["width"]))
    widths = np.array([float(r["width"]) for r in rows])
    for i, (prefix, label) in enumerate((("sampled", "sampled"),
                                         ("trained", "trained"))):
        mean = np.array([float(r[f"{prefix}_acc_mean"]) for r in rows])
        sem = np.array([float(r[f"{prefix}_acc_sem"]) for r in rows])
        ax.errorbar(widths, mean, yerr=sem, marker="o", capsize=3,
                    color=_COLORS[i], label=label)
    ax.set_xscale("log", base=2)
    ax.set_xlabel(spec.x_label or "hidden width")
    ax.set_ylabel(spec.y_label or "mean test accuracy")


def _render_ensemble_grid(spec: FigureSpec, ax) -> None:
    rows = _read_csv(spec.inputs[0], _REQUIRED[spec.kind])
    m_values = sorted({int(r["m"]) for r in rows})
    for i, m in enumerate(m_values):
        chosen = sorted((r for r in rows if int(r["m"]) == m),
                        key=lambda r: float(r["margin"]))
        x = np.array([float(r["margin"]) for r in chosen])
        y = np.array([float(r["acc_mean"]) for r in chosen])
        sem = np.array([float(r["acc_sem"]) for r in chosen])
        ax.errorbar(x, y, yerr=sem, marker="o", capsize=3,
                    color=_COLORS[i % len(_COLORS)], label=f"m = {m}")
    ax.set_xscale("log")
    ax.set_xlabel(spec.x_label or "targeted normalized margin")
    ax.set_ylabel(spec.y_label or "test accuracy")


_RENDERERS = {
    "margin-hist": _render_margin_hist,
    "margin-cdf": _render_margin_cdf,
    "sweep-curve": _render_sweep_curve,
    "width-errorbar": _render_width_errorbar,
    "ensemble-grid": _render_ensemble_grid,
}


def render(spec: FigureSpec) -> Path:
    """Render the figure described by ``spec`` and return the output path."""
    with plt.rc_context(_STYLE):
        fig, ax = plt.subplots()
        try:
            _RENDERERS[spec.kind](spec, ax)
            if spec.title:
                ax.set_title(spec.title)
            ax.legend(loc="best")
            out = Path(spec.output)
            out.parent.mkdir(parents=True, exist_ok=True)
            fig.savefig(out, metadata={"Software": "margin-lab-plot"})
        finally:
            plt.close(fig)
    return Path(spec.output)
