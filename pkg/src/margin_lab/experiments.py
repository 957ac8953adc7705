"""Experiment drivers for the controlled studies, plus result persistence.

Every study takes one ExperimentConfig, runs its trials (optionally in a
thread pool; results are keyed by trial index so scheduling order never
matters), and writes results under ``<out_dir>/<study>/``:

  manifest.json   config echo, seeds, dataset fingerprint, wall times, failures
  trials.csv      one row per trial (schema depends on the study)
  + study-specific CSVs (margin reports, sweep curves, ensemble grids)

CSV files contain no timestamps and all floats are written with repr(), so a
rerun with the same config and seed is byte-identical; timing lives in the
manifest only. Files are written to a temp path and renamed, so a crashed run
never leaves partial files at final paths.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import dataset as ds
from . import network, nngp, training
from . import margins as mg
from ._io import atomic_write_text
from .numerics import split_rng

__all__ = [
    "ExperimentConfig",
    "ExperimentResult",
    "run_spectral_reversal",
    "run_twin_attack",
    "run_twin_sample",
    "run_margin_sweep",
    "run_ensembles",
    "run_study",
    "STUDIES",
]


@dataclass(frozen=True)
class ExperimentConfig:
    """Bag of every knob a study reads; echoed verbatim into results."""

    study: str
    out_dir: str = "results"
    data_dir: str | None = None
    seed: int = 0                       # data subset / shared randomness
    seeds: tuple[int, ...] = (0,)       # per-trial seeds
    threads: int = 1

    dims: tuple[int, ...] = (784, 512, 512, 10)
    n_train: int = 500
    n_test: int | None = None           # None -> whole test split
    classes: str | None = None          # None | "even-odd" | "0v1" | "3v8" | "4v7"

    optimizer: str = "nero"
    lr: float = 0.02
    lr_decay: float = 0.9995
    nero_beta: float = 0.999
    epochs: int = 4000
    loss_threshold: float | None = None  # scaled by alpha^2 per variant

    alpha: float = 1.0
    alpha_true: float = 1.0
    alpha_random: float = 100.0
    attack_size: int = 1000

    widths: tuple[int, ...] = (256,)
    hidden_layers: int = 3
    pairs: int = 100
    rejection_cap: int = 1_000_000
    mimic_threshold: float = 1e-6       # L2 distance between twin outputs

    sweep: str = "normalized-margin"    # init-scale | margin | normalized-margin
    grid: tuple[float, ...] = (0.01, 0.1, 1.0, 10.0)
    init_rule: str = "all-layers"

    mode: str = "gp"                    # ensembles: gp | nn
    m_values: tuple[int, ...] = (1, 10, 100)
    margins: tuple[float, ...] = (1e-3, 1e-2, 1e-1, 1.0, 10.0)
    gp_depth: int = 5
    gp_sigma: float = 1.0

    def echo(self) -> dict:
        return dataclasses.asdict(self)

    def resolve_data_dir(self) -> Path:
        return Path(self.data_dir) if self.data_dir else ds.default_data_dir()


@dataclass
class ExperimentResult:
    study: str
    config: dict
    trials: list[dict] = field(default_factory=list)
    failures: list[dict] = field(default_factory=list)
    aggregates: dict = field(default_factory=dict)
    out_dir: Path | None = None

    @property
    def effective_trials(self) -> int:
        return len(self.trials)


def _mean_sem(values) -> tuple[float, float]:
    """Mean and standard error (sample stddev / sqrt(n); 0 for one trial)."""
    arr = np.asarray(list(values), dtype=np.float64)
    if arr.size == 0:
        return float("nan"), float("nan")
    if arr.size == 1:
        return float(arr[0]), 0.0
    return float(arr.mean()), float(arr.std(ddof=1) / np.sqrt(arr.size))


def _fmt(value) -> str:
    if isinstance(value, (bool, np.bool_)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(value)


def write_csv(path: Path, header: list[str], rows: list[list]) -> None:
    lines = [",".join(header)]
    lines.extend(",".join(_fmt(v) for v in row) for row in rows)
    atomic_write_text(Path(path), "\n".join(lines) + "\n")


def _dataset_fingerprint(data_dir: Path) -> dict:
    digest = hashlib.sha256()
    names = []
    for name in sorted(os.listdir(data_dir)):
        p = data_dir / name
        if p.is_file() and ("ubyte" in name or name.endswith(".json")):
            digest.update(name.encode())
            digest.update(p.read_bytes())
            names.append(name)
    return {"dir": str(data_dir), "files": names, "sha256": digest.hexdigest()}


def _run_trials(indices, fn, threads: int):
    """Run fn(index) for every index; exceptions become failure records."""
    outcomes: dict[int, dict] = {}
    failures: dict[int, dict] = {}

    def wrapped(i):
        try:
            return i, fn(i), None
        except (training.TrainingDivergence, RuntimeError, ValueError) as exc:
            return i, None, {"trial": i, "error": f"{type(exc).__name__}: {exc}"}

    if threads <= 1:
        results = map(wrapped, indices)
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(wrapped, indices))
    for i, record, failure in results:
        if failure is not None:
            failures[i] = failure
        else:
            outcomes[i] = record
    return ([outcomes[i] for i in sorted(outcomes)],
            [failures[i] for i in sorted(failures)])


def _study_dir(cfg: ExperimentConfig) -> Path:
    path = Path(cfg.out_dir) / cfg.study
    path.mkdir(parents=True, exist_ok=True)
    return path


def _finish(result: ExperimentResult, cfg: ExperimentConfig, out: Path,
            started: float, extra: dict | None = None) -> ExperimentResult:
    manifest = {
        "study": cfg.study,
        "config": cfg.echo(),
        "dataset": _dataset_fingerprint(cfg.resolve_data_dir()),
        "effective_trials": result.effective_trials,
        "failures": result.failures,
        "aggregates": result.aggregates,
        "wall_time_s": time.time() - started,
    }
    if extra:
        manifest.update(extra)
    atomic_write_text(out / "manifest.json", json.dumps(manifest, indent=2, default=str))
    result.out_dir = out
    return result


def _load_data(cfg: ExperimentConfig):
    data_dir = cfg.resolve_data_dir()
    return ds.load_split(data_dir, "train"), ds.load_split(data_dir, "test")


def _classes_token(classes: str | None):
    if classes is None:
        return None
    if classes == "even-odd":
        return "even-odd"
    return ds.BINARY_PAIRS[classes]


def _test_task(test_raw, cfg: ExperimentConfig) -> ds.Task:
    n = cfg.n_test if cfg.n_test else test_raw.n
    token = _classes_token(cfg.classes)
    if token is not None and token != "even-odd":
        available = int(np.isin(test_raw.labels, token).sum())
        n = min(n, available)
    return ds.make_task(test_raw, ds.TaskSpec(
        subset=min(n, test_raw.n), scheme="true", classes=token,
        seed=cfg.seed + 101))


def test_accuracy(net: network.Mlp, task: ds.Task) -> float:
    out, _ = network.forward(net, task.inputs)
    return float((mg.raw_margins(out, task.labels, task.mode) > 0.0).mean())


def _optimizer_cfg(cfg: ExperimentConfig, alpha: float = 1.0,
                   **overrides) -> training.OptimizerConfig:
    threshold = cfg.loss_threshold
    if threshold is not None:
        threshold = threshold * alpha * alpha
    base = dict(kind=cfg.optimizer, lr=cfg.lr, lr_decay=cfg.lr_decay,
                nero_beta=cfg.nero_beta, epochs=cfg.epochs,
                loss_threshold=threshold)
    base.update(overrides)
    return training.OptimizerConfig(**base)


def _train(net, task, opt_cfg, targets=None):
    if opt_cfg.kind == "nero":
        return training.train_nero(net, task, opt_cfg, targets)
    return training.train_gd(net, task, opt_cfg, targets)


def _reference_for(net0, optimizer: str):
    # spectral complexity is taken against the weights the trajectory actually
    # started from: nero projects once before stepping
    return network.nero_project(net0) if optimizer == "nero" else net0


# --------------------------------------------------------------------------
# spectral reversal (margin-distribution comparison, true vs random labels)
# --------------------------------------------------------------------------

def run_spectral_reversal(cfg: ExperimentConfig) -> ExperimentResult:
    started = time.time()
    train_raw, test_raw = _load_data(cfg)
    out = _study_dir(cfg)
    eval_task = _test_task(test_raw, cfg)

    def trial(seed: int) -> dict:
        record: dict = {"seed": seed}
        for idx, (variant, scheme, alpha) in enumerate(
                (("true", "true", cfg.alpha_true),
                 ("random", "random", cfg.alpha_random))):
            task = ds.make_task(train_raw, ds.TaskSpec(
                subset=cfg.n_train, scheme=scheme, seed=seed, alpha=alpha))
            net0 = network.init(cfg.dims, rng=split_rng(seed, 0xF15, idx))
            t0 = time.time()
            trained, log = _train(net0, task, _optimizer_cfg(cfg, alpha))
            rep = mg.report(trained, task, _reference_for(net0, cfg.optimizer),
                            rng=split_rng(seed, 0xAB))
            mg.write_report_csv(rep, out / f"margins_{variant}_seed{seed}.csv")
            record[variant] = {
                "alpha": alpha,
                "train_accuracy": log.final_accuracy,
                "final_loss": log.final_loss,
                "test_accuracy": test_accuracy(trained, eval_task),
                "median_raw_margin": mg.cdf_median(rep, "raw", "correct-only"),
                "median_frob_margin": mg.cdf_median(rep, "frob", "correct-only"),
                "median_spectral_margin": mg.cdf_median(rep, "spectral",
                                                        "correct-only"),
                "spectral_complexity": rep.complexity,
                "wall_time_s": time.time() - t0,
            }
        record["reversed"] = (record["random"]["median_spectral_margin"]
                              > record["true"]["median_spectral_margin"])
        return record

    trials, failures = _run_trials(list(cfg.seeds), trial, cfg.threads)
    result = ExperimentResult(cfg.study, cfg.echo(), trials, failures)
    if trials:
        for variant in ("true", "random"):
            acc_mean, acc_sem = _mean_sem(t[variant]["test_accuracy"] for t in trials)
            result.aggregates[f"{variant}_test_accuracy_mean"] = acc_mean
            result.aggregates[f"{variant}_test_accuracy_sem"] = acc_sem
        result.aggregates["reversal_fraction"] = float(
            np.mean([t["reversed"] for t in trials]))
    header = ["seed", "variant", "alpha", "train_accuracy", "test_accuracy",
              "final_loss", "median_raw_margin", "median_frob_margin",
              "median_spectral_margin", "spectral_complexity"]
    rows = []
    for t in trials:
        for variant in ("true", "random"):
            v = t[variant]
            rows.append([t["seed"], variant, v["alpha"], v["train_accuracy"],
                         v["test_accuracy"], v["final_loss"],
                         v["median_raw_margin"], v["median_frob_margin"],
                         v["median_spectral_margin"], v["spectral_complexity"]])
    write_csv(out / "trials.csv", header, rows)
    return _finish(result, cfg, out, started)


# --------------------------------------------------------------------------
# attack-set twins
# --------------------------------------------------------------------------

def run_twin_attack(cfg: ExperimentConfig) -> ExperimentResult:
    started = time.time()
    train_raw, test_raw = _load_data(cfg)
    out = _study_dir(cfg)
    eval_task = _test_task(test_raw, cfg)

    def trial(seed: int) -> dict:
        record: dict = {"seed": seed}
        clean_margins: dict[str, np.ndarray] = {}
        # identical init for both twins; only the attack rows differ
        init_rng_seed = (seed, 0xA77AC)
        for twin, attack_size in (("control", 0), ("attack", cfg.attack_size)):
            scheme = "attack" if attack_size else "true"
            task = ds.make_task(train_raw, ds.TaskSpec(
                subset=cfg.n_train, scheme=scheme, seed=seed,
                alpha=cfg.alpha, attack_size=attack_size))
            net0 = network.init(cfg.dims, rng=split_rng(*init_rng_seed))
            t0 = time.time()
            trained, log = _train(net0, task, _optimizer_cfg(cfg, cfg.alpha))
            rep = mg.report(trained, task, _reference_for(net0, cfg.optimizer),
                            rng=split_rng(seed, 0xAC))
            mg.write_report_csv(rep, out / f"margins_{twin}_seed{seed}.csv")
            clean_margins[twin] = rep.frob[rep.clean]
            record[twin] = {
                "train_accuracy": log.final_accuracy,
                "final_loss": log.final_loss,
                "test_accuracy": test_accuracy(trained, eval_task),
                "clean_frob_margin_mean": float(clean_margins[twin].mean()),
                "clean_frob_margin_median": float(np.median(clean_margins[twin])),
                "wall_time_s": time.time() - t0,
            }
        record["wasserstein_clean_frob"] = mg.wasserstein1(
            clean_margins["control"], clean_margins["attack"])
        record["accuracy_gap"] = (record["control"]["test_accuracy"]
                                  - record["attack"]["test_accuracy"])
        return record

    trials, failures = _run_trials(list(cfg.seeds), trial, cfg.threads)
    result = ExperimentResult(cfg.study, cfg.echo(), trials, failures)
    if trials:
        gap_mean, gap_sem = _mean_sem(t["accuracy_gap"] for t in trials)
        result.aggregates.update({
            "accuracy_gap_mean": gap_mean,
            "accuracy_gap_sem": gap_sem,
            "wasserstein_mean": _mean_sem(
                t["wasserstein_clean_frob"] for t in trials)[0],
        })
    header = ["seed", "twin", "train_accuracy", "test_accuracy", "final_loss",
              "clean_frob_margin_mean", "clean_frob_margin_median",
              "wasserstein_clean_frob", "accuracy_gap"]
    rows = []
    for t in trials:
        for twin in ("control", "attack"):
            v = t[twin]
            rows.append([t["seed"], twin, v["train_accuracy"],
                         v["test_accuracy"], v["final_loss"],
                         v["clean_frob_margin_mean"],
                         v["clean_frob_margin_median"],
                         t["wasserstein_clean_frob"], t["accuracy_gap"]])
    write_csv(out / "trials.csv", header, rows)
    return _finish(result, cfg, out, started)


# --------------------------------------------------------------------------
# rejection-sampled twins
# --------------------------------------------------------------------------

def _twin_dims(cfg: ExperimentConfig, width: int) -> list[int]:
    return [784] + [width] * cfg.hidden_layers + [1]


def run_twin_sample(cfg: ExperimentConfig) -> ExperimentResult:
    started = time.time()
    train_raw, test_raw = _load_data(cfg)
    out = _study_dir(cfg)
    token = _classes_token(cfg.classes or "0v1")
    task = ds.make_task(train_raw, ds.TaskSpec(
        subset=cfg.n_train, scheme="true", classes=token, seed=cfg.seed,
        alpha=cfg.alpha, balanced=True))
    eval_task = _test_task(test_raw, cfg if cfg.classes else
                           dataclasses.replace(cfg, classes="0v1"))

    skipped: list[dict] = []

    def pair_trial(index: int) -> dict:
        width = cfg.widths[index // cfg.pairs]
        pair = index % cfg.pairs
        dims = _twin_dims(cfg, width)
        sample_rng = split_rng(cfg.seed, width, pair, 0)
        attempts = 0
        while True:
            attempts += 1
            if attempts > cfg.rejection_cap:
                raise RuntimeError(
                    f"rejection sampling exceeded {cfg.rejection_cap} attempts")
            candidate = network.frobenius_project(
                network.init(dims, rng=sample_rng))
            sampled_out, _ = network.forward(candidate, task.inputs)
            sampled_margins = sampled_out[:, 0] * task.labels
            if np.all(sampled_margins > 0.0):
                break
        min_margin = float(np.min(np.abs(sampled_margins)))
        # train past the published threshold so the relative margin error is
        # pinned by the sampled margins, not by the stopping rule
        l2_target = min(cfg.mimic_threshold, 1e-5 * min_margin)
        opt = _optimizer_cfg(cfg, 1.0, kind="nero",
                             loss_threshold=l2_target ** 2)
        # a mimic run occasionally stalls below threshold at small widths;
        # retry from a fresh init rather than keeping a bad match
        retries = 0
        for attempt_idx in range(3):
            net0 = network.init(dims,
                                rng=split_rng(cfg.seed, width, pair, 1, attempt_idx))
            trained, log = _train(net0, task, opt, targets=sampled_out)
            if log.stop_reason == "loss-threshold":
                break
            retries += 1
        else:
            raise RuntimeError(
                f"mimic training stalled for pair {pair} at width {width} "
                f"(loss {log.final_loss:.3e} after {retries} retries)")
        trained_out, _ = network.forward(trained, task.inputs)
        l2 = float(np.linalg.norm(trained_out - sampled_out))
        trained_margins = trained_out[:, 0] * task.labels
        rel_err = float(np.max(np.abs(trained_margins - sampled_margins)
                               / np.abs(sampled_margins)))
        return {
            "width": width,
            "pair": pair,
            "attempts": attempts,
            "sampled_test_accuracy": test_accuracy(candidate, eval_task),
            "trained_test_accuracy": test_accuracy(trained, eval_task),
            "output_l2_diff": l2,
            "worst_rel_margin_err": rel_err,
            "min_sampled_margin": min_margin,
            "epochs_used": log.epochs[-1],
            "mimic_retries": retries,
        }

    indices = list(range(len(cfg.widths) * cfg.pairs))
    trials, failures = _run_trials(indices, pair_trial, cfg.threads)
    skipped.extend(failures)
    result = ExperimentResult(cfg.study, cfg.echo(), trials, skipped)

    summary_rows = []
    for width in cfg.widths:
        per = [t for t in trials if t["width"] == width]
        if not per:
            continue
        s_mean, s_sem = _mean_sem(t["sampled_test_accuracy"] for t in per)
        t_mean, t_sem = _mean_sem(t["trained_test_accuracy"] for t in per)
        gap = abs(s_mean - t_mean)
        significant = gap > 2.0 * float(np.hypot(s_sem, t_sem))
        result.aggregates[f"width_{width}"] = {
            "pairs": len(per),
            "sampled_acc_mean": s_mean, "sampled_acc_sem": s_sem,
            "trained_acc_mean": t_mean, "trained_acc_sem": t_sem,
            "significant_gap": significant,
            "worst_rel_margin_err": max(t["worst_rel_margin_err"] for t in per),
            "worst_l2_diff": max(t["output_l2_diff"] for t in per),
        }
        summary_rows.append([width, len(per), s_mean, s_sem, t_mean, t_sem,
                             max(t["worst_rel_margin_err"] for t in per),
                             int(significant)])

    write_csv(out / "trials.csv",
              ["width", "pair", "attempts", "sampled_test_accuracy",
               "trained_test_accuracy", "output_l2_diff",
               "worst_rel_margin_err", "min_sampled_margin", "epochs_used",
               "mimic_retries"],
              [[t["width"], t["pair"], t["attempts"],
                t["sampled_test_accuracy"], t["trained_test_accuracy"],
                t["output_l2_diff"], t["worst_rel_margin_err"],
                t["min_sampled_margin"], t["epochs_used"],
                t["mimic_retries"]] for t in trials])
    write_csv(out / "twin_sample_summary.csv",
              ["width", "pairs", "sampled_acc_mean", "sampled_acc_sem",
               "trained_acc_mean", "trained_acc_sem", "worst_rel_margin_err",
               "significant_gap"],
              summary_rows)
    return _finish(result, cfg, out, started)


# --------------------------------------------------------------------------
# margin / initialization sweeps
# --------------------------------------------------------------------------

def run_margin_sweep(cfg: ExperimentConfig) -> ExperimentResult:
    started = time.time()
    train_raw, test_raw = _load_data(cfg)
    out = _study_dir(cfg)
    eval_task = _test_task(test_raw, cfg)
    if cfg.sweep not in ("init-scale", "margin", "normalized-margin"):
        raise ValueError(f"unknown sweep {cfg.sweep!r}")

    grid = list(cfg.grid)

    def trial(index: int) -> dict:
        seed = cfg.seeds[index // len(grid)]
        value = grid[index % len(grid)]
        alpha = 1.0 if cfg.sweep == "init-scale" else value
        scale = value if cfg.sweep == "init-scale" else 1.0
        task = ds.make_task(train_raw, ds.TaskSpec(
            subset=cfg.n_train, scheme="true", seed=seed, alpha=alpha))
        net0 = network.init(cfg.dims, scale=scale, rule=cfg.init_rule,
                            rng=split_rng(seed, 0x53EE, index % len(grid)))
        if cfg.sweep == "normalized-margin":
            opt = _optimizer_cfg(cfg, alpha, kind="nero")
        else:
            # plain gd without projection; relative step kept scale-aware
            # (output curvature grows like scale^2 and, early on, like alpha)
            lr = cfg.lr / (scale * scale * max(1.0, alpha))
            opt = _optimizer_cfg(cfg, alpha, kind="gd", lr=lr)
        trained, log = _train(net0, task, opt)
        out_now, _ = network.forward(trained, task.inputs)
        realized = mg.raw_margins(out_now, task.labels, task.mode)
        factor = mg.frobenius_factor(trained)
        return {
            "seed": seed,
            "grid_value": value,
            "alpha": alpha,
            "init_scale": scale,
            "train_accuracy": log.final_accuracy,
            "final_loss": log.final_loss,
            "test_accuracy": test_accuracy(trained, eval_task),
            "normalized_abscissa": float(alpha * factor),
            "realized_frob_margin_median": float(np.median(realized) * factor),
        }

    indices = list(range(len(cfg.seeds) * len(grid)))
    trials, failures = _run_trials(indices, trial, cfg.threads)
    result = ExperimentResult(cfg.study, cfg.echo(), trials, failures)

    curve_rows = []
    for value in grid:
        per = [t for t in trials if t["grid_value"] == value]
        if not per:
            continue
        acc_mean, acc_sem = _mean_sem(t["test_accuracy"] for t in per)
        absc_mean, _ = _mean_sem(t["normalized_abscissa"] for t in per)
        result.aggregates[f"grid_{value}"] = {
            "test_acc_mean": acc_mean, "test_acc_sem": acc_sem,
            "normalized_abscissa": absc_mean, "trials": len(per),
        }
        curve_rows.append([cfg.sweep, value, absc_mean, acc_mean, acc_sem,
                           len(per)])

    write_csv(out / "trials.csv",
              ["sub_experiment", "seed", "grid_value", "alpha", "init_scale",
               "train_accuracy", "test_accuracy", "final_loss",
               "normalized_abscissa", "realized_frob_margin_median"],
              [[cfg.sweep, t["seed"], t["grid_value"], t["alpha"],
                t["init_scale"], t["train_accuracy"], t["test_accuracy"],
                t["final_loss"], t["normalized_abscissa"],
                t["realized_frob_margin_median"]] for t in trials])
    write_csv(out / "margin_sweep_curve.csv",
              ["sub_experiment", "grid_value", "normalized_abscissa",
               "test_acc_mean", "test_acc_sem", "trials"],
              curve_rows)
    return _finish(result, cfg, out, started)


# --------------------------------------------------------------------------
# ensembles (GP closed form and finite networks)
# --------------------------------------------------------------------------

def run_ensembles(cfg: ExperimentConfig) -> ExperimentResult:
    started = time.time()
    train_raw, test_raw = _load_data(cfg)
    out = _study_dir(cfg)
    classes = cfg.classes or "even-odd"
    task = ds.make_task(train_raw, ds.TaskSpec(
        subset=cfg.n_train, scheme="true", classes=_classes_token(classes),
        seed=cfg.seed))
    eval_task = _test_task(test_raw, dataclasses.replace(cfg, classes=classes))
    test_labels = eval_task.labels

    cells: list[dict] = []
    if cfg.mode == "gp":
        model = nngp.fit(task.inputs, task.labels, depth=cfg.gp_depth,
                         sigma=cfg.gp_sigma)
        c1, c2 = nngp.posterior_batch(model, eval_task.inputs)
        nngp.dump_model(model, out / "gp_model.json")
        sample_written = False
        for margin in cfg.margins:
            gamma = margin * cfg.gp_sigma ** cfg.gp_depth
            scoped = dataclasses.replace(model, gamma=gamma)
            for m in cfg.m_values:
                for seed in cfg.seeds:
                    # fresh stream per cell: matched seeds share the same z,
                    # pairing cells across both margin and m
                    draws = nngp.ensemble_draws(
                        scoped, eval_task.inputs, m,
                        rng=split_rng(seed, 0xE25), coeffs=(c1, c2))
                    acc = float(((draws > 0) == (test_labels > 0)).mean())
                    cells.append({"mode": "gp", "margin": margin, "m": m,
                                  "seed": seed, "accuracy": acc})
                    if not sample_written:
                        nngp.write_predictions_csv(
                            out / "predictions_sample.csv", c1, c2, m, draws)
                        sample_written = True
    elif cfg.mode == "nn":
        m_max = max(cfg.m_values)

        def member_outputs(margin_idx: int, seed: int, member: int) -> np.ndarray:
            margin = cfg.margins[margin_idx]
            member_task = dataclasses.replace(
                task, alpha=np.full(task.n, margin))
            net0 = network.init(cfg.dims,
                                rng=split_rng(seed, 0xE2, margin_idx, member))
            trained, _ = _train(net0, member_task,
                                _optimizer_cfg(cfg, margin, kind="nero"))
            outputs, _ = network.forward(trained, eval_task.inputs)
            return outputs[:, 0]

        jobs = [(mi, seed) for mi in range(len(cfg.margins))
                for seed in cfg.seeds]

        def ensemble_trial(index: int) -> dict:
            margin_idx, seed = jobs[index]
            margin = cfg.margins[margin_idx]
            stacked = np.stack([member_outputs(margin_idx, seed, k)
                                for k in range(m_max)])
            per_m = {}
            for m in cfg.m_values:
                averaged = stacked[:m].mean(axis=0)
                per_m[m] = float(((averaged > 0) == (test_labels > 0)).mean())
            return {"margin": margin, "seed": seed, "per_m": per_m}

        trials, cell_failures = _run_trials(list(range(len(jobs))),
                                            ensemble_trial, cfg.threads)
        for t in trials:
            for m, acc in t["per_m"].items():
                cells.append({"mode": "nn", "margin": t["margin"], "m": m,
                              "seed": t["seed"], "accuracy": acc})
    else:
        raise ValueError(f"unknown ensembles mode {cfg.mode!r}")

    result = ExperimentResult(cfg.study, cfg.echo(), cells,
                              cell_failures if cfg.mode == "nn" else [])
    grid_rows = []
    for margin in cfg.margins:
        for m in cfg.m_values:
            per = [c["accuracy"] for c in cells
                   if c["margin"] == margin and c["m"] == m]
            acc_mean, acc_sem = _mean_sem(per)
            result.aggregates[f"margin_{margin}_m_{m}"] = {
                "acc_mean": acc_mean, "acc_sem": acc_sem, "trials": len(per)}
            grid_rows.append([cfg.mode, margin, m, acc_mean, acc_sem, len(per)])
    write_csv(out / "trials.csv",
              ["mode", "margin", "m", "seed", "accuracy"],
              [[c["mode"], c["margin"], c["m"], c["seed"], c["accuracy"]]
               for c in cells])
    write_csv(out / "ensembles_grid.csv",
              ["mode", "margin", "m", "acc_mean", "acc_sem", "trials"],
              grid_rows)
    return _finish(result, cfg, out, started)


STUDIES = {
    "spectral-reversal": run_spectral_reversal,
    "twin-attack": run_twin_attack,
    "twin-sample": run_twin_sample,
    "margin-sweep": run_margin_sweep,
    "ensembles": run_ensembles,
}


def run_study(cfg: ExperimentConfig) -> ExperimentResult:
    try:
        runner = STUDIES[cfg.study]
    except KeyError:
        raise ValueError(f"unknown study {cfg.study!r}") from None
    return runner(cfg)
