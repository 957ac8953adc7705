"""Command-line surface: dataset prep, single trainings, margin reports, and
the five experiment studies.

Results are written atomically (temp file + rename), so an aborted run leaves
no partial files at final paths. Exit codes: 0 success, 1 runtime failure
(missing data, divergence), 2 usage errors.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import dataset as ds
from . import experiments, margins, network, training
from .numerics import split_rng

STUDY_NAMES = ("spectral-reversal", "twin-attack", "twin-sample",
               "margin-sweep", "ensembles")


def _floats(text: str) -> tuple[float, ...]:
    return tuple(float(tok) for tok in text.split(",") if tok)


def _ints(text: str) -> tuple[int, ...]:
    return tuple(int(tok) for tok in text.split(",") if tok)


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--data-dir", default=None,
                        help="IDX corpus directory (default: $MARGIN_LAB_DATA or ./data)")
    parser.add_argument("--out", default="results", help="output directory")
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--seeds", type=_ints, default=None,
                        help="comma-separated per-trial seeds")
    parser.add_argument("--threads", type=int, default=1,
                        help="worker pool size for independent trials")
    parser.add_argument("--config", default=None,
                        help="JSON file of ExperimentConfig overrides")


def _add_optimizer(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--optimizer", choices=("nero", "gd"), default=None)
    parser.add_argument("--lr", type=float, default=None)
    parser.add_argument("--lr-decay", type=float, default=None)
    parser.add_argument("--nero-beta", type=float, default=None)
    parser.add_argument("--epochs", type=int, default=None)
    parser.add_argument("--loss-threshold", type=float, default=None)
    parser.add_argument("--dims", type=_ints, default=None,
                        help="comma-separated layer sizes incl. input/output")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="margin-lab",
        description="normalized-margin control experiments on digit tasks")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("data", help="verify or synthesize the IDX corpus")
    p.add_argument("--data-dir", default=None)
    p.add_argument("--train-n", type=int, default=12000)
    p.add_argument("--test-n", type=int, default=4000)
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("train", help="train one network on a task spec")
    _add_common(p)
    _add_optimizer(p)
    p.add_argument("--task", required=True,
                   help="e.g. mnist:subset=1000:labels=random:seed=7:alpha=100")
    p.add_argument("--checkpoint", default=None, help="write weights here (.npz)")

    p = sub.add_parser("report", help="margin report for a checkpoint on a task")
    _add_common(p)
    p.add_argument("--task", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--reference", default=None,
                   help="checkpoint of the reference network (default: zeros)")

    for study in STUDY_NAMES:
        p = sub.add_parser(study, help=f"run the {study} study")
        _add_common(p)
        _add_optimizer(p)
        p.add_argument("--n-train", type=int, default=None)
        p.add_argument("--n-test", type=int, default=None)
        p.add_argument("--classes", default=None)
        p.add_argument("--alpha", type=float, default=None)
        if study == "spectral-reversal":
            p.add_argument("--alpha-true", type=float, default=None)
            p.add_argument("--alpha-random", type=float, default=None)
        if study == "twin-attack":
            p.add_argument("--attack-size", type=int, default=None)
        if study == "twin-sample":
            p.add_argument("--widths", type=_ints, default=None)
            p.add_argument("--pairs", type=int, default=None)
            p.add_argument("--hidden-layers", type=int, default=None)
            p.add_argument("--mimic-threshold", type=float, default=None)
        if study == "margin-sweep":
            p.add_argument("--sweep", choices=("init-scale", "margin",
                                               "normalized-margin"), default=None)
            p.add_argument("--grid", type=_floats, default=None)
        if study == "ensembles":
            p.add_argument("--mode", choices=("gp", "nn"), default=None)
            p.add_argument("--m", dest="m_values", type=_ints, default=None)
            p.add_argument("--margin", dest="margins", type=_floats, default=None)
            p.add_argument("--gp-depth", type=int, default=None)
            p.add_argument("--gp-sigma", type=float, default=None)
    return parser


def _study_config(study: str, args: argparse.Namespace) -> experiments.ExperimentConfig:
    overrides: dict = {}
    if args.config:
        overrides.update(json.loads(Path(args.config).read_text()))
    mapping = {
        "out": "out_dir", "data_dir": "data_dir", "seed": "seed",
        "seeds": "seeds", "threads": "threads", "optimizer": "optimizer",
        "lr": "lr", "lr_decay": "lr_decay", "nero_beta": "nero_beta",
        "epochs": "epochs", "loss_threshold": "loss_threshold", "dims": "dims",
        "n_train": "n_train", "n_test": "n_test", "classes": "classes",
        "alpha": "alpha", "alpha_true": "alpha_true",
        "alpha_random": "alpha_random", "attack_size": "attack_size",
        "widths": "widths", "pairs": "pairs", "hidden_layers": "hidden_layers",
        "mimic_threshold": "mimic_threshold", "sweep": "sweep", "grid": "grid",
        "mode": "mode", "m_values": "m_values", "margins": "margins",
        "gp_depth": "gp_depth", "gp_sigma": "gp_sigma",
    }
    for arg_name, cfg_name in mapping.items():
        value = getattr(args, arg_name, None)
        if value is not None:
            overrides[cfg_name] = value
    if "seeds" not in overrides:
        overrides["seeds"] = (overrides.get("seed", 0),)
    overrides["study"] = study
    if isinstance(overrides.get("dims"), list):
        overrides["dims"] = tuple(overrides["dims"])
    return experiments.ExperimentConfig(**overrides)


def _cmd_data(args) -> int:
    target = Path(args.data_dir) if args.data_dir else ds.default_data_dir()
    info = ds.ensure_dataset(target, train_n=args.train_n, test_n=args.test_n,
                             seed=args.seed)
    train = ds.load_split(target, "train")
    test = ds.load_split(target, "test")
    info.update(train_n=train.n, test_n=test.n, input_dim=train.input_dim)
    print(json.dumps(info, indent=2))
    return 0


def _load_task(args, split="train") -> ds.Task:
    data_dir = Path(args.data_dir) if args.data_dir else ds.default_data_dir()
    raw = ds.load_split(data_dir, split)
    return ds.make_task(raw, ds.parse_task_spec(args.task))


def _cmd_train(args) -> int:
    task = _load_task(args)
    dims = args.dims or (task.input_dim, 512, task.output_dim)
    net0 = network.init(dims, rng=split_rng(args.seed, 0x7EA1))
    cfg = training.OptimizerConfig(
        kind=args.optimizer or "nero", lr=args.lr or 0.02,
        lr_decay=args.lr_decay or 0.9995, nero_beta=args.nero_beta or 0.999,
        epochs=args.epochs or 2000, loss_threshold=args.loss_threshold)
    trained, log = (training.train_nero if cfg.kind == "nero"
                    else training.train_gd)(net0, task, cfg)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    log.to_csv(out_dir / "training_log.csv")
    echo = {"task": args.task, "dims": list(dims), "seed": args.seed,
            "optimizer": json.loads(cfg.to_json()),
            "final_loss": log.final_loss,
            "train_accuracy": log.final_accuracy,
            "stop_reason": log.stop_reason}
    (out_dir / "training_config.json").write_text(json.dumps(echo, indent=2))
    if args.checkpoint:
        network.save_checkpoint(trained, args.checkpoint)
    print(json.dumps(echo, indent=2))
    return 0


def _cmd_report(args) -> int:
    task = _load_task(args)
    net = network.load_checkpoint(args.checkpoint)
    ref = network.load_checkpoint(args.reference) if args.reference else None
    rep = margins.report(net, task, ref, rng=split_rng(args.seed, 0xAB))
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    margins.write_report_csv(rep, out_dir / "margin_report.csv")
    summary = margins.write_summary_json(rep, out_dir / "margin_summary.json")
    print(json.dumps(summary, indent=2))
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "data":
            return _cmd_data(args)
        if args.command == "train":
            return _cmd_train(args)
        if args.command == "report":
            return _cmd_report(args)
        cfg = _study_config(args.command, args)
        result = experiments.run_study(cfg)
        print(json.dumps({
            "study": result.study,
            "out_dir": str(result.out_dir),
            "effective_trials": result.effective_trials,
            "failures": len(result.failures),
            "aggregates": result.aggregates,
        }, indent=2, default=str))
        return 0
    except (FileNotFoundError, ds.IdxFormatError,
            training.TrainingDivergence, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
