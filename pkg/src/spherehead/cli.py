"""Command-line front end.

Verbs: train (multi-seed experiment into the results store), eval
(re-train a stored run from its seed and score one split), project
(embed delimited rows onto the sphere), export-embeddings (re-train a
stored run and dump its features for external plotting), and report
(render the stored runs as a with/without-projection table).

There is no model serialization anywhere, so eval and export both
reproduce the model by re-training from the recorded config and seed;
records are small and runs are deterministic, which makes that exact.
Data goes to stdout or --out, diagnostics to stderr. Usage problems
exit 2, runtime failures exit 1.
"""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from .errors import ParseError, SphereheadError
from .heads import FAMILIES, MarginConfig
from .ndcore import Tensor
from .results import default_results_dir, list_runs, load_run
from .stereo import project
from .train import (
    DataConfig,
    ModelConfig,
    OptimConfig,
    RunReport,
    build_datasets,
    build_model,
    default_learning_rate,
    emit_table,
    evaluate,
    fit,
    run_experiment,
)

__all__ = ["main", "build_parser"]


def _parse_dataset(text: str, parser: argparse.ArgumentParser) -> DataConfig:
    if text == "spirals":
        return DataConfig("two_spirals")
    if text == "blobs":
        return DataConfig("blobs")
    for prefix, kind, key in (("csv:", "delimited", "path"),
                              ("cifar10:", "cifar10", "dir"),
                              ("cifar100:", "cifar100", "dir")):
        if text.startswith(prefix):
            value = text[len(prefix):]
            if not value:
                parser.error(f"dataset spec {text!r} is missing its {key}")
            params = {key: value}
            if kind in ("cifar10", "cifar100"):
                params["subset_per_class"] = 100
                params["downsample_to"] = 8
            return DataConfig(kind, params)
    parser.error(
        f"unknown dataset {text!r}; expected spirals, blobs, csv:<path>, "
        "cifar10:<dir>, or cifar100:<dir>"
    )


def _parse_seeds(text: str, parser: argparse.ArgumentParser) -> tuple:
    try:
        seeds = tuple(int(piece) for piece in text.split(","))
    except ValueError:
        parser.error(f"--seeds wants comma-separated integers, got {text!r}")
    if not seeds:
        parser.error("--seeds needs at least one seed")
    if len(set(seeds)) != len(seeds):
        parser.error(f"--seeds has duplicates: {text!r}")
    return seeds


def _parse_widths(text: str, parser: argparse.ArgumentParser) -> tuple:
    if text.strip() == "":
        return ()
    try:
        return tuple(int(piece) for piece in text.split(","))
    except ValueError:
        parser.error(f"--encoder wants comma-separated widths, got {text!r}")


def _margin_from_flags(args, parser: argparse.ArgumentParser) -> MarginConfig:
    if args.queue is not None and args.loss != "broadface":
        parser.error(f"--queue only applies to broadface, not {args.loss}")
    try:
        return MarginConfig.for_family(args.loss, m=args.m, s=args.s,
                                       queue_capacity=args.queue)
    except SphereheadError as err:
        parser.error(str(err))


def _configs_from_record(record: dict) -> tuple[ModelConfig, DataConfig, OptimConfig]:
    cfg = record["config"]
    m = cfg["model"]["margin"]
    margin = MarginConfig(family=m["family"], m=m["m"], s=m["s"],
                          use_monotone_psi=m["use_monotone_psi"],
                          queue_capacity=m["queue_capacity"])
    model_cfg = ModelConfig(
        feature_dim=cfg["model"]["feature_dim"],
        margin=margin,
        encoder_layers=tuple(cfg["model"]["encoder_layers"]),
        projection_enabled=cfg["model"]["projection_enabled"],
    )
    data_cfg = DataConfig(cfg["data"]["kind"], dict(cfg["data"]["params"]),
                          train_fraction=cfg["data"]["train_fraction"])
    o = cfg["optim"]
    opt = OptimConfig(learning_rate=o["learning_rate"], epochs=o["epochs"],
                      momentum=o["momentum"], batch_size=o["batch_size"],
                      seed=record["seed"])
    return model_cfg, data_cfg, opt


def _retrain_from_record(record: dict):
    """Rebuild the datasets and the trained model a record describes."""
    model_cfg, data_cfg, opt = _configs_from_record(record)
    train_ds, test_ds = build_datasets(data_cfg, record["seed"])
    init_seed = int(np.random.SeedSequence(record["seed"]).generate_state(3)[2])
    model = build_model(model_cfg, train_ds.dim, train_ds.class_count, init_seed)
    model, _ = fit(model, train_ds, opt)
    return model, train_ds, test_ds


def _resolve_run_path(path_arg: str, parser: argparse.ArgumentParser) -> str:
    if os.path.isfile(path_arg):
        return path_arg
    if os.path.isdir(path_arg):
        records = sorted(
            os.path.join(path_arg, name)
            for name in os.listdir(path_arg)
            if name.endswith(".txt")
        )
        if len(records) == 1:
            return records[0]
        if not records:
            parser.error(f"--run directory {path_arg!r} holds no run records")
        parser.error(
            f"--run directory {path_arg!r} holds {len(records)} records; "
            "point at one seed file"
        )
    raise FileNotFoundError(f"no run record at {path_arg!r}")


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def cmd_train(args, parser: argparse.ArgumentParser) -> int:
    margin = _margin_from_flags(args, parser)
    data_cfg = _parse_dataset(args.dataset, parser)
    seeds = _parse_seeds(args.seeds, parser)
    lr = args.lr if args.lr is not None else default_learning_rate(args.loss)
    try:
        model_cfg = ModelConfig(
            feature_dim=args.feature_dim,
            margin=margin,
            encoder_layers=_parse_widths(args.encoder, parser),
            projection_enabled=(args.project == "on"),
        )
        opt = OptimConfig(learning_rate=lr, epochs=args.epochs,
                          momentum=args.momentum, batch_size=args.batch)
    except SphereheadError as err:
        parser.error(str(err))
    out_dir = args.out if args.out is not None else default_results_dir()
    report = run_experiment(model_cfg, data_cfg, opt, seeds, results_dir=out_dir)
    for seed in sorted(report.accuracies):
        print(f"seed {seed}: test accuracy {report.accuracies[seed]:.4f}")
    for seed in report.failed_seeds:
        print(f"seed {seed}: diverged", file=sys.stderr)
    if report.accuracies:
        print(f"{report.experiment}: test accuracy {100.0 * report.mean_accuracy:.2f}"
              f"+-{100.0 * report.std_accuracy:.2f} over {len(report.accuracies)} seeds")
        return 0
    print(f"{report.experiment}: every seed diverged", file=sys.stderr)
    return 1


def cmd_eval(args, parser: argparse.ArgumentParser) -> int:
    path = _resolve_run_path(args.run, parser)
    record = load_run(path)
    model, train_ds, test_ds = _retrain_from_record(record)
    ds = train_ds if args.split == "train" else test_ds
    acc = evaluate(model, ds)
    print(f"{record['experiment']} seed {record['seed']} {args.split} accuracy {acc:.4f}")
    recorded = record["final_test_accuracy"]
    if args.split == "test" and acc != recorded:
        print(f"warning: recorded test accuracy was {recorded:.4f}", file=sys.stderr)
    return 0


def cmd_project(args, parser: argparse.ArgumentParser) -> int:
    with open(args.infile, "r", encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    out_rows = []
    width = None
    for lineno, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        pieces = line.split(",")
        try:
            values = [float(piece) for piece in pieces]
        except ValueError:
            raise ParseError(f"{args.infile}:{lineno}: non-numeric value in {line!r}")
        if width is None:
            width = len(values)
        elif len(values) != width:
            raise ParseError(
                f"{args.infile}:{lineno}: expected {width} columns, got {len(values)}"
            )
        point = project(np.asarray(values, dtype=np.float64))
        out_rows.append(",".join(_fmt(v) for v in point.coords))
    text = "\n".join(out_rows) + ("\n" if out_rows else "")
    if args.out is None:
        sys.stdout.write(text)
    else:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(text)
    return 0


def cmd_export_embeddings(args, parser: argparse.ArgumentParser) -> int:
    path = _resolve_run_path(args.run, parser)
    record = load_run(path)
    model, train_ds, test_ds = _retrain_from_record(record)
    ds = train_ds if args.split == "train" else test_ds
    feats = model.forward_features(Tensor(ds.features.data))
    with open(args.out, "w", encoding="utf-8") as fh:
        for label, row in zip(ds.labels, feats.data):
            fh.write(",".join([str(int(label))] + [_fmt(v) for v in row]) + "\n")
    print(f"wrote {len(ds)} rows of {feats.shape[1]} features to {args.out}")
    return 0


def cmd_report(args, parser: argparse.ArgumentParser) -> int:
    results_dir = args.results if args.results is not None else default_results_dir()
    runs = list_runs(results_dir)
    reports = []
    for experiment, paths in runs.items():
        records = [load_run(p) for p in paths]
        accuracies = {r["seed"]: r["final_test_accuracy"] for r in records}
        reports.append(RunReport(
            experiment=experiment,
            config=records[0]["config"],
            seeds=tuple(sorted(accuracies)),
            accuracies=accuracies,
            failed_seeds=(),
            record_digests={},
            wall_time_s=sum(r["wall_time_s"] for r in records),
        ))
    sys.stdout.write(emit_table(reports))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="spherehead",
        description="train and inspect sphere-embedded angular-margin classifiers",
    )
    verbs = parser.add_subparsers(dest="verb", required=True)

    train = verbs.add_parser("train", help="run a multi-seed training experiment")
    train.add_argument("--dataset", required=True,
                       help="spirals | blobs | csv:<path> | cifar10:<dir> | cifar100:<dir>")
    train.add_argument("--loss", required=True, choices=FAMILIES)
    train.add_argument("--project", choices=("on", "off"), default="on")
    train.add_argument("--m", type=float, default=None, help="margin (family default if omitted)")
    train.add_argument("--s", type=float, default=None, help="logit scale (family default if omitted)")
    train.add_argument("--queue", type=int, default=None, help="broadface queue capacity")
    train.add_argument("--lr", type=float, default=None, help="step size (family default if omitted)")
    train.add_argument("--momentum", type=float, default=0.92)
    train.add_argument("--epochs", type=int, default=300)
    train.add_argument("--batch", type=int, default=128)
    train.add_argument("--seeds", default="1,2,3,4,5", help='comma list, e.g. "1,2,3"')
    train.add_argument("--feature-dim", dest="feature_dim", type=int, default=16)
    train.add_argument("--encoder", default="512,256", help='hidden widths, e.g. "64,32" or ""')
    train.add_argument("--out", default=None, help="results dir (default $SPHEREHEAD_RESULTS or ./results)")

    ev = verbs.add_parser("eval", help="re-train a stored run from its seed and score a split")
    ev.add_argument("--run", required=True, help="path to a run record file")
    ev.add_argument("--split", choices=("train", "test"), default="test")

    proj = verbs.add_parser("project", help="map delimited numeric rows onto the sphere")
    proj.add_argument("--in", dest="infile", required=True, help="delimited numeric input file")
    proj.add_argument("--out", default=None, help="output file (default stdout)")

    export = verbs.add_parser("export-embeddings",
                              help="re-train a stored run and dump labeled features")
    export.add_argument("--run", required=True, help="path to a run record file")
    export.add_argument("--split", choices=("train", "test"), default="test")
    export.add_argument("--out", required=True, help="output file for label,feature rows")

    report = verbs.add_parser("report", help="render stored runs as a comparison table")
    report.add_argument("--results", default=None,
                        help="results dir (default $SPHEREHEAD_RESULTS or ./results)")
    return parser


_HANDLERS = {
    "train": cmd_train,
    "eval": cmd_eval,
    "project": cmd_project,
    "export-embeddings": cmd_export_embeddings,
    "report": cmd_report,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    handler = _HANDLERS[args.verb]
    try:
        return handler(args, parser)
    except (SphereheadError, OSError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
