"""Command-line entry point: dataset, label, train, finetune, predict, eval, sure, run, report."""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np
import yaml

from .core import SeededRng, load_image
from .harness.data import DatasetSpec, cmd_dataset, labeled_set
from .harness.evaluate import score_predictions
from .harness.experiments import ConfigError, RunConfig, run_experiment
from .harness.presets import preset
from .harness.report import read_rows, write_report
from .harness.workspace import MissingPrerequisite, Workspace
from .manifest import read_manifest
from .oracle import SearchGrid, generate_labels, read_labels, write_failures, write_labels
from .predictor.model import UNKNOWN_ATTRS
from .predictor.training import (TrainSchedule, finetune, load_checkpoint, predict,
                                 save_checkpoint, train)
from .sure import default_lambda_grid, sure_select_lambda

EXIT_OK, EXIT_CONFIG, EXIT_MISSING, EXIT_PARTIAL = 0, 2, 3, 4

log = logging.getLogger("hparam_transfer")


def load_config(path) -> dict:
    path = Path(path)
    if not path.exists():
        raise MissingPrerequisite(f"config file {path} not found")
    text = path.read_text()
    try:
        obj = json.loads(text) if path.suffix == ".json" else yaml.safe_load(text)
    except (json.JSONDecodeError, yaml.YAMLError) as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from exc
    if not isinstance(obj, dict):
        raise ConfigError(f"{path} must hold a key-value document")
    return obj


def _out(args, default="out") -> Path:
    out = Path(args.out or default)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _run_config(args) -> RunConfig:
    if args.config:
        doc = load_config(args.config)
    elif getattr(args, "preset", None):
        doc = preset(args.preset)
    else:
        raise ConfigError("need --config or --preset")
    if args.seed is not None:
        doc["seeds"] = [args.seed]
    return RunConfig.from_dict(doc), doc


def _workspace(args, cfg: RunConfig) -> Workspace:
    root = Path(getattr(args, "workspace", None) or Path(args.out or "out") / "workspace")
    return Workspace(root, cfg.datasets, cfg.grid, args.workers)


# ----------------------------------------------------------------- commands

def cmd_dataset_cli(args) -> int:
    doc = load_config(args.config) if args.config else {}
    for key in ("dataset_id", "noise", "count", "size", "source"):
        val = getattr(args, key, None)
        if val is not None:
            doc[key] = val
    if args.seed is not None:
        doc["seed"] = args.seed
    try:
        spec = DatasetSpec.from_dict(doc)
    except TypeError as exc:
        raise ConfigError(f"bad dataset spec: {exc}") from exc
    out = _out(args, spec.dataset_id)
    res = cmd_dataset(spec, out)
    print(f"dataset\t{spec.dataset_id}\t{len(res.manifest)} rows\t{len(res.failures)} failures")
    return EXIT_PARTIAL if res.failures else EXIT_OK


def cmd_label(args) -> int:
    manifest = read_manifest(args.manifest)
    grid = SearchGrid.default(args.d, args.r, points=args.points, levels=args.levels,
                              zoom=args.zoom)
    run = generate_labels(manifest, args.d, args.r, grid, args.workers)
    out = Path(args.out or f"labels_{args.d}_{args.r}.csv")
    out.parent.mkdir(parents=True, exist_ok=True)
    write_labels(run.labels, out)
    frac = run.boundary_fraction(grid)
    print(f"labels\t{len(run.labels)} rows\t{len(run.failures)} failures\tboundary_fraction={frac:.4f}")
    if frac > 0.02:
        print("warning\tmore than 2% of labels sit on a bracket edge; widen the bracket")
    if run.failures:
        write_failures(run.failures, out.with_suffix(".failures.json"))
        return EXIT_PARTIAL
    return EXIT_OK


def cmd_train(args) -> int:
    cfg, _ = _run_config(args)
    ws = _workspace(args, cfg)
    with ws.reading("train"):
        sources = [ws.labeled_set(s["dataset"], s["d"], s["r"]) for s in cfg.sources]
    ckpt = train(sources, cfg.sched(cfg.seeds[0]))
    out = _out(args)
    save_checkpoint(ckpt, out / "checkpoint.npz")
    (out / "train_log.json").write_text(json.dumps(ckpt.log, indent=1))
    print(f"checkpoint\t{out / 'checkpoint.npz'}")
    return EXIT_OK


def cmd_finetune(args) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    manifest = read_manifest(args.manifest)
    labels = read_labels(args.labels)
    if args.shots:
        labels = labels[:args.shots]
    target = labeled_set("target", manifest, labels)
    sched = TrainSchedule(epochs=args.epochs, head_lr=args.lr, llrd=0.1,
                          seed=args.seed or 0)
    ft = finetune(ckpt, target, sched)
    out = _out(args)
    save_checkpoint(ft, out / "finetuned.npz")
    (out / "finetune_log.json").write_text(json.dumps(ft.log, indent=1))
    print(f"checkpoint\t{out / 'finetuned.npz'}")
    return EXIT_OK


def _read_degraded(path) -> np.ndarray:
    path = Path(path)
    if not path.exists():
        raise MissingPrerequisite(f"image {path} not found")
    return np.load(path) if path.suffix == ".npy" else load_image(path)


def cmd_predict(args) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    y = _read_degraded(args.image)
    meta = None
    if args.p_max is not None:
        meta = np.array([args.sigma_read or 0.0, np.log(args.p_max)])
    hv = predict(ckpt, y, args.d, args.r, UNKNOWN_ATTRS, meta)
    print(json.dumps({"delta": hv.slots[0], "lambda": hv.slots[1], "gamma": hv.slots[2],
                      "mask": list(hv.mask)}))
    return EXIT_OK


def cmd_eval(args) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    manifest = read_manifest(args.manifest)
    labels = read_labels(args.labels)
    lset = labeled_set("eval", manifest, labels)
    preds = ckpt.predict_raw(lset.images, lset.d, lset.r, lset.attrs, lset.meta)
    rows = score_predictions(manifest, labels, preds, "hyperdn", args.seed)
    out = _out(args)
    obj = write_report(out, "eval", rows, [args.seed] if args.seed is not None else [])
    _print_summary(obj)
    return EXIT_OK


def cmd_sure(args) -> int:
    y = _read_degraded(args.image)
    grid = default_lambda_grid(args.points)
    lam = sure_select_lambda(y, args.sigma, grid, rng=SeededRng(args.seed or 0))
    print(f"lambda\t{lam!r}")
    return EXIT_OK


def cmd_run(args) -> int:
    cfg, doc = _run_config(args)
    out = _out(args)
    (out / "config.yaml").write_text(yaml.safe_dump(doc, sort_keys=True))
    ws = _workspace(args, cfg)
    t0 = time.time()
    result = run_experiment(ws, cfg)
    obj = write_report(out, cfg.kind, result.rows, cfg.seeds, result.extra, result.curve_key,
                       ws.read_record())
    print(f"run\t{cfg.kind}\t{time.time() - t0:.1f}s")
    _print_summary(obj)
    if ws.label_failures:
        write_failures(ws.label_failures, out / "failures.json")
        return EXIT_PARTIAL
    return EXIT_OK


def cmd_report(args) -> int:
    out = Path(args.out or ".")
    rows_path = out / "rows.csv"
    if not rows_path.exists():
        raise MissingPrerequisite(f"{rows_path} not found")
    rows = read_rows(rows_path)
    prev = json.loads((out / "summary.json").read_text()) if (out / "summary.json").exists() else {}
    obj = write_report(out, prev.get("experiment", "report"), rows, prev.get("seeds", []),
                       curve_key="shots" if rows and "shots" in rows[0] else None,
                       read_record=prev.get("label_reads"))
    _print_summary(obj)
    return EXIT_OK


def _print_summary(obj: dict):
    print("method\tmean_psnr\tstd_psnr\tmean_gap\tstd_gap\tn_seeds")
    for m, v in obj["methods"].items():
        print(f"{m}\t{v['mean_psnr']:.3f}\t{v['std_psnr']:.3f}\t{v['mean_gap']:.3f}\t"
              f"{v['std_gap']:.3f}\t{v['n_seeds']}")


# ------------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML or JSON config document")
    common.add_argument("--seed", type=int, default=None)
    common.add_argument("--workers", type=int, default=1)
    common.add_argument("--out", help="output directory (or file for label)")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="hparam-transfer", parents=[common],
                                description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("dataset", parents=[common], help="generate or import a dataset")
    s.add_argument("--dataset-id", dest="dataset_id")
    s.add_argument("--noise")
    s.add_argument("--count", type=int)
    s.add_argument("--size", type=int)
    s.add_argument("--source", help="'synthetic' or an image directory")
    s.set_defaults(func=cmd_dataset_cli)

    s = sub.add_parser("label", parents=[common], help="oracle labels for a manifest")
    s.add_argument("--manifest", required=True)
    s.add_argument("--d", required=True)
    s.add_argument("--r", required=True)
    s.add_argument("--points", type=int, default=9)
    s.add_argument("--levels", type=int, default=2)
    s.add_argument("--zoom", type=float, default=1.0 / 3.0)
    s.set_defaults(func=cmd_label)

    for name, func, helptext in (("train", cmd_train, "pooled training from a run config"),
                                 ("run", cmd_run, "run one experiment end to end")):
        s = sub.add_parser(name, parents=[common], help=helptext)
        s.add_argument("--preset", help="use a built-in desk-scale config of this kind")
        s.add_argument("--workspace", help="dataset/label cache directory")
        s.set_defaults(func=func)

    s = sub.add_parser("finetune", parents=[common], help="finetune a checkpoint on target labels")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--manifest", required=True)
    s.add_argument("--labels", required=True)
    s.add_argument("--shots", type=int)
    s.add_argument("--epochs", type=int, default=60)
    s.add_argument("--lr", type=float, default=3e-3)
    s.set_defaults(func=cmd_finetune)

    s = sub.add_parser("predict", parents=[common], help="predict hyperparameters for one image")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--image", required=True, help=".ppm/.pgm/.png or a .npy degraded array")
    s.add_argument("--d", required=True)
    s.add_argument("--r", required=True)
    s.add_argument("--p-max", dest="p_max", type=float)
    s.add_argument("--sigma-read", dest="sigma_read", type=float)
    s.set_defaults(func=cmd_predict)

    s = sub.add_parser("eval", parents=[common], help="score a checkpoint on a labeled set")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--manifest", required=True)
    s.add_argument("--labels", required=True)
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("sure", parents=[common], help="SURE lambda for one Gaussian-noisy image")
    s.add_argument("--image", required=True)
    s.add_argument("--sigma", type=float, required=True)
    s.add_argument("--points", type=int, default=30)
    s.set_defaults(func=cmd_sure)

    s = sub.add_parser("report", parents=[common], help="rebuild summaries from rows.csv")
    s.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        code, err = EXIT_CONFIG, exc
    except (MissingPrerequisite, FileNotFoundError) as exc:
        code, err = EXIT_MISSING, exc
    record = {"error": type(err).__name__, "message": str(err), "exit_code": code}
    if args.out:
        try:
            out = Path(args.out)
            if out.suffix == "":
                out.mkdir(parents=True, exist_ok=True)
                (out / "failure.json").write_text(json.dumps(record, indent=1))
        except OSError:
            pass
    print(json.dumps(record), file=sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())
