"""Experiment runners. Each returns per-image report rows plus summary extras."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import torch

from ..core import SeededRng
from ..noise import gaussian_sigma
from ..predictor.model import EncoderConfig, HyperPredictor
from ..predictor.training import (LabeledSet, TrainSchedule, finetune, train,
                                  train_config_cnn)
from ..sure import avg_oracle_baseline, default_lambda_grid, sure_select_lambda
from .data import degraded_images
from .evaluate import oracle_rows, score_predictions
from .workspace import Workspace

EXPERIMENTS = ("pretrain", "finetune", "zero_shot_mixed", "cross_resolution", "sure_compare",
               "ablate_head", "ablate_stages", "per_config_baseline")


class ConfigError(ValueError):
    """Malformed or inconsistent run configuration."""


@dataclass
class RunConfig:
    kind: str
    seeds: list
    datasets: dict = field(default_factory=dict)
    sources: list = field(default_factory=list)
    tests: list = field(default_factory=list)
    target: dict | None = None
    schedule: dict = field(default_factory=dict)
    finetune_schedule: dict = field(default_factory=dict)
    cnn_schedule: dict = field(default_factory=dict)
    encoder: dict = field(default_factory=dict)
    grid: dict = field(default_factory=lambda: {"points": 5, "levels": 2, "zoom": 1.0 / 3.0})
    options: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in EXPERIMENTS:
            raise ConfigError(f"unknown experiment kind {self.kind!r}")
        if not self.seeds:
            raise ConfigError("seed list is empty")
        for ref in [*self.sources, *self.tests, *([self.target] if self.target else [])]:
            if not {"dataset", "d", "r"} <= set(ref):
                raise ConfigError(f"dataset reference {ref} needs dataset, d and r")
            if self.datasets and ref["dataset"] not in self.datasets:
                raise ConfigError(f"dataset {ref['dataset']!r} is not defined")
        try:
            for sched in (self.schedule, self.finetune_schedule, self.cnn_schedule):
                TrainSchedule(**sched)
            EncoderConfig(**self.encoder)
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc

    @classmethod
    def from_dict(cls, obj: dict) -> "RunConfig":
        known = set(cls.__dataclass_fields__)
        unknown = set(obj) - known - {"out", "experiment"}
        if unknown:
            raise ConfigError(f"unknown config keys {sorted(unknown)}")
        obj = dict(obj)
        if "experiment" in obj and "kind" not in obj:
            obj["kind"] = obj.pop("experiment")
        obj.pop("experiment", None)
        obj.pop("out", None)
        if "kind" not in obj or "seeds" not in obj:
            raise ConfigError("config needs 'kind' and 'seeds'")
        try:
            return cls(**obj)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc

    def sched(self, seed: int, **kw) -> TrainSchedule:
        return TrainSchedule(**{**self.schedule, "seed": seed, **kw})


@dataclass
class RunResult:
    rows: list
    extra: dict = field(default_factory=dict)
    curve_key: str | None = None


# ---------------------------------------------------------------- helpers

def _sources(ws: Workspace, cfg: RunConfig, use_attrs=True) -> list[LabeledSet]:
    with ws.reading("train"):
        return [ws.labeled_set(s["dataset"], s["d"], s["r"], use_attrs) for s in cfg.sources]


def _test(ws: Workspace, ref: dict, use_attrs=True):
    with ws.reading("eval"):
        labels = ws.labels(ref["dataset"], ref["d"], ref["r"])
        manifest = ws.manifest(ref["dataset"])
        lset = ws.labeled_set(ref["dataset"], ref["d"], ref["r"], use_attrs)
    return labels, manifest, lset


def _train_predictor(cfg: RunConfig, sources, seed, head=None, encoder=None):
    sched = cfg.sched(seed, **({"head": head} if head else {}))
    enc = EncoderConfig(**{**cfg.encoder, **(encoder or {})})
    torch.manual_seed(seed)
    model = HyperPredictor(enc, sched.head, [(s.d, s.r) for s in sources])
    return train(sources, sched, model=model)


def _predict(ckpt, lset: LabeledSet) -> np.ndarray:
    return ckpt.predict_raw(lset.images, lset.d, lset.r, lset.attrs, lset.meta)


def _score(ref, labels, manifest, preds, method, seed, extra=None):
    return score_predictions(manifest, labels, preds, method, seed, ref["dataset"], extra)


# ------------------------------------------------------------- experiments

def run_pretrain(ws: Workspace, cfg: RunConfig) -> RunResult:
    use_attrs = cfg.options.get("use_attrs", True)
    sources = _sources(ws, cfg, use_attrs)
    tests = [_test(ws, t, use_attrs) for t in cfg.tests]
    rows = []
    for seed in cfg.seeds:
        ckpt = _train_predictor(cfg, sources, seed)
        for ref, (labels, manifest, lset) in zip(cfg.tests, tests):
            rows += _score(ref, labels, manifest, _predict(ckpt, lset), "hyperdn", seed)
    for ref, (labels, _, _) in zip(cfg.tests, tests):
        rows += oracle_rows(labels, ref["dataset"])
    return RunResult(rows)


def run_ablate_stages(ws: Workspace, cfg: RunConfig) -> RunResult:
    use_attrs = cfg.options.get("use_attrs", True)
    sources = _sources(ws, cfg, use_attrs)
    tests = [_test(ws, t, use_attrs) for t in cfg.tests]
    rows = []
    for stages in cfg.options.get("stages", [1, 2, 4]):
        for seed in cfg.seeds:
            ckpt = _train_predictor(cfg, sources, seed, encoder={"stages_used": stages})
            for ref, (labels, manifest, lset) in zip(cfg.tests, tests):
                rows += _score(ref, labels, manifest, _predict(ckpt, lset), f"stages_{stages}",
                               seed, {"stages": stages})
    return RunResult(rows)


def run_cross_resolution(ws: Workspace, cfg: RunConfig) -> RunResult:
    """Train on the (small-image) sources, apply unchanged to larger test images."""
    result = run_pretrain(ws, cfg)
    for row in result.rows:
        row["size"] = ws.manifest(row["dataset"]).provenance.get("spec", {}).get("size", "")
    return result


def run_per_config_baseline(ws: Workspace, cfg: RunConfig) -> RunResult:
    if cfg.target is None:
        raise ConfigError("per_config_baseline needs a target label set")
    with ws.reading("train"):
        tgt = ws.labeled_set(cfg.target["dataset"], cfg.target["d"], cfg.target["r"])
    tests = [_test(ws, t) for t in cfg.tests]
    rows = []
    for seed in cfg.seeds:
        ckpt = train_config_cnn(tgt, TrainSchedule(**{**cfg.cnn_schedule, "seed": seed}))
        for ref, (labels, manifest, lset) in zip(cfg.tests, tests):
            rows += _score(ref, labels, manifest, _predict(ckpt, lset), "config_cnn", seed)
    for ref, (labels, _, _) in zip(cfg.tests, tests):
        rows += oracle_rows(labels, ref["dataset"])
    return RunResult(rows)


def run_finetune(ws: Workspace, cfg: RunConfig) -> RunResult:
    """Few-shot transfer: source-pretrained predictor vs from-scratch per-config CNN."""
    if cfg.target is None or not cfg.tests:
        raise ConfigError("finetune needs a target label pool and a test set")
    shots = sorted(cfg.options.get("shots", [1, 2, 4, 8, 16]))
    sources = _sources(ws, cfg)
    with ws.reading("train"):
        pool = ws.labeled_set(cfg.target["dataset"], cfg.target["d"], cfg.target["r"])
    if shots[-1] > len(pool):
        raise ConfigError(f"target pool has {len(pool)} labels, need {shots[-1]}")
    ref = cfg.tests[0]
    labels, manifest, lset = _test(ws, ref)
    ft_sched = {**cfg.schedule, "llrd": 0.1, **cfg.finetune_schedule}
    methods = cfg.options.get("methods", ["hyperdn", "config_cnn"])
    rows = []
    for seed in cfg.seeds:
        pre = _train_predictor(cfg, sources, seed) if "hyperdn" in methods else None
        perm = SeededRng(seed).child("shots").permutation(len(pool))
        for k in shots:
            sub = pool.subset(np.sort(perm[:k]))
            if pre is not None:
                ft = finetune(pre, sub, TrainSchedule(**{**ft_sched, "seed": seed}))
                rows += _score(ref, labels, manifest, _predict(ft, lset), "hyperdn", seed,
                               {"shots": k})
            if "config_cnn" in methods:
                cnn = train_config_cnn(sub, TrainSchedule(**{**cfg.cnn_schedule, "seed": seed}))
                rows += _score(ref, labels, manifest, _predict(cnn, lset), "config_cnn", seed,
                               {"shots": k})
    rows += oracle_rows(labels, ref["dataset"], {"shots": ""})
    return RunResult(rows, curve_key="shots")


def _zero_shot_rows(ws, cfg, heads, baselines: bool) -> list[dict]:
    if len(cfg.sources) != 2 and baselines:
        raise ConfigError("zero-shot baselines need exactly two single-noise sources")
    use_attrs = cfg.options.get("use_attrs", True)
    sources = _sources(ws, cfg, use_attrs)
    with ws.reading("train"):
        source_labels = [ws.labels(s["dataset"], s["d"], s["r"]) for s in cfg.sources]
    ref = cfg.tests[0]
    labels, manifest, lset = _test(ws, ref, use_attrs)
    rows = []
    for seed in cfg.seeds:
        for head in heads:
            ckpt = _train_predictor(cfg, sources, seed, head=head)
            name = "hyperdn" if len(heads) == 1 else head
            rows += _score(ref, labels, manifest, _predict(ckpt, lset), name, seed)
        if baselines:
            preds = []
            for src in sources:
                cnn = train_config_cnn(src, TrainSchedule(**{**cfg.cnn_schedule, "seed": seed}))
                preds.append(_predict(cnn, lset))
            rows += _score(ref, labels, manifest, cnn_mean(preds, lset.mask), "cnn_mean", seed)
    if baselines:
        fixed = mean_opt(source_labels)
        rows += _score(ref, labels, manifest, np.tile(fixed, (len(labels), 1)), "mean_opt", None)
    rows += oracle_rows(labels, ref["dataset"])
    return rows


def cnn_mean(preds, mask) -> np.ndarray:
    """Elementwise mean of per-source CNN predictions over active slots."""
    out = np.mean(np.stack(preds), axis=0)
    out[:, ~np.asarray(mask, dtype=bool)] = 0.0
    return out


def mean_opt(source_labels) -> np.ndarray:
    """Average of per-source mean oracle vectors (learning domain)."""
    if len(source_labels) != 2:
        raise ConfigError("Mean-opt needs exactly two source label tables")
    means = [avg_oracle_baseline(labs).as_array() for labs in source_labels]
    return np.mean(means, axis=0)


def run_zero_shot_mixed(ws: Workspace, cfg: RunConfig) -> RunResult:
    head = cfg.schedule.get("head", "calibrated_slot")
    rows = _zero_shot_rows(ws, cfg, [head], baselines=True)
    return RunResult(rows)


def run_ablate_head(ws: Workspace, cfg: RunConfig) -> RunResult:
    heads = cfg.options.get("heads", ["plain_mlp", "slot_affine", "calibrated_slot"])
    return RunResult(_zero_shot_rows(ws, cfg, heads, baselines=False))


def run_sure_compare(ws: Workspace, cfg: RunConfig) -> RunResult:
    """Avg-oracle, SURE, predictor and oracle on Gaussian L2-TV test images."""
    if len(cfg.sources) != 1 or len(cfg.tests) != 1:
        raise ConfigError("sure_compare needs one source and one test set")
    src_ref, ref = cfg.sources[0], cfg.tests[0]
    if (src_ref["d"], src_ref["r"]) != ("l2", "tv") or (ref["d"], ref["r"]) != ("l2", "tv"):
        raise ConfigError("sure_compare is defined for L2-TV only")
    sources = _sources(ws, cfg)
    with ws.reading("train"):
        train_labels = ws.labels(src_ref["dataset"], "l2", "tv")
    labels, manifest, lset = _test(ws, ref)
    avg = avg_oracle_baseline(train_labels).as_array()
    rows = _score(ref, labels, manifest, np.tile(avg, (len(labels), 1)), "avg_oracle", None)
    grid = default_lambda_grid(cfg.options.get("sure_points", 30))
    mrows, _, ys = degraded_images(manifest, [lab.image_id for lab in labels])
    sure_preds = []
    for row, y in zip(mrows, ys):
        sigma = gaussian_sigma(row.noise_spec)
        if sigma is None:
            raise ConfigError(f"image {row.image_id} has no Gaussian component")
        lam = sure_select_lambda(y, sigma, grid, rng=SeededRng(row.noise_spec.seed).child("sure"))
        sure_preds.append([0.0, np.log10(lam), 0.0])
    rows += _score(ref, labels, manifest, np.array(sure_preds), "sure", None)
    for seed in cfg.seeds:
        ckpt = _train_predictor(cfg, sources, seed)
        rows += _score(ref, labels, manifest, _predict(ckpt, lset), "hyperdn", seed)
    rows += oracle_rows(labels, ref["dataset"])
    return RunResult(rows)


RUNNERS = {
    "pretrain": run_pretrain,
    "finetune": run_finetune,
    "zero_shot_mixed": run_zero_shot_mixed,
    "cross_resolution": run_cross_resolution,
    "sure_compare": run_sure_compare,
    "ablate_head": run_ablate_head,
    "ablate_stages": run_ablate_stages,
    "per_config_baseline": run_per_config_baseline,
}


def run_experiment(ws: Workspace, cfg: RunConfig) -> RunResult:
    return RUNNERS[cfg.kind](ws, cfg)
