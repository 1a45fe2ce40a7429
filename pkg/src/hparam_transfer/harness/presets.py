"""Desk-scale default datasets and run configurations."""

from __future__ import annotations

import copy

DATASETS = {
    "gauss_train": {"noise": "gaussian", "count": 96, "size": 48, "seed": 1},
    "gauss_test": {"noise": "gaussian", "count": 24, "size": 48, "seed": 2},
    "gauss_big": {"noise": "gaussian", "count": 384, "size": 48, "seed": 3},
    "tgv_pool": {"noise": "gaussian", "count": 16, "size": 48, "seed": 4},
    "bw_train": {"noise": "bw_impulse", "count": 96, "size": 48, "seed": 5},
    "mixed_test": {"noise": "bw_impulse+gaussian", "count": 24, "size": 48, "seed": 6},
    "gauss_test96": {"noise": "gaussian", "count": 24, "size": 96, "seed": 7},
    "gauss_test192": {"noise": "gaussian", "count": 24, "size": 192, "seed": 8},
}

GRID = {"points": 5, "levels": 2, "zoom": 1.0 / 3.0}

SCHEDULE = {"epochs": 200, "batch_size": 16, "head_lr": 3e-3, "llrd": 0.8,
            "weight_decay": 1e-5, "warmup_frac": 0.1, "final_lr": 1e-6, "clip_norm": 1.0}
FINETUNE_SCHEDULE = {"epochs": 60, "llrd": 0.1}
CNN_SCHEDULE = {"epochs": 200, "batch_size": 16, "head_lr": 1e-3, "llrd": 1.0,
                "weight_decay": 1e-5, "warmup_frac": 0.1, "final_lr": 1e-6, "clip_norm": 1.0,
                "loss": "plain_mse"}

SEEDS = [0, 1, 2]


def _ref(dataset, d, r):
    return {"dataset": dataset, "d": d, "r": r}


_PRESETS = {
    "pretrain": {
        "sources": [_ref("gauss_train", "l2", "tv"), _ref("gauss_train", "huber", "tv"),
                    _ref("gauss_train", "l2", "tgv")],
        "tests": [_ref("gauss_test", "l2", "tv")],
    },
    "finetune": {
        "sources": [_ref("gauss_train", "l2", "tv"), _ref("gauss_train", "huber", "tv"),
                    _ref("gauss_train", "l2", "tgv")],
        "target": _ref("tgv_pool", "huber", "tgv"),
        "tests": [_ref("gauss_test", "huber", "tgv")],
        "options": {"shots": [1, 2, 4, 8, 16]},
    },
    "zero_shot_mixed": {
        "sources": [_ref("bw_train", "huber", "tv"), _ref("gauss_train", "huber", "tv")],
        "tests": [_ref("mixed_test", "huber", "tv")],
    },
    "ablate_head": {
        "sources": [_ref("bw_train", "huber", "tv"), _ref("gauss_train", "huber", "tv")],
        "tests": [_ref("mixed_test", "huber", "tv")],
        "options": {"heads": ["plain_mlp", "slot_affine", "calibrated_slot"]},
    },
    "cross_resolution": {
        "sources": [_ref("gauss_big", "l2", "tv"), _ref("gauss_train", "huber", "tv"),
                    _ref("gauss_train", "l2", "tgv")],
        "tests": [_ref("gauss_test96", "l2", "tv"), _ref("gauss_test192", "l2", "tv")],
    },
    "sure_compare": {
        "sources": [_ref("gauss_train", "l2", "tv")],
        "tests": [_ref("gauss_test", "l2", "tv")],
    },
    "ablate_stages": {
        "sources": [_ref("gauss_train", "l2", "tv")],
        "tests": [_ref("gauss_test", "l2", "tv")],
        "options": {"stages": [1, 2, 4]},
    },
    "per_config_baseline": {
        "target": _ref("gauss_train", "l2", "tv"),
        "tests": [_ref("gauss_test", "l2", "tv")],
    },
}


def preset(kind: str, seeds=None) -> dict:
    """Complete config document for experiment ``kind`` at desk scale."""
    if kind not in _PRESETS:
        raise KeyError(f"no preset for {kind!r}")
    doc = copy.deepcopy(_PRESETS[kind])
    doc.update({"kind": kind, "seeds": list(seeds if seeds is not None else SEEDS),
                "datasets": copy.deepcopy(DATASETS), "grid": dict(GRID),
                "schedule": dict(SCHEDULE), "finetune_schedule": dict(FINETUNE_SCHEDULE),
                "cnn_schedule": dict(CNN_SCHEDULE)})
    doc.setdefault("options", {})
    return doc
