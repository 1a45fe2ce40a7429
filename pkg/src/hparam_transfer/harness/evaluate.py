"""Per-image scoring of predicted hyperparameters against oracle labels."""

from __future__ import annotations

import numpy as np

from ..core import psnr
from ..noise import noise_metadata
from ..predictor.model import SlotMeta
from ..predictor.training import decode_hyper
from ..solvers import HyperVector, active_mask, denoise
from .data import degraded_images


def score_predictions(manifest, labels, preds, method: str, seed: int | None = None,
                      dataset: str | None = None, extra: dict | None = None) -> list[dict]:
    """Denoise each test image with its predicted hyperparameters and compare to the oracle.

    ``preds`` holds learning-domain rows ``(N, 3)`` aligned with ``labels``.
    """
    preds = np.asarray(preds, dtype=np.float64).reshape(len(labels), 3)
    rows, xs, ys = degraded_images(manifest, [lab.image_id for lab in labels])
    out = []
    for lab, row, x, y, p in zip(labels, rows, xs, ys, preds):
        d, r = lab.d, lab.r
        hv = decode_hyper(p, SlotMeta.for_config(d, r), active_mask(d, r))
        u = denoise(y, d, r, hv, noise_metadata(row.noise_spec))
        value = psnr(x, u)
        rec = {
            "method": method, "seed": "" if seed is None else seed,
            "dataset": dataset or manifest.dataset_id, "config": f"{d}_{r}",
            "image_id": lab.image_id, "p_delta": hv.slots[0], "p_lambda": hv.slots[1],
            "p_gamma": hv.slots[2], "psnr": value, "oracle_psnr": lab.oracle_psnr,
            "gap": lab.oracle_psnr - value,
        }
        if extra:
            rec.update(extra)
        out.append(rec)
    return out


def oracle_rows(labels, dataset: str, extra: dict | None = None) -> list[dict]:
    out = []
    for lab in labels:
        hv = lab.p_star.to_solver()
        rec = {"method": "oracle", "seed": "", "dataset": dataset, "config": f"{lab.d}_{lab.r}",
               "image_id": lab.image_id, "p_delta": hv.slots[0], "p_lambda": hv.slots[1],
               "p_gamma": hv.slots[2], "psnr": lab.oracle_psnr, "oracle_psnr": lab.oracle_psnr,
               "gap": 0.0}
        if extra:
            rec.update(extra)
        out.append(rec)
    return out


def recompute_psnr(manifest, row: dict, meta_override=None) -> float:
    """Re-run the denoiser for one report row (solver-domain slots stored in the row)."""
    d, r = row["config"].rsplit("_", 1)
    mrow = manifest.by_id()[row["image_id"]]
    x, y = manifest.load_pair(mrow)
    mask = active_mask(d, r)
    hv = HyperVector((float(row["p_delta"]), float(row["p_lambda"]), float(row["p_gamma"])),
                     tuple(mask), "solver")
    meta = meta_override if meta_override is not None else noise_metadata(mrow.noise_spec)
    return psnr(x, denoise(y, d, r, hv, meta))
