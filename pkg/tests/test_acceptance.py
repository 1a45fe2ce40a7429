"""Acceptance criteria at desk scale.

Each test records a one-line PASS/FAIL verdict that is printed in the
terminal summary. Datasets and oracle labels are built once per session in
a shared workspace; set ``HPARAM_TRANSFER_WS`` to reuse a cache directory
across sessions.
"""

import filecmp
import math
import os
import shutil
import time
from pathlib import Path

import numpy as np
import pytest
import torch

from hparam_transfer.core import SeededRng
from hparam_transfer.harness.data import DatasetSpec, cmd_dataset, synthetic_image
from hparam_transfer.harness.experiments import RunConfig, run_experiment
from hparam_transfer.harness.presets import preset
from hparam_transfer.harness.report import method_means, summarize, write_report
from hparam_transfer.harness.workspace import Workspace
from hparam_transfer.manifest import read_manifest
from hparam_transfer.oracle import (SearchGrid, exhaustive_search, generate_labels,
                                    hierarchical_search, labels_to_csv)
from hparam_transfer.predictor import (EncoderConfig, HyperPredictor, TrainSchedule,
                                       active_slot_mse, role_weighted_loss, save_checkpoint,
                                       train)
from hparam_transfer.solvers import data_objective, prox_data

pytestmark = pytest.mark.acceptance

SEEDS = [0, 1, 2]


@pytest.fixture(scope="session")
def workspace_root(tmp_path_factory):
    env = os.environ.get("HPARAM_TRANSFER_WS")
    if env:
        Path(env).mkdir(parents=True, exist_ok=True)
        return Path(env)
    return tmp_path_factory.mktemp("acceptance_ws")


def _run(kind, root, seeds=SEEDS, **options):
    doc = preset(kind, seeds)
    doc["options"].update(options)
    cfg = RunConfig.from_dict(doc)
    ws = Workspace(root, cfg.datasets, cfg.grid)
    t0 = time.time()
    result = run_experiment(ws, cfg)
    return result, ws, time.time() - t0


# ---------------------------------------------------------------- 1. prox

def test_c1_prox_oracle(criterion):
    t0 = time.time()
    rng = np.random.default_rng(1)
    worst = {}
    for d in ("l2", "huber", "nll_poisson", "nll_pg"):
        margins = []
        for _ in range(1000):
            v, y = rng.uniform(-0.5, 1.5, 2)
            rho = 10 ** rng.uniform(-1, 2)
            delta = 10 ** rng.uniform(-2, 0) if d == "huber" else None
            meta = {"p_max": 10 ** rng.uniform(0.3, 2.1), "sigma_read": rng.uniform(0, 0.06)}
            u = float(prox_data(d, v, y, rho, delta, meta))
            grid = np.linspace(u - 1.0, u + 1.0, 2001)
            obj = data_objective(d, grid, y, delta, meta) + 0.5 * rho * (grid - v) ** 2
            f_u = data_objective(d, u, y, delta, meta) + 0.5 * rho * (u - v) ** 2
            margins.append(float(np.min(obj) - f_u))
        worst[d] = min(margins)
    elapsed = time.time() - t0
    ok = min(worst.values()) >= -1e-9 and elapsed < 30
    detail = ", ".join(f"{d} {m:.2e}" for d, m in worst.items())
    criterion(1, ok, f"worst margin {detail}; {elapsed:.1f}s")
    assert ok


# ------------------------------------------------------------- 2. gradient

def test_c2_gradient_fidelity(criterion):
    t0 = time.time()
    worst = 0.0
    for seed in range(3):
        torch.manual_seed(seed)
        model = HyperPredictor(EncoderConfig(), configs=[("huber", "tgv")]).double().eval()
        with torch.no_grad():
            for p in model.parameters():
                p.add_(0.05 * torch.randn_like(p))
        imgs = np.stack([synthetic_image(16, SeededRng(seed).child(i)) for i in range(2)])
        x = torch.from_numpy(imgs.transpose(0, 3, 1, 2).copy())
        a = torch.tensor([[0, 1, 0, 0, 0, 0]] * 2, dtype=torch.float64)
        m = torch.zeros(2, 2, dtype=torch.float64)
        target = torch.tensor([[0.2, -1.0, 2.0], [0.5, -2.0, 1.0]], dtype=torch.float64)
        mask = torch.ones(2, 3, dtype=torch.bool)

        def loss_fn():
            return role_weighted_loss(model(x, "huber", "tgv", a, m), target, mask, model.log_var)

        model.zero_grad()
        loss_fn().backward()
        rng = np.random.default_rng(seed)
        for name, p in model.named_parameters():
            flat = p.data.view(-1)
            idx = rng.choice(flat.numel(), size=min(6, flat.numel()), replace=False)
            g = p.grad.view(-1)[idx].clone()
            fd = torch.zeros_like(g)
            with torch.no_grad():
                for j, i in enumerate(idx):
                    old = flat[i].item()
                    flat[i] = old + 1e-3
                    up = loss_fn().item()
                    flat[i] = old - 1e-3
                    dn = loss_fn().item()
                    flat[i] = old
                    fd[j] = (up - dn) / 2e-3
            scale = max(torch.linalg.norm(g).item(), torch.linalg.norm(fd).item(), 1e-12)
            worst = max(worst, torch.linalg.norm(fd - g).item() / scale)
    elapsed = time.time() - t0
    ok = worst < 1e-4 and elapsed < 120
    criterion(2, ok, f"max relative error {worst:.2e} over every parameter array; {elapsed:.1f}s")
    assert ok


# ----------------------------------------------------------------- 3. loss

def test_c3_loss_equations(criterion):
    f64 = torch.float64
    p = torch.tensor([[1.0, 0.0, 0.0], [0.0, 3.0, 0.0]], dtype=f64)
    m = torch.tensor([[True, False, False], [False, True, False]])
    mse = active_slot_mse(p, torch.zeros(2, 3, dtype=f64), m).item()
    p1 = torch.tensor([[0.0, 2.0, 0.0]], dtype=f64)
    m1 = torch.tensor([[False, True, False]])
    s = torch.tensor([0.0, math.log(2), 0.0], dtype=f64)
    rw = role_weighted_loss(p1, torch.zeros(1, 3, dtype=f64), m1, s).item()
    rng = np.random.default_rng(0)
    pr = torch.tensor(rng.standard_normal((5, 3)), dtype=f64)
    tr = torch.tensor(rng.standard_normal((5, 3)), dtype=f64)
    mr = torch.tensor(rng.random((5, 3)) < 0.7)
    mr[0, 1] = True
    half = role_weighted_loss(pr, tr, mr, torch.zeros(3, dtype=f64)).item()
    full = active_slot_mse(pr, tr, mr).item()
    errs = [abs(mse - 5.0), abs(rw - (1 + 0.5 * math.log(2)))]
    ok = max(errs) <= 1e-12 and half == 0.5 * full
    criterion(3, ok, f"fixture errors {errs[0]:.1e}, {errs[1]:.1e}; s=0 gives half MSE exactly: "
                     f"{half == 0.5 * full}")
    assert ok


# --------------------------------------------------------------- 4. oracle

def test_c4_oracle_search(criterion, tmp_path):
    t0 = time.time()
    grid = SearchGrid.default("l2", "tv")
    lattice = grid.fine_lattice("l2", "tv")
    shortfall = []
    for i in range(10):
        x = synthetic_image(32, SeededRng(500).child(i))
        y = x + 0.1 * np.random.default_rng(i).standard_normal(x.shape)
        hier = hierarchical_search(y, x, "l2", "tv", grid)
        full = exhaustive_search(y, x, "l2", "tv", lattice)
        shortfall.append(full.oracle_psnr - hier.oracle_psnr)
    cmd_dataset(DatasetSpec("c4", "gaussian", count=12, size=32, seed=4), tmp_path)
    manifest = read_manifest(tmp_path / "manifest.json")
    csvs = [labels_to_csv(generate_labels(manifest, "huber", "tv",
                                          SearchGrid.default("huber", "tv", points=5),
                                          workers=w).labels) for w in (1, 4)]
    elapsed = time.time() - t0
    ok = max(shortfall) <= 0.05 and csvs[0] == csvs[1] and elapsed < 300
    criterion(4, ok, f"max shortfall vs exhaustive {max(shortfall):.4f} dB; workers 1/4 identical "
                     f"{csvs[0] == csvs[1]}; {elapsed:.1f}s")
    assert ok


# ----------------------------------------------------------------- 5. SURE

def test_c5_sure_direction(criterion, workspace_root):
    result, _, elapsed = _run("sure_compare", workspace_root, seeds=[0])
    means = method_means(summarize(result.rows))
    n = sum(1 for r in result.rows if r["method"] == "sure")
    g_sure, g_avg = means["sure"]["mean_gap"], means["avg_oracle"]["mean_gap"]
    ok = n >= 24 and g_sure < g_avg and g_sure <= 1.0 and elapsed < 600
    criterion(5, ok, f"gap SURE {g_sure:.3f} dB vs avg-oracle {g_avg:.3f} dB on {n} images; "
                     f"{elapsed:.0f}s")
    assert ok


# ------------------------------------------------------------ 6. zero-shot

def test_c6_zero_shot_mixed(criterion, workspace_root):
    result, ws, elapsed = _run("zero_shot_mixed", workspace_root)
    means = method_means(summarize(result.rows))
    n = sum(1 for r in result.rows if r["method"] == "oracle")
    gaps = {m: means[m]["mean_gap"] for m in ("hyperdn", "cnn_mean", "mean_opt")}
    train_reads = ws.read_record().get("train", [])
    leak = any("mixed_test" in p for p in train_reads)
    ok = (gaps["hyperdn"] < gaps["cnn_mean"] and gaps["hyperdn"] < gaps["mean_opt"]
          and n >= 24 and not leak and elapsed < 1800)
    criterion(6, ok, "gap " + ", ".join(f"{k} {v:.3f}" for k, v in gaps.items())
              + f" dB; {n} images; target labels read in training: {leak}; {elapsed:.0f}s")
    assert ok


# --------------------------------------------------------- 7. head ablation

def test_c7_head_ablation(criterion, workspace_root):
    result, _, elapsed = _run("ablate_head", workspace_root)
    means = method_means(summarize(result.rows))
    ps = {h: means[h]["mean_psnr"] for h in ("plain_mlp", "slot_affine", "calibrated_slot")}
    ok = (ps["calibrated_slot"] >= ps["slot_affine"] >= ps["plain_mlp"]
          and ps["calibrated_slot"] - ps["plain_mlp"] >= 0.1 and elapsed < 2700)
    criterion(7, ok, "PSNR " + ", ".join(f"{k} {v:.3f}" for k, v in ps.items())
              + f" dB; {elapsed:.0f}s")
    assert ok


# -------------------------------------------------------------- 8. few-shot

def test_c8_few_shot(criterion, workspace_root):
    result, _, elapsed = _run("finetune", workspace_root, shots=[2])
    means = method_means(summarize(result.rows), shots=2)
    hd, cnn = means["hyperdn"]["mean_psnr"], means["config_cnn"]["mean_psnr"]
    ok = hd - cnn >= 0.3 and elapsed < 2700
    criterion(8, ok, f"2 labels: HyperDn {hd:.3f} dB vs per-config CNN {cnn:.3f} dB "
                     f"(margin {hd - cnn:.3f}); {elapsed:.0f}s")
    assert ok


# ------------------------------------------------------ 9. cross resolution

def test_c9_cross_resolution(criterion, workspace_root):
    result, _, elapsed = _run("cross_resolution", workspace_root)
    rows = [r for r in result.rows if r["method"] == "hyperdn"]
    gaps = {size: method_means(summarize([r for r in rows if r["size"] == size]))["hyperdn"]
            ["mean_gap"] for size in sorted({r["size"] for r in rows})}
    gap = gaps.get(96, math.inf)
    ok = gap <= 0.5 and elapsed < 1800
    criterion(9, ok, f"gap at 96x96 {gap:.3f} dB, at 192x192 {gaps.get(192, math.nan):.3f} dB "
                     f"(trained at 48x48); {elapsed:.0f}s")
    assert ok


# ----------------------------------------------------------- 10. determinism

TINY_DATASETS = {
    "g_src": {"noise": "gaussian", "count": 6, "size": 16, "seed": 11},
    "g_tst": {"noise": "gaussian", "count": 3, "size": 16, "seed": 12},
    "g_big": {"noise": "gaussian", "count": 2, "size": 32, "seed": 13},
    "b_src": {"noise": "bw_impulse", "count": 6, "size": 16, "seed": 14},
    "m_tst": {"noise": "bw_impulse+gaussian", "count": 3, "size": 16, "seed": 15},
    "t_pool": {"noise": "gaussian", "count": 3, "size": 16, "seed": 16},
}


def _ref(ds, d, r):
    return {"dataset": ds, "d": d, "r": r}


TINY_RUNS = {
    "sure_compare": {"sources": [_ref("g_src", "l2", "tv")], "tests": [_ref("g_tst", "l2", "tv")],
                     "options": {"sure_points": 5}},
    "zero_shot_mixed": {"sources": [_ref("b_src", "huber", "tv"), _ref("g_src", "huber", "tv")],
                        "tests": [_ref("m_tst", "huber", "tv")]},
    "ablate_head": {"sources": [_ref("b_src", "huber", "tv"), _ref("g_src", "huber", "tv")],
                    "tests": [_ref("m_tst", "huber", "tv")]},
    "finetune": {"sources": [_ref("g_src", "l2", "tv")], "target": _ref("t_pool", "huber", "tgv"),
                 "tests": [_ref("g_tst", "huber", "tgv")], "options": {"shots": [1, 2]}},
    "cross_resolution": {"sources": [_ref("g_src", "l2", "tv")],
                         "tests": [_ref("g_big", "l2", "tv")]},
}


def _tiny_pass(root: Path):
    """One pass over the smallest instances; everything lands under ``root``."""
    if root.exists():
        shutil.rmtree(root)
    grid = {"points": 3, "levels": 1, "zoom": 0.5}
    sched = {"epochs": 2, "batch_size": 4, "head_lr": 1e-3}
    enc = {"widths": [4, 8], "proj_dim": 4, "trunk_dim": 8}
    ws_root = root / "ws"
    for kind, body in TINY_RUNS.items():
        cfg = RunConfig.from_dict({"kind": kind, "seeds": [0], "datasets": TINY_DATASETS,
                                   "grid": grid, "schedule": sched, "cnn_schedule": sched,
                                   "finetune_schedule": {"epochs": 2}, "encoder": enc, **body})
        ws = Workspace(ws_root, cfg.datasets, cfg.grid)
        res = run_experiment(ws, cfg)
        write_report(root / "reports" / kind, kind, res.rows, cfg.seeds, res.extra, res.curve_key,
                     ws.read_record())
    ws = Workspace(ws_root, TINY_DATASETS, grid)
    src = ws.labeled_set("g_src", "l2", "tv")
    ckpt = train([src], TrainSchedule(**sched), encoder_cfg=EncoderConfig(**enc))
    save_checkpoint(ckpt, root / "checkpoint.npz")


def _tree_equal(a: Path, b: Path) -> list[str]:
    fa = sorted(p.relative_to(a) for p in a.rglob("*") if p.is_file())
    fb = sorted(p.relative_to(b) for p in b.rglob("*") if p.is_file())
    if fa != fb:
        return ["file lists differ"]
    return [str(p) for p in fa if not filecmp.cmp(a / p, b / p, shallow=False)]


def test_c10_determinism(criterion, tmp_path):
    run = tmp_path / "run"
    _tiny_pass(run)
    first = tmp_path / "first"
    shutil.copytree(run, first)
    _tiny_pass(run)
    diff = _tree_equal(first, run)
    n_files = sum(1 for p in run.rglob("*") if p.is_file())
    labels = len(list((run / "ws" / "labels").glob("*.csv")))
    ok = not diff
    criterion(10, ok, f"{n_files} files ({labels} label tables, reports, checkpoint) compared; "
                      f"differing: {diff or 'none'}")
    assert ok

