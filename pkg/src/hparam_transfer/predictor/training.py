"""Pooled training, finetuning, prediction and checkpoint files."""

from __future__ import annotations

import copy
import json
import math
import os
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np
import torch

from ..core import AUGMENTATIONS, SeededRng, augment
from ..solvers import PAD, HyperVector, active_mask
from .losses import compute_loss
from .model import ConfigCNN, HyperPredictor, SlotMeta, build_model

CHECKPOINT_VERSION = 1
DECODE_FLOOR = 1e-6


@dataclass
class TrainSchedule:
    epochs: int = 30
    batch_size: int = 16
    head_lr: float = 2e-4
    llrd: float = 0.8
    weight_decay: float = 1e-5
    warmup_frac: float = 0.1
    final_lr: float = 1e-6
    clip_norm: float = 1.0
    augment: bool = True
    seed: int = 0
    loss: str = "role_weighted"
    head: str = "calibrated_slot"
    select: bool = True
    val_frac: float = 0.05

    def __post_init__(self):
        if not 0.0 <= self.warmup_frac < 1.0:
            raise ValueError("warmup fraction must lie in [0, 1)")
        if not self.clip_norm > 0:
            raise ValueError("clip norm must be positive")
        if self.loss not in ("plain_mse", "role_weighted"):
            raise ValueError(f"unknown loss variant {self.loss!r}")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class LabeledSet:
    """Degraded images of one source with their learning-domain targets."""

    name: str
    d: str
    r: str
    images: np.ndarray          # (N, H, W, C) float32
    targets: np.ndarray         # (N, 3) learning domain, padded
    attrs: np.ndarray           # (N, 6)
    meta: np.ndarray            # (N, 2)
    ids: list = field(default_factory=list)

    def __post_init__(self):
        self.images = np.asarray(self.images, dtype=np.float32)
        n = len(self.images)
        self.targets = np.asarray(self.targets, dtype=np.float64).reshape(n, 3)
        self.attrs = np.asarray(self.attrs, dtype=np.float64).reshape(n, 6)
        self.meta = np.asarray(self.meta, dtype=np.float64).reshape(n, 2)
        if not self.ids:
            self.ids = [f"{self.name}:{i}" for i in range(n)]

    def __len__(self):
        return len(self.images)

    @property
    def mask(self) -> np.ndarray:
        return active_mask(self.d, self.r)

    def subset(self, idx) -> "LabeledSet":
        idx = np.asarray(idx, dtype=int)
        return LabeledSet(self.name, self.d, self.r, self.images[idx], self.targets[idx],
                          self.attrs[idx], self.meta[idx], [self.ids[i] for i in idx])


@dataclass
class Checkpoint:
    model: torch.nn.Module
    provenance: dict = field(default_factory=dict)
    log: list = field(default_factory=list)

    def predict_raw(self, images, d, r, attrs=None, meta=None) -> np.ndarray:
        return predict_raw(self.model, images, d, r, attrs, meta)


# ---------------------------------------------------------------- schedule

def learning_rate(step: int, total: int, sched: TrainSchedule) -> float:
    """Head learning rate: linear warmup from 0, then cosine decay to ``final_lr``."""
    if step < 0:
        raise ValueError("step index must be >= 0")
    warm = int(sched.warmup_frac * total)
    if step < warm:
        return sched.head_lr * step / warm
    span = max(1, total - 1 - warm)
    prog = min(1.0, (step - warm) / span)
    return sched.final_lr + (sched.head_lr - sched.final_lr) * 0.5 * (1.0 + math.cos(math.pi * prog))


def param_groups(model, sched: TrainSchedule):
    """One optimizer group per (LLRD depth, decay flag)."""
    groups: dict[tuple[int, bool], list] = {}
    for name, p in model.named_parameters():
        if not p.requires_grad:
            continue
        decay = p.ndim >= 2 and "embed" not in name and ".role." not in name and ".scale." not in name
        groups.setdefault((model.depth_of(name), decay), []).append(p)
    out = []
    for (depth, decay), params in sorted(groups.items()):
        out.append({"params": params, "depth": depth, "lr_scale": sched.llrd ** depth,
                    "weight_decay": sched.weight_decay if decay else 0.0, "lr": 0.0})
    return out


def make_optimizer(model, sched: TrainSchedule):
    return torch.optim.AdamW(param_groups(model, sched), lr=0.0, betas=(0.9, 0.999), eps=1e-8)


def optimizer_step(opt, model, step: int, total: int, sched: TrainSchedule) -> float:
    """Clip, set per-group learning rates for ``step`` and apply one AdamW update."""
    torch.nn.utils.clip_grad_norm_(model.parameters(), sched.clip_norm)
    lr = learning_rate(step, total, sched)
    for g in opt.param_groups:
        g["lr"] = lr * g["lr_scale"]
    opt.step()
    return lr


# ------------------------------------------------------------------ batches

def _to_tensor(images, dtype) -> torch.Tensor:
    arr = np.ascontiguousarray(np.asarray(images).transpose(0, 3, 1, 2))
    return torch.from_numpy(arr).to(dtype)


def _batch(src: LabeledSet, idx, op: str, dtype):
    imgs = src.images[idx]
    if op != "identity":
        imgs = np.stack([augment(im, op) for im in imgs])
    x = _to_tensor(imgs, dtype)
    t = torch.from_numpy(src.targets[idx]).to(dtype)
    m = torch.from_numpy(np.broadcast_to(src.mask, (len(idx), 3)).copy())
    a = torch.from_numpy(src.attrs[idx]).to(dtype)
    me = torch.from_numpy(src.meta[idx]).to(dtype)
    return x, t, m, a, me


def _loss_on(model, src: LabeledSet, sched: TrainSchedule, dtype) -> float:
    model.eval()
    with torch.no_grad():
        idx = np.arange(len(src))
        x, t, m, a, me = _batch(src, idx, "identity", dtype)
        pred = model(x, src.d, src.r, a, me)
        return float(compute_loss(sched.loss, pred, t, m, model.log_var))


def split_validation(src: LabeledSet, sched: TrainSchedule):
    """Hold out ``val_frac`` of a source; the split depends on source name and seed."""
    n = len(src)
    if not sched.select or n < 2:
        return src, None
    k = max(1, int(round(sched.val_frac * n)))
    perm = SeededRng(sched.seed).child(f"val:{src.name}").permutation(n)
    return src.subset(np.sort(perm[k:])), src.subset(np.sort(perm[:k]))


def _epoch_batches(sources, sched: TrainSchedule, rng: SeededRng, epoch: int):
    batches = []
    for si, src in enumerate(sources):
        perm = rng.child(f"epoch:{epoch}:source:{si}").permutation(len(src))
        for start in range(0, len(src), sched.batch_size):
            batches.append((si, np.sort(perm[start:start + sched.batch_size])))
    order = rng.child(f"epoch:{epoch}:order").permutation(len(batches))
    return [batches[i] for i in order]


def fit(model, sources, sched: TrainSchedule, dtype=torch.float32) -> list:
    """Optimize ``model`` in place on single-source batches; returns the per-epoch log.

    With selection enabled the weights with the lowest validation loss are
    restored at the end.
    """
    if not sources:
        raise ValueError("no training sources")
    for src in sources:
        if len(src) == 0:
            raise ValueError(f"source {src.name!r} is empty")
        model.register_config(src.d, src.r)
    torch.manual_seed(sched.seed)
    rng = SeededRng(sched.seed).child("train")
    train_sets, val_sets = [], []
    for src in sources:
        tr, va = split_validation(src, sched)
        train_sets.append(tr)
        if va is not None:
            val_sets.append(va)
    per_epoch = sum(math.ceil(len(s) / sched.batch_size) for s in train_sets)
    total = sched.epochs * per_epoch
    opt = make_optimizer(model, sched)
    best, best_val, log, step = None, math.inf, [], 0
    for epoch in range(sched.epochs):
        model.train()
        losses, names, lr = [], [], 0.0
        for bi, (si, idx) in enumerate(_epoch_batches(train_sets, sched, rng, epoch)):
            src = train_sets[si]
            op = "identity"
            if sched.augment:
                op = AUGMENTATIONS[int(rng.child(f"aug:{epoch}:{bi}").integers(len(AUGMENTATIONS)))]
            x, t, m, a, me = _batch(src, idx, op, dtype)
            pred = model(x, src.d, src.r, a, me)
            loss = compute_loss(sched.loss, pred, t, m, model.log_var)
            opt.zero_grad(set_to_none=True)
            loss.backward()
            lr = optimizer_step(opt, model, step, total, sched)
            step += 1
            losses.append(float(loss.detach()))
            names.append(src.name)
        entry = {"epoch": epoch, "loss": float(np.mean(losses)) if losses else None,
                 "lr": lr, "batch_sources": names}
        if val_sets:
            val = float(np.mean([_loss_on(model, v, sched, dtype) for v in val_sets]))
            entry["val_loss"] = val
            if val < best_val:
                best_val = val
                best = copy.deepcopy(model.state_dict())
        log.append(entry)
    if best is None:
        best = copy.deepcopy(model.state_dict())
    model.load_state_dict(best)
    model.eval()
    return log


def train(sources, sched: TrainSchedule, model=None, encoder_cfg=None) -> Checkpoint:
    """Pooled training over labeled sources with single-source batches."""
    if model is None:
        torch.manual_seed(sched.seed)
        model = HyperPredictor(encoder_cfg, sched.head, [(s.d, s.r) for s in sources])
    model.encoder.fit_size_ref([img.shape for s in sources for img in s.images])
    log = fit(model, sources, sched)
    return Checkpoint(model, {"schedule": sched.to_dict(), "sources": [s.name for s in sources],
                              "stage": "train"}, log)


def train_config_cnn(target: LabeledSet, sched: TrainSchedule) -> Checkpoint:
    """From-scratch per-configuration CNN on the target labels only."""
    torch.manual_seed(sched.seed)
    model = ConfigCNN(target.d, target.r, target.images.shape[-1])
    log = fit(model, [target], replace(sched, loss="plain_mse", llrd=1.0))
    return Checkpoint(model, {"schedule": sched.to_dict(), "sources": [target.name],
                              "stage": "config_cnn"}, log)


def finetune(ckpt: Checkpoint, target: LabeledSet, sched: TrainSchedule) -> Checkpoint:
    """Supervised finetuning on target labels; log-variances carry over from ``ckpt``."""
    if len(target) == 0:
        raise ValueError("finetuning needs at least one target label")
    model = copy.deepcopy(ckpt.model)
    model.register_config(target.d, target.r)
    sched = replace(sched, batch_size=min(8, len(target)), select=False)
    log = fit(model, [target], sched) if sched.epochs > 0 else []
    prov = dict(ckpt.provenance)
    prov.update({"stage": "finetune", "finetune_schedule": sched.to_dict(),
                 "finetune_target": target.name})
    return Checkpoint(model, prov, log)


# --------------------------------------------------------------- prediction

def decode_hyper(pred, slot_meta: SlotMeta, mask) -> HyperVector:
    """Learning-domain prediction -> solver-domain hyper vector."""
    pred = np.asarray(pred, dtype=np.float64).reshape(3)
    vals = []
    for v, scale, on in zip(pred, slot_meta.scales, mask):
        if not on:
            vals.append(PAD)
        elif scale == "log10":
            vals.append(10.0 ** v)
        else:
            vals.append(max(float(v), DECODE_FLOOR))
    return HyperVector(tuple(vals), tuple(bool(m) for m in mask), "solver")


def predict_raw(model, images, d, r, attrs=None, meta=None) -> np.ndarray:
    """Learning-domain predictions ``(N, 3)`` for a stack of same-size images."""
    model.check_config(d, r)
    images = np.asarray(images, dtype=np.float32)
    if images.ndim == 3:
        images = images[None]
    n = len(images)
    dtype = next(model.parameters()).dtype
    if attrs is None:
        attrs = np.tile([1.0, 0, 0, 0, 0, 0], (n, 1))
    if meta is None:
        meta = np.zeros((n, 2))
    a = torch.from_numpy(np.asarray(attrs, dtype=np.float64).reshape(n, 6)).to(dtype)
    me = torch.from_numpy(np.asarray(meta, dtype=np.float64).reshape(n, 2)).to(dtype)
    model.eval()
    with torch.no_grad():
        out = [model(_to_tensor(images[i:i + 1], dtype), d, r, a[i:i + 1], me[i:i + 1])
               for i in range(n)]
    return torch.cat(out).double().numpy()


def predict(ckpt: Checkpoint, image, d: str, r: str, attrs=None, meta=None) -> HyperVector:
    raw = predict_raw(ckpt.model, image, d, r, attrs, meta)[0]
    return decode_hyper(raw, SlotMeta.for_config(d, r), active_mask(d, r))


# ------------------------------------------------------------- checkpoints

def save_checkpoint(ckpt: Checkpoint, path) -> None:
    """npz of float64 arrays named by parameter path, plus a JSON ``__meta__`` entry."""
    arrays = {k: v.detach().double().cpu().numpy() for k, v in ckpt.model.state_dict().items()
              if v.is_floating_point()}
    meta = {"format_version": CHECKPOINT_VERSION, "model": ckpt.model.meta_dict(),
            "provenance": ckpt.provenance}
    ints = {k: v.cpu().numpy() for k, v in ckpt.model.state_dict().items()
            if not v.is_floating_point()}
    meta["int_buffers"] = sorted(ints)
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp.npz")
    np.savez(tmp, __meta__=np.array(json.dumps(meta, sort_keys=True)), **arrays,
             **{k: v.astype(np.int64) for k, v in ints.items()})
    os.replace(tmp, path)


def load_checkpoint(path) -> Checkpoint:
    with np.load(path, allow_pickle=False) as z:
        meta = json.loads(str(z["__meta__"]))
        if meta.get("format_version") != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {meta.get('format_version')}")
        model = build_model(meta["model"])
        ref = model.state_dict()
        state = {}
        for k, v in ref.items():
            arr = torch.from_numpy(np.array(z[k]))
            state[k] = arr.to(v.dtype)
    model.load_state_dict(state)
    model.eval()
    return Checkpoint(model, meta.get("provenance", {}), [])
