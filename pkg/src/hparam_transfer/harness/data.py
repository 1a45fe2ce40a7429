"""Synthetic clean images, dataset preparation and label-backed training sets."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from ..core import SeededRng, center_crop, load_image, save_image
from ..manifest import Manifest, ManifestRow, write_manifest
from ..noise import apply_noise, sample_noise_spec
from ..predictor.model import condition_inputs
from ..predictor.training import LabeledSet

IMAGE_SUFFIXES = (".ppm", ".pgm", ".pnm", ".png", ".jpg", ".jpeg", ".bmp", ".tif", ".tiff")


def synthetic_image(size: int | tuple[int, int], rng: SeededRng, channels: int = 3) -> np.ndarray:
    """Piecewise-smooth test image: affine ramp, flat rectangles and disks, faint texture.

    Geometry is drawn relative to the image extent; texture frequencies are
    in cycles per pixel. Output is float64 in [0, 1].
    """
    h, w = (size, size) if isinstance(size, int) else size
    yy, xx = np.meshgrid(np.linspace(0, 1, h), np.linspace(0, 1, w), indexing="ij")
    g = rng.child("ramp")
    base = g.uniform(0.2, 0.8, channels)
    slope = g.uniform(-0.3, 0.3, (2, channels))
    img = base + xx[..., None] * slope[0] + yy[..., None] * slope[1]
    g = rng.child("shapes")
    for k in range(int(g.integers(3, 9))):
        s = g.child(k)
        color = s.uniform(0.0, 1.0, channels)
        cy, cx = s.uniform(0, 1, 2)
        if s.random() < 0.5:
            hh, ww = s.uniform(0.08, 0.35, 2)
            inside = (np.abs(yy - cy) <= hh) & (np.abs(xx - cx) <= ww)
        else:
            rad = s.uniform(0.06, 0.3)
            inside = (yy - cy) ** 2 + (xx - cx) ** 2 <= rad ** 2
        img = np.where(inside[..., None], color, img)
    g = rng.child("texture")
    amp = g.uniform(0.0, 0.06)
    f_lo = g.uniform(0.05, 0.15)
    f_hi = f_lo + g.uniform(0.05, 0.15)
    white = g.normal(0.0, 1.0, (h, w, channels))
    fy = np.fft.fftfreq(h)[:, None]
    fx = np.fft.fftfreq(w)[None, :]
    rad = np.sqrt(fy ** 2 + fx ** 2)
    band = ((rad >= f_lo) & (rad <= f_hi)).astype(np.float64)[..., None]
    tex = np.real(np.fft.ifft2(np.fft.fft2(white, axes=(0, 1)) * band, axes=(0, 1)))
    std = tex.std()
    if std > 0:
        img = img + amp * tex / std
    return np.clip(img, 0.0, 1.0)


@dataclass
class DatasetSpec:
    """Declarative description of one dataset.

    ``source`` is ``"synthetic"`` or a directory of images. ``noise`` is a
    noise kind understood by :func:`sample_noise_spec`.
    """

    dataset_id: str
    noise: str
    count: int = 32
    size: int = 48
    source: str = "synthetic"
    seed: int = 0
    channels: int = 3
    offset: int = 0

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, obj: dict) -> "DatasetSpec":
        return cls(**obj)


@dataclass
class DatasetResult:
    manifest: Manifest
    failures: list = field(default_factory=list)


def _source_images(spec: DatasetSpec):
    """Yield ``(image_id, clean image or exception)``."""
    if spec.source == "synthetic":
        root = SeededRng(spec.seed).child("synthetic")
        for i in range(spec.offset, spec.offset + spec.count):
            iid = f"img{i:05d}"
            yield iid, synthetic_image(spec.size, root.child(i), spec.channels)
        return
    src = Path(spec.source)
    if not src.is_dir():
        raise FileNotFoundError(f"image directory {src} does not exist")
    files = sorted(p for p in src.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)
    if not files:
        raise ValueError(f"no images found in {src}")
    for p in files[spec.offset:spec.offset + spec.count]:
        try:
            yield p.stem, center_crop(load_image(p), spec.size)
        except Exception as exc:  # recorded per row
            yield p.stem, exc


def cmd_dataset(spec: DatasetSpec, out_dir) -> DatasetResult:
    """Write clean PPM/PGM files, degraded ``.npy`` copies and ``manifest.json``.

    Degraded copies are for inspection only; consumers regenerate them from
    the clean image and noise spec.
    """
    out = Path(out_dir)
    (out / "clean").mkdir(parents=True, exist_ok=True)
    (out / "degraded").mkdir(parents=True, exist_ok=True)
    noise_root = SeededRng(spec.seed).child(f"noise:{spec.dataset_id}")
    rows, failures = [], []
    for iid, img in _source_images(spec):
        if isinstance(img, Exception):
            failures.append({"image_id": iid, "error": f"{type(img).__name__}: {img}"})
            continue
        ext = ".ppm" if img.shape[-1] == 3 else ".pgm"
        rel = f"clean/{iid}{ext}"
        save_image(img, out / rel)
        nspec = sample_noise_spec(spec.noise, noise_root.child(iid))
        clean = load_image(out / rel)
        np.save(out / "degraded" / f"{iid}.npy", apply_noise(clean, nspec))
        rows.append(ManifestRow(iid, rel, nspec))
    if not rows and not failures:
        raise ValueError(f"dataset {spec.dataset_id!r} has no source images")
    manifest = Manifest(spec.dataset_id, rows, {"spec": spec.to_dict()}, root=out)
    write_manifest(manifest, out / "manifest.json")
    if failures:
        (out / "failures.json").write_text(json.dumps({"failures": failures}, indent=1))
    return DatasetResult(manifest, failures)


def degraded_images(manifest: Manifest, ids=None) -> tuple[list, np.ndarray, np.ndarray]:
    """Rows (in ``ids`` order, default manifest order), clean and degraded stacks."""
    by_id = manifest.by_id()
    rows = [by_id[i] for i in ids] if ids is not None else list(manifest.rows)
    pairs = [manifest.load_pair(r) for r in rows]
    return rows, np.stack([p[0] for p in pairs]), np.stack([p[1] for p in pairs])


def labeled_set(name: str, manifest: Manifest, labels, use_attrs: bool = True) -> LabeledSet:
    """Training set from a manifest and its oracle labels (one config)."""
    if not labels:
        raise ValueError(f"no labels for {name}")
    configs = {(lab.d, lab.r) for lab in labels}
    if len(configs) != 1:
        raise ValueError("labels mix configurations")
    d, r = configs.pop()
    rows, _, ys = degraded_images(manifest, [lab.image_id for lab in labels])
    conds = [condition_inputs(row.noise_spec, use_attrs) for row in rows]
    return LabeledSet(name, d, r, ys, np.array([lab.p_star.slots for lab in labels]),
                      np.array([c[0] for c in conds]), np.array([c[1] for c in conds]),
                      [lab.image_id for lab in labels])
