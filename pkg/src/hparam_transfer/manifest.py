"""Dataset manifests: which clean image gets which noise realization."""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .core import load_image
from .noise import NoiseSpec, apply_noise

FORMAT_VERSION = 1


@dataclass(frozen=True)
class ManifestRow:
    image_id: str
    path: str
    noise_spec: NoiseSpec


@dataclass
class Manifest:
    dataset_id: str
    rows: list[ManifestRow]
    provenance: dict = field(default_factory=dict)
    root: Path | None = None

    def __post_init__(self):
        ids = [r.image_id for r in self.rows]
        if len(set(ids)) != len(ids):
            raise ValueError(f"duplicate image ids in manifest {self.dataset_id!r}")

    def __len__(self):
        return len(self.rows)

    def resolve(self, row: ManifestRow) -> Path:
        p = Path(row.path)
        if not p.is_absolute() and self.root is not None:
            p = self.root / p
        return p

    def load_pair(self, row: ManifestRow) -> tuple[np.ndarray, np.ndarray]:
        """Return ``(clean, degraded)``; the degraded image is regenerated from the spec."""
        x = load_image(self.resolve(row))
        return x, apply_noise(x, row.noise_spec)

    def by_id(self) -> dict[str, ManifestRow]:
        return {r.image_id: r for r in self.rows}

    def to_dict(self) -> dict:
        return {
            "format_version": FORMAT_VERSION,
            "dataset_id": self.dataset_id,
            "provenance": self.provenance,
            "rows": [{"image_id": r.image_id, "path": r.path,
                      "noise_spec": r.noise_spec.to_dict()} for r in self.rows],
        }


def write_manifest(manifest: Manifest, path) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(json.dumps(manifest.to_dict(), indent=1, sort_keys=True))
    os.replace(tmp, path)


def read_manifest(path) -> Manifest:
    path = Path(path)
    obj = json.loads(path.read_text())
    if isinstance(obj, list):
        # bare array of rows
        obj = {"dataset_id": path.stem, "rows": obj}
    version = obj.get("format_version", FORMAT_VERSION)
    if version != FORMAT_VERSION:
        raise ValueError(f"unsupported manifest format_version {version}")
    rows = [ManifestRow(str(r["image_id"]), str(r["path"]), NoiseSpec.from_dict(r["noise_spec"]))
            for r in obj["rows"]]
    return Manifest(obj.get("dataset_id", path.stem), rows, obj.get("provenance", {}),
                    root=path.parent)
