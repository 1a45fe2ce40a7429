"""Oracle hyperparameter labels: PSNR-maximizing grid search against the clean image.

Search happens in the learning domain (``log10`` lambda, linear delta and
gamma). :func:`hierarchical_search` evaluates a coarse Cartesian grid and
then zooms around the incumbent; :func:`exhaustive_search` evaluates an
explicit lattice and serves as its verification oracle.
"""

from __future__ import annotations

import csv
import io
import itertools
import json
import logging
import multiprocessing as mp
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .core import psnr
from .manifest import Manifest
from .noise import NoiseSpec, noise_metadata
from .solvers import HyperVector, active_mask, denoise_batch

log = logging.getLogger(__name__)

LABEL_FORMAT_VERSION = 1
LABEL_COLUMNS = ["image_id", "seed", "d", "r", "noise_json", "p_delta", "p_log10_lambda",
                 "p_gamma", "mask", "oracle_psnr", "evals"]

# default brackets in the learning domain
BRACKETS = {"delta": (0.01, 1.0), "lambda": (-3.0, 1.0), "gamma": (0.25, 8.0)}
SCALES = {"delta": "linear", "lambda": "log10", "gamma": "linear"}
_SLOTS = ("delta", "lambda", "gamma")


@dataclass(frozen=True)
class SlotGrid:
    lo: float
    hi: float
    points: int = 9
    scale: str = "linear"

    def __post_init__(self):
        if not self.hi >= self.lo:
            raise ValueError("bracket must satisfy lo <= hi")
        if self.points < 3:
            raise ValueError("need at least 3 coarse points per slot")


@dataclass(frozen=True)
class SearchGrid:
    """Per-slot brackets plus the shared refinement schedule.

    ``slots`` maps slot name (``delta``/``lambda``/``gamma``) to its
    :class:`SlotGrid`; it must name exactly the active slots of the config.
    """

    slots: dict
    levels: int = 2
    zoom: float = 1.0 / 3.0

    def __post_init__(self):
        if self.levels < 0:
            raise ValueError("refinement levels must be >= 0")
        if not 0.0 < self.zoom < 1.0:
            raise ValueError("zoom factor must lie in (0, 1)")
        for name in self.slots:
            if name not in _SLOTS:
                raise ValueError(f"unknown slot {name!r}")

    @classmethod
    def default(cls, d: str, r: str, points: int = 9, levels: int = 2,
                zoom: float = 1.0 / 3.0) -> "SearchGrid":
        mask = active_mask(d, r)
        slots = {n: SlotGrid(*BRACKETS[n], points=points, scale=SCALES[n])
                 for n, m in zip(_SLOTS, mask) if m}
        return cls(slots, levels, zoom)

    def to_dict(self) -> dict:
        return {"levels": self.levels, "zoom": self.zoom,
                "slots": {k: vars(v) for k, v in self.slots.items()}}

    @classmethod
    def from_dict(cls, obj: dict) -> "SearchGrid":
        return cls({k: SlotGrid(**v) for k, v in obj["slots"].items()},
                   obj.get("levels", 2), obj.get("zoom", 1.0 / 3.0))

    def check(self, d: str, r: str):
        want = {n for n, m in zip(_SLOTS, active_mask(d, r)) if m}
        if set(self.slots) != want:
            raise ValueError(f"grid slots {sorted(self.slots)} do not match active slots "
                             f"{sorted(want)} of ({d}, {r})")

    def coarse_axes(self, d: str, r: str) -> list[np.ndarray]:
        self.check(d, r)
        # a degenerate bracket (lo == hi) collapses to a single candidate
        return [np.linspace(g.lo, g.hi, g.points) if g.hi > g.lo else np.array([g.lo])
                for g in self._ordered()]

    def fine_lattice(self, d: str, r: str) -> np.ndarray:
        """Every point the fully refined step size can reach inside the brackets."""
        self.check(d, r)
        axes = []
        for g in self._ordered():
            if g.hi == g.lo:
                axes.append(np.array([g.lo]))
                continue
            step = (g.hi - g.lo) * self.zoom ** self.levels / (g.points - 1)
            n = int(round((g.hi - g.lo) / step))
            axes.append(g.lo + step * np.arange(n + 1))
        return _product(axes)

    def _ordered(self):
        return [self.slots[n] for n in _SLOTS if n in self.slots]


@dataclass
class OracleLabel:
    image_id: str
    seed: int
    d: str
    r: str
    noise_json: str
    p_star: HyperVector
    oracle_psnr: float
    evals: int

    def row(self) -> dict:
        s = self.p_star.slots
        return {
            "image_id": self.image_id, "seed": self.seed, "d": self.d, "r": self.r,
            "noise_json": self.noise_json, "p_delta": repr(s[0]),
            "p_log10_lambda": repr(s[1]), "p_gamma": repr(s[2]),
            "mask": "".join("1" if m else "0" for m in self.p_star.mask),
            "oracle_psnr": repr(self.oracle_psnr), "evals": self.evals,
        }

    @property
    def noise_spec(self) -> NoiseSpec | None:
        obj = json.loads(self.noise_json)
        return NoiseSpec.from_dict(obj) if obj else None


def _product(axes) -> np.ndarray:
    return np.array(list(itertools.product(*axes)), dtype=np.float64).reshape(-1, len(axes))


def _expand(points: np.ndarray, mask) -> np.ndarray:
    """Active-slot coordinates -> padded learning-domain rows ``(K, 3)``."""
    out = np.zeros((points.shape[0], 3))
    out[:, np.flatnonzero(mask)] = points
    return out


def _tie_key(psnr_value, row):
    # best PSNR first, then smallest lambda, delta, gamma
    return (-psnr_value, row[1], row[0], row[2])


class _Evaluator:
    """Caches PSNR per learning-domain candidate for one (image, config)."""

    def __init__(self, y, x, d, r, meta=None, chunk: int = 64):
        self.y, self.x, self.d, self.r, self.meta = y, x, d, r, meta
        self.mask = active_mask(d, r)
        self.cache: dict[tuple, tuple[np.ndarray, float]] = {}
        self.chunk = chunk

    @staticmethod
    def key(row):
        return tuple(round(float(v), 12) for v in row)

    def __call__(self, rows: np.ndarray) -> np.ndarray:
        todo = {}
        for row in rows:
            k = self.key(row)
            if k not in self.cache and k not in todo:
                todo[k] = np.array(row, dtype=np.float64)
        todo = list(todo.items())
        for start in range(0, len(todo), self.chunk):
            block = np.array([row for _, row in todo[start:start + self.chunk]])
            block[:, 1] = 10.0 ** block[:, 1]
            outs = denoise_batch(self.y, self.d, self.r, block, self.meta)
            for (k, row), u in zip(todo[start:start + self.chunk], outs):
                self.cache[k] = (row, psnr(self.x, u))
        return np.array([self.cache[self.key(row)][1] for row in rows])

    def best(self):
        row, value = min(self.cache.values(), key=lambda t: _tie_key(t[1], t[0]))
        return row.copy(), value


def _label(ev: _Evaluator, image_id, spec, d, r) -> OracleLabel:
    row, value = ev.best()
    p = HyperVector(tuple(row), tuple(ev.mask), "learning")
    return OracleLabel(image_id, int(spec.seed) if spec is not None else 0, d, r,
                       spec.to_json() if spec is not None else "{}", p, float(value),
                       len(ev.cache))


def hierarchical_search(y, x, d: str, r: str, grid: SearchGrid, meta: dict | None = None,
                        image_id: str = "", spec: NoiseSpec | None = None) -> OracleLabel:
    """Coarse Cartesian grid, then ``grid.levels`` zoomed re-grids around the incumbent.

    Zoomed axes keep the coarse point count, shrink the bracket width by
    ``grid.zoom`` per level, and drop points outside the original bracket.
    The best point ever evaluated is returned.
    """
    if x.shape != y.shape:
        raise ValueError("clean and degraded images differ in shape")
    if meta is None and spec is not None:
        meta = noise_metadata(spec)
    ev = _Evaluator(y, x, d, r, meta)
    mask = ev.mask
    slots = grid._ordered()
    ev(_expand(_product(grid.coarse_axes(d, r)), mask))
    for level in range(1, grid.levels + 1):
        inc = ev.best()[0][mask]
        axes = []
        for g, c in zip(slots, inc):
            if g.hi == g.lo:
                axes.append(np.array([c]))
                continue
            half = 0.5 * (g.hi - g.lo) * grid.zoom ** level
            pts = c + np.linspace(-half, half, g.points)
            tol = 1e-12 * max(1.0, abs(g.hi - g.lo))
            pts = pts[(pts >= g.lo - tol) & (pts <= g.hi + tol)]
            axes.append(np.clip(pts, g.lo, g.hi))
        ev(_expand(_product(axes), mask))
    return _label(ev, image_id, spec, d, r)


def exhaustive_search(y, x, d: str, r: str, lattice, meta: dict | None = None,
                      image_id: str = "", spec: NoiseSpec | None = None) -> OracleLabel:
    """Evaluate every candidate of ``lattice`` (active-slot coordinates, ``(K, n_active)``)."""
    lattice = np.asarray(lattice, dtype=np.float64)
    if lattice.size == 0:
        raise ValueError("empty lattice")
    if meta is None and spec is not None:
        meta = noise_metadata(spec)
    ev = _Evaluator(y, x, d, r, meta)
    mask = ev.mask
    if lattice.ndim == 1:
        lattice = lattice.reshape(-1, int(mask.sum()))
    if lattice.shape[1] != int(mask.sum()):
        raise ValueError("lattice width does not match active slot count")
    ev(_expand(lattice, mask))
    return _label(ev, image_id, spec, d, r)


def label_psnr(label: OracleLabel, x, y, meta: dict | None = None) -> float:
    """Recompute the PSNR of a stored label by re-running the denoiser."""
    if meta is None:
        meta = noise_metadata(label.noise_spec)
    solver = label.p_star.to_solver()
    u = denoise_batch(y, label.d, label.r, np.array([solver.slots]), meta)[0]
    return psnr(x, u)


# ------------------------------------------------------------- bulk labeling

def _label_row(args):
    manifest, row, d, r, grid = args
    try:
        x, y = manifest.load_pair(row)
        lab = hierarchical_search(y, x, d, r, grid, image_id=row.image_id, spec=row.noise_spec)
        return row.image_id, lab, None
    except Exception as exc:  # row-level failure, recorded and skipped
        return row.image_id, None, f"{type(exc).__name__}: {exc}"


@dataclass
class LabelRun:
    labels: list[OracleLabel]
    failures: list[dict] = field(default_factory=list)

    def boundary_fraction(self, grid: SearchGrid) -> float:
        return boundary_fraction(self.labels, grid)


def generate_labels(manifest: Manifest, d: str, r: str, grid: SearchGrid | None = None,
                    workers: int = 1) -> LabelRun:
    """Label every manifest row; output is sorted by image id and worker-count independent."""
    grid = grid or SearchGrid.default(d, r)
    grid.check(d, r)
    jobs = [(manifest, row, d, r, grid) for row in manifest.rows]
    if workers > 1 and len(jobs) > 1:
        ctx = mp.get_context("fork" if hasattr(os, "fork") else "spawn")
        with ctx.Pool(workers) as pool:
            results = pool.map(_label_row, jobs, chunksize=1)
    else:
        results = [_label_row(j) for j in jobs]
    results.sort(key=lambda t: t[0])
    labels = [lab for _, lab, err in results if lab is not None]
    failures = [{"image_id": iid, "error": err} for iid, lab, err in results if lab is None]
    for f in failures:
        log.warning("label failure %s: %s", f["image_id"], f["error"])
    return LabelRun(labels, failures)


def boundary_fraction(labels, grid: SearchGrid) -> float:
    """Share of labels with any active slot sitting on its bracket edge."""
    if not labels:
        return 0.0
    names = [n for n in _SLOTS if n in grid.slots]
    hits = 0
    for lab in labels:
        for n in names:
            g = grid.slots[n]
            v = lab.p_star.slots[_SLOTS.index(n)]
            tol = 1e-9 * max(1.0, g.hi - g.lo)
            if g.hi > g.lo and (abs(v - g.lo) <= tol or abs(v - g.hi) <= tol):
                hits += 1
                break
    return hits / len(labels)


# ------------------------------------------------------------------ file I/O

def labels_to_csv(labels) -> str:
    buf = io.StringIO()
    buf.write(f"# format_version={LABEL_FORMAT_VERSION}\n")
    w = csv.DictWriter(buf, fieldnames=LABEL_COLUMNS, lineterminator="\n")
    w.writeheader()
    for lab in labels:
        w.writerow(lab.row())
    return buf.getvalue()


def write_labels(labels, path) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(labels_to_csv(labels))
    os.replace(tmp, path)


def read_labels(path, opened: list | None = None) -> list[OracleLabel]:
    """Parse a label CSV; ``opened`` (if given) records the path for provenance."""
    path = Path(path)
    if opened is not None:
        opened.append(str(path))
    lines = path.read_text().splitlines()
    if lines and lines[0].startswith("#"):
        version = int(lines[0].split("=", 1)[1])
        if version != LABEL_FORMAT_VERSION:
            raise ValueError(f"unsupported label format_version {version}")
        lines = lines[1:]
    out = []
    for rec in csv.DictReader(lines):
        mask = tuple(ch == "1" for ch in rec["mask"])
        slots = (float(rec["p_delta"]), float(rec["p_log10_lambda"]), float(rec["p_gamma"]))
        out.append(OracleLabel(rec["image_id"], int(rec["seed"]), rec["d"], rec["r"],
                               rec["noise_json"], HyperVector(slots, mask, "learning"),
                               float(rec["oracle_psnr"]), int(rec["evals"])))
    return out


def write_failures(failures, path) -> None:
    Path(path).write_text(json.dumps({"failures": failures}, indent=1))
