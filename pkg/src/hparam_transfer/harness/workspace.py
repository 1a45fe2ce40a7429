"""On-disk cache of datasets, labels and checkpoints for experiment runs.

Every label file read goes through :meth:`Workspace.labels`, which records
the path under the current phase (``train`` or ``eval``). Zero-shot runs use
the record to show that no target labels were read while training.
"""

from __future__ import annotations

import contextlib
import json
import logging
from pathlib import Path

from ..manifest import Manifest, read_manifest
from ..oracle import SearchGrid, generate_labels, read_labels, write_failures, write_labels
from .data import DatasetSpec, cmd_dataset, labeled_set

log = logging.getLogger(__name__)


class MissingPrerequisite(RuntimeError):
    """A dataset, label table or checkpoint is absent and cannot be built."""


class Workspace:
    def __init__(self, root, datasets: dict | None = None, grid: dict | None = None,
                 workers: int = 1, build: bool = True):
        self.root = Path(root)
        self.specs: dict[str, DatasetSpec] = {}
        for k, v in (datasets or {}).items():
            self.specs[k] = v if isinstance(v, DatasetSpec) else DatasetSpec(dataset_id=k, **v)
        self.grid = grid or {"points": 5, "levels": 2, "zoom": 1.0 / 3.0}
        self.workers = workers
        self.build = build
        self.phase = "setup"
        self.reads: dict[str, list[str]] = {}
        self.label_failures: list[dict] = []

    @contextlib.contextmanager
    def reading(self, phase: str):
        prev, self.phase = self.phase, phase
        try:
            yield
        finally:
            self.phase = prev

    def dataset_dir(self, dataset_id: str) -> Path:
        return self.root / "datasets" / dataset_id

    def manifest(self, dataset_id: str) -> Manifest:
        path = self.dataset_dir(dataset_id) / "manifest.json"
        if not path.exists():
            if not self.build or dataset_id not in self.specs:
                raise MissingPrerequisite(f"dataset {dataset_id!r} missing at {path}")
            log.info("building dataset %s", dataset_id)
            cmd_dataset(self.specs[dataset_id], path.parent)
        return read_manifest(path)

    def search_grid(self, d: str, r: str) -> SearchGrid:
        return SearchGrid.default(d, r, **self.grid)

    def label_path(self, dataset_id: str, d: str, r: str) -> Path:
        return self.root / "labels" / f"{dataset_id}__{d}_{r}.csv"

    def labels(self, dataset_id: str, d: str, r: str):
        path = self.label_path(dataset_id, d, r)
        if not path.exists():
            if not self.build:
                raise MissingPrerequisite(f"labels missing at {path}")
            manifest = self.manifest(dataset_id)
            log.info("labeling %s for (%s, %s)", dataset_id, d, r)
            run = generate_labels(manifest, d, r, self.search_grid(d, r), self.workers)
            path.parent.mkdir(parents=True, exist_ok=True)
            write_labels(run.labels, path)
            if run.failures:
                write_failures(run.failures, path.with_suffix(".failures.json"))
                self.label_failures.extend(run.failures)
        return read_labels(path, self.reads.setdefault(self.phase, []))

    def labeled_set(self, dataset_id: str, d: str, r: str, use_attrs: bool = True, limit=None):
        labs = self.labels(dataset_id, d, r)
        if limit is not None:
            labs = labs[:limit]
        return labeled_set(f"{dataset_id}:{d}_{r}", self.manifest(dataset_id), labs, use_attrs)

    def read_record(self) -> dict:
        return {k: sorted(set(v)) for k, v in self.reads.items()}

    def save_read_record(self, path) -> None:
        Path(path).write_text(json.dumps(self.read_record(), indent=1))
