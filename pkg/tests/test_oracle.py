import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

import hparam_transfer.oracle as oracle
from hparam_transfer.core import SeededRng
from hparam_transfer.harness.data import DatasetSpec, cmd_dataset, synthetic_image
from hparam_transfer.manifest import Manifest, read_manifest
from hparam_transfer.oracle import (SearchGrid, SlotGrid, boundary_fraction, exhaustive_search,
                                    generate_labels, hierarchical_search, label_psnr,
                                    labels_to_csv, read_labels, write_labels)
from hparam_transfer.solvers import HyperVector


def _fixture(seed, size=32, sigma=0.08):
    x = synthetic_image(size, SeededRng(seed), channels=1)
    return x, x + sigma * np.random.default_rng(seed).standard_normal(x.shape)


@pytest.fixture
def separable(monkeypatch):
    """Replace the denoiser so PSNR is a separable quadratic in (delta, log10 lambda)."""
    # optimum sits on the fully refined lattice of the 5-point grid
    opt = np.array([0.01 + 15 * 0.99 / 36, -3 + 13 * 4 / 36])

    def fake(y, d, r, slots, meta=None):
        slots = np.asarray(slots)
        q = (slots[:, 0] - opt[0]) ** 2 + (np.log10(slots[:, 1]) - opt[1]) ** 2
        mse = 1e-3 * np.exp(q)
        return y[None] + np.sqrt(mse)[:, None, None, None]

    monkeypatch.setattr(oracle, "denoise_batch", fake)
    return opt


class TestGrid:
    def test_min_points(self):
        with pytest.raises(ValueError):
            SlotGrid(0.0, 1.0, points=2)

    def test_default_slots_follow_mask(self):
        assert set(SearchGrid.default("huber", "tgv").slots) == {"delta", "lambda", "gamma"}
        assert set(SearchGrid.default("l2", "tv").slots) == {"lambda"}

    def test_mismatched_grid(self):
        with pytest.raises(ValueError):
            SearchGrid.default("l2", "tv").check("huber", "tv")

    def test_roundtrip(self):
        g = SearchGrid.default("huber", "tv", points=5)
        assert SearchGrid.from_dict(g.to_dict()) == g

    def test_fine_lattice_spacing(self):
        lat = SearchGrid.default("l2", "tv", points=5).fine_lattice("l2", "tv")
        assert lat.shape == (37, 1)
        assert_allclose(np.diff(lat[:, 0]), 4 / 36)


class TestHierarchical:
    def test_single_candidate(self):
        x, y = _fixture(0, 16)
        grid = SearchGrid({"lambda": SlotGrid(-1.5, -1.5, points=3, scale="log10")})
        lab = hierarchical_search(y, x, "l2", "tv", grid)
        assert lab.p_star.lam == -1.5
        assert lab.evals == 1
        assert_allclose(lab.oracle_psnr, label_psnr(lab, x, y))

    def test_separable_optimum_matches_exhaustive(self, separable):
        x, y = _fixture(1, 8)
        grid = SearchGrid.default("huber", "tv", points=5)
        hier = hierarchical_search(y, x, "huber", "tv", grid)
        full = exhaustive_search(y, x, "huber", "tv", grid.fine_lattice("huber", "tv"))
        assert_allclose(hier.p_star.slots[:2], full.p_star.slots[:2], atol=1e-9)
        assert_allclose(hier.p_star.slots[:2], separable, atol=1e-9)
        assert hier.evals < full.evals

    def test_tv_l2_close_to_exhaustive(self):
        grid = SearchGrid.default("l2", "tv")
        lattice = grid.fine_lattice("l2", "tv")
        for seed in range(10):
            x, y = _fixture(100 + seed)
            hier = hierarchical_search(y, x, "l2", "tv", grid)
            full = exhaustive_search(y, x, "l2", "tv", lattice)
            assert hier.oracle_psnr >= full.oracle_psnr - 0.05

    def test_not_worse_than_coarse_pass(self):
        grid = SearchGrid.default("huber", "tv", points=5)
        coarse = oracle._product(grid.coarse_axes("huber", "tv"))
        x, y = _fixture(3, 24)
        hier = hierarchical_search(y, x, "huber", "tv", grid)
        assert exhaustive_search(y, x, "huber", "tv", coarse).oracle_psnr <= hier.oracle_psnr

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            hierarchical_search(np.zeros((4, 4, 1)), np.zeros((5, 4, 1)), "l2", "tv",
                                SearchGrid.default("l2", "tv"))


class TestExhaustive:
    def test_singleton(self):
        x, y = _fixture(4, 16)
        lab = exhaustive_search(y, x, "l2", "tv", [[-1.0]])
        assert lab.p_star.lam == -1.0

    def test_tie_break_smallest_lambda(self):
        x = np.full((8, 8, 1), 0.5)
        lab = exhaustive_search(x, x, "l2", "tv", [[0.5], [-1.0], [-2.0]])
        # constant input is a fixed point for every lambda
        assert lab.p_star.lam == -2.0

    def test_empty_lattice(self):
        x, y = _fixture(5, 8)
        with pytest.raises(ValueError):
            exhaustive_search(y, x, "l2", "tv", np.zeros((0, 1)))

    def test_width_mismatch(self):
        x, y = _fixture(5, 8)
        with pytest.raises(ValueError):
            exhaustive_search(y, x, "l2", "tv", [[0.1, -1.0]])


@pytest.fixture(scope="module")
def manifest(tmp_path_factory):
    out = tmp_path_factory.mktemp("ds")
    cmd_dataset(DatasetSpec("g20", "gaussian", count=20, size=32, seed=3), out)
    return read_manifest(out / "manifest.json")


class TestGenerate:
    def test_recomputable(self, manifest, tmp_path):
        run = generate_labels(manifest, "l2", "tv", SearchGrid.default("l2", "tv", points=5))
        assert len(run.labels) == 20 and not run.failures
        write_labels(run.labels, tmp_path / "labels.csv")
        opened = []
        labels = read_labels(tmp_path / "labels.csv", opened)
        assert opened == [str(tmp_path / "labels.csv")]
        rows = manifest.by_id()
        for lab in labels:
            x, y = manifest.load_pair(rows[lab.image_id])
            assert abs(label_psnr(lab, x, y) - lab.oracle_psnr) <= 1e-9

    def test_worker_count_independent(self, manifest):
        sub = Manifest("sub", manifest.rows[:6], root=manifest.root)
        grid = SearchGrid.default("huber", "tv", points=3, levels=1)
        one = generate_labels(sub, "huber", "tv", grid, workers=1)
        many = generate_labels(sub, "huber", "tv", grid, workers=8)
        assert labels_to_csv(one.labels) == labels_to_csv(many.labels)

    def test_empty_manifest(self, tmp_path):
        run = generate_labels(Manifest("empty", []), "l2", "tv")
        assert run.labels == [] and run.failures == []
        write_labels(run.labels, tmp_path / "e.csv")
        assert read_labels(tmp_path / "e.csv") == []

    def test_row_failure_recorded(self, manifest, tmp_path):
        rows = list(manifest.rows[:2])
        bad = Manifest("bad", rows, root=tmp_path)
        run = generate_labels(bad, "l2", "tv", SearchGrid.default("l2", "tv", points=3))
        assert run.labels == [] and len(run.failures) == 2

    def test_boundary_fraction(self):
        grid = SearchGrid.default("l2", "tv")
        labs = [oracle.OracleLabel("a", 0, "l2", "tv", "{}",
                                   HyperVector.for_config("l2", "tv", lam=v, domain="learning"),
                                   20.0, 1) for v in (-3.0, 0.0, 1.0, -1.2)]
        assert boundary_fraction(labs, grid) == 0.5


def test_label_csv_roundtrip(tmp_path):
    x, y = _fixture(6, 16)
    lab = hierarchical_search(y, x, "huber", "tgv", SearchGrid.default("huber", "tgv", points=3,
                                                                       levels=0))
    write_labels([lab], tmp_path / "l.csv")
    back = read_labels(tmp_path / "l.csv")[0]
    assert back.p_star == lab.p_star
    assert back.oracle_psnr == lab.oracle_psnr
    assert_array_equal(back.p_star.mask, [True, True, True])
