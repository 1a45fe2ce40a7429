import csv
import json

import numpy as np
import pytest
import yaml
from numpy.testing import assert_allclose, assert_array_equal

from hparam_transfer.cli import main
from hparam_transfer.core import save_image
from hparam_transfer.harness.data import DatasetSpec, cmd_dataset
from hparam_transfer.harness.evaluate import recompute_psnr
from hparam_transfer.harness.experiments import ConfigError, RunConfig, cnn_mean, mean_opt
from hparam_transfer.harness.presets import preset
from hparam_transfer.harness.report import read_rows, summarize
from hparam_transfer.harness.workspace import MissingPrerequisite, Workspace
from hparam_transfer.manifest import read_manifest
from hparam_transfer.solvers import HyperVector

TINY_DATASETS = {
    "src": {"noise": "gaussian", "count": 6, "size": 16, "seed": 1},
    "tst": {"noise": "gaussian", "count": 3, "size": 16, "seed": 2},
}
TINY_RUN = {
    "kind": "pretrain", "seeds": [0, 1], "datasets": TINY_DATASETS,
    "sources": [{"dataset": "src", "d": "l2", "r": "tv"}],
    "tests": [{"dataset": "tst", "d": "l2", "r": "tv"}],
    "grid": {"points": 3, "levels": 1, "zoom": 0.5},
    "schedule": {"epochs": 2, "batch_size": 4, "head_lr": 1e-3},
    "encoder": {"widths": [4, 8], "proj_dim": 4, "trunk_dim": 8},
}


class TestDataset:
    def test_count_and_ids(self, tmp_path):
        res = cmd_dataset(DatasetSpec("s32", "gaussian", count=32, size=48), tmp_path)
        m = read_manifest(tmp_path / "manifest.json")
        assert len(m) == 32 and len({r.image_id for r in m.rows}) == 32
        assert len(list((tmp_path / "clean").iterdir())) == 32
        assert not res.failures

    def test_rerun_identical(self, tmp_path):
        spec = DatasetSpec("d", "bw_impulse+gaussian", count=4, size=16, seed=9)
        cmd_dataset(spec, tmp_path / "a")
        cmd_dataset(spec, tmp_path / "b")
        for sub in ("manifest.json", "clean/img00002.ppm", "degraded/img00003.npy"):
            assert (tmp_path / "a" / sub).read_bytes() == (tmp_path / "b" / sub).read_bytes()

    def test_regenerated_noise_matches_saved(self, tmp_path):
        cmd_dataset(DatasetSpec("d", "gaussian", count=2, size=16), tmp_path)
        m = read_manifest(tmp_path / "manifest.json")
        _, y = m.load_pair(m.rows[1])
        assert_array_equal(y, np.load(tmp_path / "degraded" / f"{m.rows[1].image_id}.npy"))

    def test_crop_too_large(self, tmp_path):
        src = tmp_path / "imgs"
        src.mkdir()
        save_image(np.full((20, 20, 3), 0.5), src / "big.ppm")
        save_image(np.full((8, 8, 3), 0.5), src / "small.ppm")
        res = cmd_dataset(DatasetSpec("imp", "gaussian", count=5, size=16, source=str(src)),
                          tmp_path / "out")
        assert [r.image_id for r in res.manifest.rows] == ["big"]
        assert [f["image_id"] for f in res.failures] == ["small"]
        assert json.loads((tmp_path / "out" / "failures.json").read_text())["failures"]


class TestBaselines:
    def test_mean_opt(self):
        a = [HyperVector.for_config("huber", "tv", delta=0.2, lam=-1.0, domain="learning")]
        b = [HyperVector.for_config("huber", "tv", delta=0.4, lam=-2.0, domain="learning")]
        assert_allclose(mean_opt([a, b]), [0.3, -1.5, 0.0])
        with pytest.raises(ConfigError):
            mean_opt([a])

    def test_cnn_mean(self):
        p1 = np.array([[0.2, -1.0, 5.0]])
        p2 = np.array([[0.4, -2.0, 3.0]])
        assert_allclose(cnn_mean([p1, p2], [True, True, False]), [[0.3, -1.5, 0.0]])


class TestRunConfig:
    def test_preset_parses(self):
        for kind in ("pretrain", "finetune", "zero_shot_mixed", "ablate_head", "sure_compare",
                     "cross_resolution", "ablate_stages", "per_config_baseline"):
            assert RunConfig.from_dict(preset(kind)).kind == kind

    def test_unknown_kind(self):
        with pytest.raises(ConfigError):
            RunConfig.from_dict({"kind": "nope", "seeds": [0]})

    def test_unknown_key(self):
        with pytest.raises(ConfigError):
            RunConfig.from_dict({**TINY_RUN, "epochz": 3})

    def test_bad_schedule(self):
        with pytest.raises(ConfigError):
            RunConfig.from_dict({**TINY_RUN, "schedule": {"warmup_frac": 2.0}})

    def test_undefined_dataset(self):
        doc = {**TINY_RUN, "tests": [{"dataset": "zzz", "d": "l2", "r": "tv"}]}
        with pytest.raises(ConfigError):
            RunConfig.from_dict(doc)


class TestWorkspace:
    def test_read_record_by_phase(self, tmp_path):
        ws = Workspace(tmp_path, TINY_DATASETS, TINY_RUN["grid"])
        with ws.reading("train"):
            ws.labels("src", "l2", "tv")
        with ws.reading("eval"):
            ws.labels("tst", "l2", "tv")
        rec = ws.read_record()
        assert rec["train"] == [str(ws.label_path("src", "l2", "tv"))]
        assert rec["eval"] == [str(ws.label_path("tst", "l2", "tv"))]

    def test_no_build(self, tmp_path):
        ws = Workspace(tmp_path, TINY_DATASETS, build=False)
        with pytest.raises(MissingPrerequisite):
            ws.labels("src", "l2", "tv")


@pytest.fixture(scope="module")
def tiny_run(tmp_path_factory):
    root = tmp_path_factory.mktemp("run")
    (root / "cfg.yaml").write_text(yaml.safe_dump(TINY_RUN))
    code = main(["run", "--config", str(root / "cfg.yaml"), "--out", str(root / "out")])
    return code, root / "out"


class TestCli:
    def test_run_succeeds(self, tiny_run):
        code, out = tiny_run
        assert code == 0
        for name in ("rows.csv", "summary.csv", "summary.json", "config.yaml",
                     "gap_by_method.png", "plot_data/hyperdn.tsv"):
            assert (out / name).exists(), name

    def test_rows_recomputable(self, tiny_run):
        _, out = tiny_run
        manifest = read_manifest(out / "workspace" / "datasets" / "tst" / "manifest.json")
        rows = read_rows(out / "rows.csv")
        assert {r["method"] for r in rows} == {"hyperdn", "oracle"}
        for row in rows:
            assert abs(recompute_psnr(manifest, row) - row["psnr"]) <= 1e-9

    def test_plot_rows_match_summary(self, tiny_run):
        _, out = tiny_run
        summary = summarize(read_rows(out / "rows.csv"))
        with open(out / "plot_data" / "hyperdn.tsv") as fh:
            plot = list(csv.DictReader(fh, delimiter="\t"))
        want = [r for r in summary if r["method"] == "hyperdn"]
        assert len(plot) == len(want) == 2
        for p, s in zip(plot, want):
            assert float(p["mean_psnr"]) == s["mean_psnr"]
            assert float(p["mean_gap"]) == s["mean_gap"]

    def test_report_rebuild_identical(self, tiny_run):
        _, out = tiny_run
        before = (out / "summary.csv").read_bytes()
        assert main(["report", "--out", str(out)]) == 0
        assert (out / "summary.csv").read_bytes() == before

    def test_summary_json(self, tiny_run):
        _, out = tiny_run
        obj = json.loads((out / "summary.json").read_text())
        assert obj["seeds"] == [0, 1]
        assert obj["methods"]["hyperdn"]["n_seeds"] == 2
        assert obj["methods"]["oracle"]["mean_gap"] == 0.0

    def test_config_error_exit(self, tmp_path, capsys):
        (tmp_path / "bad.yaml").write_text("kind: nope\nseeds: [0]\n")
        code = main(["run", "--config", str(tmp_path / "bad.yaml"), "--out", str(tmp_path / "o")])
        assert code == 2
        assert json.loads((tmp_path / "o" / "failure.json").read_text())["exit_code"] == 2

    def test_missing_file_exit(self, tmp_path):
        code = main(["label", "--manifest", str(tmp_path / "none.json"), "--d", "l2", "--r", "tv"])
        assert code == 3

    def test_partial_failure_exit(self, tmp_path):
        src = tmp_path / "imgs"
        src.mkdir()
        save_image(np.full((8, 8, 3), 0.5), src / "small.ppm")
        save_image(np.full((24, 24, 3), 0.5), src / "ok.ppm")
        code = main(["dataset", "--dataset-id", "x", "--noise", "gaussian", "--size", "16",
                     "--source", str(src), "--out", str(tmp_path / "ds")])
        assert code == 4

    def test_label_predict_sure(self, tmp_path, capsys):
        assert main(["dataset", "--dataset-id", "g", "--noise", "gaussian", "--count", "2",
                     "--size", "16", "--out", str(tmp_path / "g")]) == 0
        assert main(["label", "--manifest", str(tmp_path / "g" / "manifest.json"), "--d", "l2",
                     "--r", "tv", "--points", "3", "--levels", "1",
                     "--out", str(tmp_path / "l.csv")]) == 0
        assert (tmp_path / "l.csv").read_text().startswith("# format_version=1")
        capsys.readouterr()
        assert main(["sure", "--image", str(tmp_path / "g" / "degraded" / "img00000.npy"),
                     "--sigma", "0.1", "--points", "5"]) == 0
        assert capsys.readouterr().out.startswith("lambda\t")
