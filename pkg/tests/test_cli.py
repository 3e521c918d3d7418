import csv
import json

import numpy as np
import pytest
from click.testing import CliRunner

from trajgm.cli import main, merge, parse_grid
from trajgm.datasets import read_csv
from trajgm.errors import DomainError

TINY = ["--epochs", "2", "--hidden", "8,8", "--memory-len", "2", "--lr", "1e-2"]


def run(args, code=0):
    res = CliRunner().invoke(main, [str(a) for a in args])
    assert res.exit_code == code, res.output
    return res


@pytest.fixture(scope="module")
def work(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    run(["gen-data", "--n", 40, "--steps", 20, "--out", d / "d.csv"])
    run(["gen-data", "--n", 30, "--steps", 20, "--subsample", 6, "--mode", "equidistant",
         "--seed", 3, "--out", d / "test.csv"])
    for loss in ("drift", "jump"):
        run(["train", "--data", d / "d.csv", "--subsample", 6, "--loss", loss,
             "--out-ckpt", d / f"{loss}.json", *TINY])
    return d


class TestHelpers:
    def test_merge_precedence(self):
        out = merge({"a": 1, "b": 2, "c": 3}, {"b": 20, "c": 30}, {"c": 300, "a": None})
        assert out == {"a": 1, "b": 20, "c": 300}

    def test_parse_grid(self, work):
        np.testing.assert_allclose(parse_grid("equidistant:5", 2.0), [0, 0.5, 1, 1.5, 2])
        grid = parse_grid(f"file:{work / 'test.csv'}", 1.0)
        assert len(grid) == 6
        for bad in ("equidistant:1", "spline:3"):
            with pytest.raises(DomainError):
                parse_grid(bad, 1.0)


class TestCommands:
    def test_gen_data(self, work):
        ds = read_csv(work / "d.csv")
        assert len(ds) == 40 and len(ds.series[0]) == 20
        prov = json.loads((work / "d.csv.provenance.json").read_text())
        assert {"config_hash", "git_describe", "seed"} <= set(prov) and prov["seed"] == 0

    def test_train_outputs(self, work):
        for loss in ("drift", "jump"):
            ck = json.loads((work / f"{loss}.json").read_text())
            assert ck["head_type"] == loss and ck["meta"]["memory_len"] == 2
            rows = list(csv.DictReader(open(work / f"{loss}.log.csv")))
            assert len(rows) == 2 and (work / f"{loss}.log.png").exists()

    def test_config_file_and_flag_precedence(self, work):
        cfg = work / "cfg.json"
        cfg.write_text(json.dumps({"loss_kind": "tfm", "epochs": 1, "hidden": [4],
                                   "memory_len": 1, "lr": 0.5}))
        run(["train", "--data", work / "d.csv", "--config", cfg, "--lr", "1e-3",
             "--out-ckpt", work / "tfm.json"])
        prov = json.loads((work / "tfm.json.provenance.json").read_text())
        assert prov["config"]["lr"] == 1e-3 and prov["config"]["loss_kind"] == "tfm"
        assert prov["config"]["hidden"] == [4]

    def test_sample_and_eval(self, work):
        out = work / "gen.csv"
        run(["sample", "--ckpt-drift", work / "drift.json", "--ckpt-jump", work / "jump.json",
             "--alpha", 0.5, "--grid", f"file:{work / 'test.csv'}", "--n", 25, "--steps", 4,
             "--seed", 1, "--out", out])
        gen = read_csv(out)
        assert len(gen) == 25 and (work / "gen.png").exists()
        res = run(["eval", "--gen", out, "--truth", work / "test.csv", "--out", work / "e.json"])
        rep = json.loads((work / "e.json").read_text())
        assert rep["mmd_u"] >= 0 and float(res.output) == pytest.approx(rep["mmd_u"], rel=1e-5)

    def test_sample_is_reproducible(self, work):
        paths = []
        for name in ("r1.csv", "r2.csv"):
            run(["sample", "--ckpt-jump", work / "jump.json", "--grid", "equidistant:4",
                 "--n", 10, "--steps", 3, "--seed", 5, "--out", work / name])
            paths.append(read_csv(work / name).values_matrix())
        assert np.array_equal(*paths)

    def test_verify_moments_gate(self, tmp_path):
        args = ["verify-moments", "--bins-list", "16", "--trials", 3, "--n-times", 4,
                "--out", tmp_path / "vm"]
        run(args, code=2)
        run(args + ["--no-gate"])
        rows = list(csv.DictReader(open(tmp_path / "vm" / "error_curve.csv")))
        assert rows[0]["bins"] == "16" and (tmp_path / "vm" / "error_curve.png").exists()


class TestExitCodes:
    def test_malformed_csv_is_io_error(self, work, tmp_path):
        bad = tmp_path / "bad.csv"
        bad.write_text("series_id,t,value\n0,0,1\n0,zero,2\n")
        res = run(["eval", "--gen", bad, "--truth", work / "test.csv", "--out",
                   tmp_path / "e.json"], code=3)
        assert "bad.csv:3:" in res.output

    def test_grid_mismatch(self, work, tmp_path):
        run(["eval", "--gen", work / "d.csv", "--truth", work / "test.csv", "--out",
             tmp_path / "e.json"], code=3)

    def test_unwritable_output(self, work):
        run(["gen-data", "--n", 4, "--steps", 5, "--out", work / "missing" / "x.csv"], code=3)

    @pytest.mark.filterwarnings("ignore:overflow:RuntimeWarning")
    def test_divergence_exit_code(self, work, tmp_path):
        run(["train", "--data", work / "d.csv", "--loss", "drift", "--epochs", 3,
             "--hidden", "8", "--memory-len", 1, "--lr", "1e12",
             "--out-ckpt", tmp_path / "x.json"], code=4)

    def test_sample_needs_checkpoint(self, tmp_path):
        run(["sample", "--out", tmp_path / "x.csv"], code=2)


class TestExperiment:
    ARGS = ["--n-series", 30, "--steps", 12, "--subsample-rates", "4,6", "--seeds", "0",
            "--alphas", "0,1", "--methods", "jump,sde", "--n-test", 20, "--n-sweep-gen", 50,
            "--epochs", 2, "--hidden", "8", "--memory-len", 1, "--lr", "1e-2"]

    def test_tiny_run_and_resume(self, tmp_path):
        out = tmp_path / "ex"
        run(["experiment", *self.ARGS, "--out-dir", out])
        rows = list(csv.reader(open(out / "table.csv", encoding="utf-8")))
        assert rows[0] == ["method", "4", "6"] and len(rows) == 4
        # single seed: every cell reports zero spread
        assert all("±0.000" in c for r in rows[1:] for c in r[1:])
        assert (out / "alpha_sweep_k4.png").exists() and (out / "logs").is_dir()
        stamp = (out / "cells" / "k4_s0.json").stat().st_mtime_ns
        res = run(["experiment", *self.ARGS, "--out-dir", out])
        assert (out / "cells" / "k4_s0.json").stat().st_mtime_ns == stamp
        assert "cell k=" not in res.output
