import csv
import json
import math

import numpy as np
import pytest

from trajgm.experiment import (
    ExperimentConfig,
    format_cell,
    make_splits,
    run_cell,
    run_experiment,
    summarize,
    write_table,
)
from trajgm.training import TrainConfig


def tiny(**kw):
    train = TrainConfig(hidden=(8,), memory_len=1, lr=1e-2, epochs=2, batch_size=32,
                        n_steps=4, pilot_size=128)
    base = dict(n_series=30, n_steps=12, subsample_rates=(4,), seeds=(0,), alphas=(0.0, 0.5, 1.0),
                n_test=20, n_sweep_gen=None, train=train)
    base.update(kw)
    return ExperimentConfig(**base)


def fake_cell(keep, seed, jump, sde, alpha_val, alpha_test, status="ok"):
    return {"keep": keep, "seed": seed, "status": status,
            "methods": {"jump": {"test_mmd": jump}, "sde": {"test_mmd": sde}},
            "alpha_val": alpha_val, "alpha_test": alpha_test}


class TestConfig:
    def test_round_trip_and_hash(self):
        cfg = tiny()
        back = ExperimentConfig(**json.loads(json.dumps(cfg.to_dict())))
        assert back == cfg and back.hash() == cfg.hash()
        assert tiny(seeds=(1,)).hash() != cfg.hash()


class TestSplits:
    def test_disjoint_and_grids(self):
        cfg = tiny()
        tr, va, te = make_splits(cfg, 4, seed=0)
        assert len(tr) + len(va) == 30 and len(te) == 20
        assert all(len(s) == 4 for d in (tr, va, te) for s in d.series)
        # validation and test share one equidistant grid
        grid = va.series[0].times
        assert all(np.array_equal(s.times, grid) for d in (va, te) for s in d.series)
        # training grids are a fresh draw per seed, data fixed
        tr1, _, _ = make_splits(cfg, 4, seed=1)
        assert [s.id for s in tr.series] == [s.id for s in tr1.series]
        assert any(not np.array_equal(a.times, b.times) for a, b in zip(tr.series, tr1.series))


class TestSummary:
    def test_alpha_from_best_validation_seed(self):
        cfg = tiny(seeds=(0, 1), methods=("jump", "sde"))
        cells = [
            fake_cell(4, 0, 1.0, 2.0, {"0.0": 0.9, "0.5": 0.5}, {"0.0": 1.0, "0.5": 3.0}),
            fake_cell(4, 1, 3.0, 4.0, {"0.0": 0.2, "0.5": 0.6}, {"0.0": 5.0, "0.5": 7.0}),
        ]
        t = summarize(cfg, cells)
        # seed 1 has the lowest validation MMD (0.2, at alpha 0) -> alpha 0 for both seeds
        sup = t["superposition"][4]
        assert sup["alpha"] == 0.0 and sup["mean"] == 3.0 and sup["std"] == 2.0
        assert t["jump"][4]["mean"] == 2.0 and t["sde"][4]["n"] == 2

    def test_failed_cells(self):
        cfg = tiny(seeds=(0, 1), methods=("jump", "sde"))
        cells = [fake_cell(4, 0, 1.0, 2.0, {}, {}),
                 {"keep": 4, "seed": 1, "status": "diverged"}]
        t = summarize(cfg, cells)
        assert t["jump"][4]["failed"] == 1 and t["jump"][4]["n"] == 1
        assert format_cell(t["jump"][4]) == "1.000±0.000 (1 failed)"
        assert "superposition" not in t
        assert format_cell({"mean": math.nan, "std": math.nan, "n": 0, "failed": 2}) == "failed"

    def test_table_schema(self, tmp_path):
        cfg = tiny(subsample_rates=(4, 6), methods=("jump", "sde"))
        cells = [fake_cell(k, 0, 1.0, 2.0, {"1.0": 0.1}, {"1.0": 0.25}) for k in (4, 6)]
        path = tmp_path / "t.csv"
        write_table(summarize(cfg, cells), cfg.subsample_rates, path)
        rows = list(csv.reader(open(path, encoding="utf-8")))
        assert rows[0] == ["method", "4", "6"]
        assert [r[0] for r in rows[1:]] == ["Jump-based method", "SDE-based method",
                                           "Jump + SDE (Markov superposition)"]
        assert rows[3][1] == "0.250±0.000,1"


class TestRun:
    def test_cell_contents(self):
        cell = run_cell(tiny(), 4, 0)
        assert cell["status"] == "ok"
        assert set(cell["methods"]) == {"jump", "sde", "tfm"}
        assert set(cell["alpha_val"]) == {"0.0", "0.5", "1.0"}
        # alpha = 1 is the drift model alone on the same sampling seed
        assert cell["alpha_test"]["1.0"] == pytest.approx(cell["methods"]["sde"]["test_mmd"])
        for rec in cell["methods"].values():
            assert len(rec["history"]) == 2 and rec["test_mmd"] >= 0

    def test_resume_and_determinism(self, tmp_path):
        cfg = tiny(methods=("jump", "sde"))
        a = run_experiment(cfg, tmp_path / "a")
        cell_file = tmp_path / "a" / "cells" / "k4_s0.json"
        stamp = cell_file.stat().st_mtime_ns
        again = run_experiment(cfg, tmp_path / "a")
        assert cell_file.stat().st_mtime_ns == stamp and again == a
        b = run_experiment(cfg, tmp_path / "b")
        assert b == a
        # one seed: zero spread
        assert a["jump"][4]["std"] == 0.0
