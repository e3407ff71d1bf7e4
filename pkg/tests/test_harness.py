import csv
import json
import math
import os

import numpy as np
import pytest

from dynstrat.cli import main, parse_grid
from dynstrat.core import Dataset, RandomStream, split_dataset
from dynstrat.harness import (ExperimentConfig, checkpoint_grid, make_problem, post_evaluate, report, run_experiment,
                              run_macrorep, selection_frequency_report, summarize, sweep, sweep_cells)
from dynstrat.wake import QuadraticProblem


def small(**kw):
    base = dict(problem="wake", macroreps=2, budget=600, n_data=800, seed=11, checkpoints=5)
    base.update(kw)
    return ExperimentConfig(**base)


def read(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def test_checkpoint_grid():
    assert checkpoint_grid(10_000, 21)[:3] == [0, 500, 1000]
    assert checkpoint_grid(10_000, 21)[-1] == 10_000
    assert len(checkpoint_grid(100, 11)) == 11


def test_summarize_examples():
    rows = summarize([(0, "ns", 0, "a", 1.0), (1, "ns", 0, "a", 3.0)], [0])
    mode, b, mean, half, m = rows[0]
    assert mean == 2.0 and m == 2
    assert half == pytest.approx(12.7062047362, rel=1e-9)
    same = summarize([(r, "bt", 0, "a", 0.5) for r in range(5)], checkpoint_grid(100, 11))
    assert len(same) == 11 and all(r[3] == 0 and r[2] == 0.5 for r in same)
    single = summarize([(0, "ns", 0, "a", 0.5)], [0])
    assert math.isnan(single[0][3])


def test_summarize_uses_latest_before_checkpoint():
    prog = [(0, "ns", 0, "a", 4.0), (0, "ns", 120, "b", 2.0), (0, "ns", 300, "c", 1.0)]
    rows = summarize(prog, [0, 100, 120, 299, 1000])
    assert [r[2] for r in rows] == [4.0, 4.0, 2.0, 2.0, 1.0]


def test_selection_report_examples():
    ev = [(0, "conv-s", 0, "center", "", 0, 0, 2, "", 0, 0, "", "h_hat^2", "")] * 4
    ev += [(1, "conv-s", 0, "center", "", 0, 0, 2, "", 0, 0, "", "h_hat^2", "")] * 6
    ev += [(0, "ns", 0, "center", "", 0, 0, 1, "", 0, 0, "", "", "")]
    rows = selection_frequency_report(ev)
    assert rows == [("conv-s", "h_hat^2", 5.0, 1.0, 2)]


def test_post_evaluate():
    pb = QuadraticProblem(noise_std=0.0)
    ds = Dataset(np.ones((4, 1)), np.ones((4, 1)))
    assert post_evaluate([0.3], ds, pb) == pytest.approx(pb.simulate([0.3], ds.X[:1], ds.Y[:1])[0][0])
    with pytest.raises(ValueError):
        post_evaluate([0.3], ds.subset(np.array([], dtype=int)), pb)


def test_sweep_cells():
    assert sweep_cells({}) == [(None, None)]
    assert sweep_cells({"theta0": [0.02, 0.2], "lambda0": [40]}) == [("theta0", 0.02), ("theta0", 0.2),
                                                                     ("lambda0", 40)]
    assert parse_grid("theta0=0.02,0.2;lambda0=40,80") == {"theta0": [0.02, 0.2], "lambda0": [40, 80]}


def test_config_validation(tmp_path):
    with pytest.raises(ValueError):
        ExperimentConfig(modes=("ns", "nope"))
    with pytest.raises(ValueError):
        ExperimentConfig(grid={"kappa": [1.0]})
    bad = tmp_path / "bad.yaml"
    bad.write_text("budget: 100\nbogus: 1\n")
    with pytest.raises(ValueError):
        ExperimentConfig.from_file(bad)
    good = tmp_path / "good.yaml"
    good.write_text("budget: 100\nmodes: ns,bt\n")
    cfg = ExperimentConfig.from_file(good, seed=3)
    assert cfg.budget == 100 and cfg.modes == ("ns", "bt") and cfg.seed == 3


def test_macrorep_invariants():
    cfg = small()
    problem, data = make_problem(cfg)
    res = run_macrorep(cfg, 0, problem, data)
    assert res["failed"] is None
    for mode in cfg.modes:
        rows = [r for r in res["progress"] if r[1] == mode]
        calls = [r[2] for r in rows]
        assert calls[0] == 0 and all(b > a for a, b in zip(calls, calls[1:]))
        assert calls[-1] <= cfg.budget
        evals = [e for e in res["evaluations"] if e[1] == mode]
        assert sum(e[5] for e in evals) == res["calls"][mode] <= cfg.budget


def test_holdout_isolation():
    cfg = small()
    problem, data = make_problem(cfg)
    model_idx, valid_idx = split_dataset(data, RandomStream(cfg.seed, 0, "split"), cfg.train_fraction)
    assert not set(model_idx) & set(valid_idx)
    # perturbing validation rows must leave the search untouched
    Y = data.Y.copy()
    Y[valid_idx] = 1 - Y[valid_idx]
    alt = Dataset(data.X, Y)
    a = run_macrorep(cfg, 0, problem, data)
    b = run_macrorep(cfg, 0, problem, alt)
    assert [r[:4] for r in a["progress"]] == [r[:4] for r in b["progress"]]
    assert a["evaluations"] == b["evaluations"]


def test_common_random_numbers_across_modes():
    cfg = small(modes=("ns", "bt"), macroreps=1)
    problem, data = make_problem(cfg)
    res = run_macrorep(cfg, 0, problem, data)
    first = {m: next(e for e in res["evaluations"] if e[1] == m) for m in cfg.modes}
    # the first center pilot uses the same draws in every mode
    assert first["ns"][4] == first["bt"][4]
    assert first["ns"][6] == first["bt"][6]


def test_run_experiment_outputs_and_reproducible(tmp_path):
    cfg = small()
    a = run_experiment(cfg, str(tmp_path / "a"))
    b = run_experiment(cfg, str(tmp_path / "b"))
    for name in ("progress.csv", "summary.csv", "strata_log.csv", "selection_freq.csv"):
        with open(os.path.join(a, name)) as fa, open(os.path.join(b, name)) as fb:
            assert fa.read() == fb.read(), name
    with open(os.path.join(a, "manifest.json")) as fh:
        man = json.load(fh)
    assert man["seed"] == cfg.seed and man["failed_reps"] == {}
    summ = read(os.path.join(a, "summary.csv"))
    assert len(summ) == cfg.checkpoints * len(cfg.modes)
    before = open(os.path.join(a, "summary.csv")).read()
    report(a, cfg.checkpoints)
    assert open(os.path.join(a, "summary.csv")).read() == before


def test_sweep_writes_cells(tmp_path):
    cfg = small(problem="quadratic", modes=("ns",), grid={"lambda0": [40, 80]}, budget=400)
    rows = sweep(cfg, str(tmp_path))
    assert [r[0] for r in rows] == ["lambda0=40", "lambda0=80"]
    assert os.path.exists(tmp_path / "sweep.csv")
    assert all(np.isfinite(r[4]) for r in rows)


def test_cli_run_report_and_errors(tmp_path, capsys):
    out = str(tmp_path / "cli")
    assert main(["run", "--problem", "quadratic", "--modes", "ns,bt", "--budget", "300", "--macroreps", "2",
                 "--out", out]) == 0
    assert os.path.exists(os.path.join(out, "summary.csv"))
    assert main(["report", "--out", out, "--checkpoints", "11"]) == 0
    assert len(read(os.path.join(out, "summary.csv"))) == 22
    bad = tmp_path / "bad.yaml"
    bad.write_text("nonsense_key: 1\n")
    assert main(["run", "--config", str(bad)]) == 2
    assert main(["run", "--modes", "xx"]) == 2
    assert main(["report", "--out", str(tmp_path / "missing")]) == 2
    capsys.readouterr()
