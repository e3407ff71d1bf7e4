"""Macro-replicated calibration experiments with common random numbers."""
from __future__ import annotations

import csv
import json
import math
import os
import platform
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace

import numpy as np
import scipy
from scipy import stats as sps

from .core import IndexStream, RandomStream, saa_estimate, split_dataset
from .solver import MODES, Solver, SolverConfig
from .wake import (NoiseModel, QuadraticProblem, TwoRegimeProblem, WakeProblem, TRUE_THETA,
                   generate_synthetic_dataset, quadratic_dataset, two_regime_dataset)

SWEEP_PARAMS = ("theta0", "delta0", "lambda0")


@dataclass
class ExperimentConfig:
    problem: str = "wake"
    modes: tuple = MODES
    macroreps: int = 20
    seed: int = 20240501
    budget: int = 10_000
    n_data: int = 20_000
    train_fraction: float = 0.7
    theta_true: float = TRUE_THETA
    noise_scale: float = 1.0
    theta0: float = 0.1
    delta0: float = 0.08
    lambda0: int = 80
    kappa: float = 1.0
    eta: float = 0.1
    gamma_inc: float = 1.5
    gamma_dec: float = 0.5
    delta_max: float | None = None
    n_max: int | None = None
    tau: int = 5
    z_max: int = 4
    eps: float = 1e-6
    rho: float = 0.1
    n_boot: int = 50
    checkpoints: int = 21
    grid: dict = field(default_factory=dict)
    out: str = "runs/default"
    workers: int = 1

    def __post_init__(self):
        if isinstance(self.modes, str):
            self.modes = tuple(m.strip() for m in self.modes.split(",") if m.strip())
        self.modes = tuple(self.modes)
        self.validate()

    def validate(self):
        if self.macroreps < 1:
            raise ValueError("macroreps must be at least 1")
        if self.problem not in PROBLEMS:
            raise ValueError(f"unknown problem {self.problem!r}; known: {sorted(PROBLEMS)}")
        bad = [m for m in self.modes if m not in MODES]
        if bad or not self.modes:
            raise ValueError(f"bad strata modes {bad or self.modes}")
        for k in self.grid:
            if k not in SWEEP_PARAMS:
                raise ValueError(f"cannot sweep over {k!r}")
        if self.checkpoints < 2:
            raise ValueError("need at least two checkpoints")

    def solver_config(self, mode):
        return SolverConfig(theta0=self.theta0, delta0=self.delta0, lambda0=self.lambda0, kappa=self.kappa,
                            eta=self.eta, gamma_inc=self.gamma_inc, gamma_dec=self.gamma_dec,
                            delta_max=self.delta_max, n_max=self.n_max, budget=self.budget, mode=mode,
                            tau=self.tau, z_max=self.z_max, eps=self.eps, rho=self.rho, n_boot=self.n_boot)

    @classmethod
    def from_file(cls, path, **overrides):
        import yaml
        with open(path) as fh:
            data = yaml.safe_load(fh) or {}
        if not isinstance(data, dict):
            raise ValueError("config file must hold a flat mapping")
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        data.update({k: v for k, v in overrides.items() if v is not None})
        return cls(**data)


# ---------------------------------------------------------------------------
# Problem registry


def _wake(cfg):
    pb = WakeProblem()
    data = generate_synthetic_dataset(pb.layout, cfg.n_data, cfg.theta_true, NoiseModel(scale=cfg.noise_scale),
                                      RandomStream(cfg.seed, 0, "dataset"))
    return pb, data


def _quadratic(cfg):
    return QuadraticProblem(noise_std=0.1 * cfg.noise_scale), quadratic_dataset(cfg.n_data, RandomStream(cfg.seed, 0, "dataset"))


def _two_regime(cfg):
    return TwoRegimeProblem(), two_regime_dataset(cfg.n_data, RandomStream(cfg.seed, 0, "dataset"))


PROBLEMS = {"wake": _wake, "quadratic": _quadratic, "two-regime": _two_regime}


def make_problem(cfg):
    return PROBLEMS[cfg.problem](cfg)


# ---------------------------------------------------------------------------
# Running


def post_evaluate(theta, validation, problem):
    """Mean loss over every validation point."""
    if len(validation) < 1:
        raise ValueError("empty validation set")
    return saa_estimate(problem, theta, validation.X, validation.Y).mean


def _fmt(x):
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return str(x)


def _theta_str(theta):
    return ";".join(repr(float(t)) for t in np.atleast_1d(theta))


def run_macrorep(cfg, r, problem=None, data=None):
    """All strata modes for one macro-replication; returns a result dict."""
    if problem is None:
        problem, data = make_problem(cfg)
    model_idx, valid_idx = split_dataset(data, RandomStream(cfg.seed, r, "split"), cfg.train_fraction)
    model, valid = data.subset(model_idx), data.subset(valid_idx)
    out = {"rep": r, "progress": [], "evaluations": [], "calls": {}, "failed": None,
           "n_model": len(model), "n_valid": len(valid)}
    holdout = {}
    try:
        for mode in cfg.modes:
            draws = IndexStream(len(model), RandomStream(cfg.seed, r, "draws"))
            solver = Solver(problem, model, cfg.solver_config(mode), draws, RandomStream(cfg.seed, r, "bootstrap"))
            traj = solver.run()
            for calls, theta in traj:
                key = _theta_str(theta)
                if key not in holdout:
                    holdout[key] = post_evaluate(theta, valid, problem)
                out["progress"].append((r, mode, int(calls), key, holdout[key]))
            for ev in solver.evaluations:
                o = ev.outcome
                rec = o.structure.record() if o.structure is not None else {"provenance": "none", "Z": 0}
                cand = rec.get("candidate", "")
                if not cand and getattr(o.structure, "candidate", None) is not None:
                    cand = o.structure.candidate.name
                out["evaluations"].append((r, mode, ev.k, ev.role, _theta_str(ev.theta), o.N, o.pilot, o.Z,
                                           o.stop, o.mean, o.variance, rec["provenance"], cand,
                                           json.dumps(rec, sort_keys=True)))
            out["calls"][mode] = solver.budget.spent
    except Exception as exc:  # one bad macro-rep must not sink the run
        out["failed"] = f"{type(exc).__name__}: {exc}"
    return out


def checkpoint_grid(budget, n):
    return [int(round(budget * i / (n - 1))) for i in range(n)]


def summarize(progress, checkpoints):
    """Mean and t-based 95% CI half-width of the holdout objective per mode and checkpoint.

    ``progress`` rows are ``(rep, mode, calls, theta, holdout)``.
    """
    series = {}
    for rep, mode, calls, _, h in progress:
        series.setdefault(mode, {}).setdefault(rep, []).append((int(calls), float(h)))
    rows = []
    for mode in series:
        reps = series[mode]
        for b in checkpoints:
            vals = []
            for rep in sorted(reps):
                pts = sorted(reps[rep])
                v = pts[0][1]
                for c, h in pts:
                    if c <= b:
                        v = h
                vals.append(v)
            vals = np.array(vals)
            m = vals.size
            mean = float(np.mean(vals))
            if m >= 2:
                half = float(sps.t.ppf(0.975, m - 1) * np.std(vals, ddof=1) / math.sqrt(m))
            else:
                half = math.nan
            rows.append((mode, b, mean, half, m))
    return rows


def selection_frequency_report(evaluations, reps=None):
    """Mean and standard error across macro-reps of per-candidate selection counts.

    ``evaluations`` rows follow the strata log layout; only concomitant modes count.
    """
    counts = {}
    seen_reps = {}
    for row in evaluations:
        rep, mode, cand = row[0], row[1], row[12]
        if not mode.startswith("conv"):
            continue
        seen_reps.setdefault(mode, set()).add(rep)
        if cand:
            counts.setdefault(mode, {}).setdefault(cand, {}).setdefault(rep, 0)
            counts[mode][cand][rep] += 1
    rows = []
    for mode in sorted(seen_reps):
        rlist = sorted(reps if reps is not None else seen_reps[mode])
        for cand in sorted(counts.get(mode, {})):
            c = np.array([counts[mode][cand].get(r, 0) for r in rlist], dtype=float)
            se = float(np.std(c, ddof=1) / math.sqrt(c.size)) if c.size >= 2 else 0.0
            rows.append((mode, cand, float(c.mean()), se, c.size))
    return rows


PROGRESS_HEADER = ("rep", "mode", "calls", "theta", "holdout")
SUMMARY_HEADER = ("mode", "budget", "mean_holdout", "ci95_halfwidth", "n_reps")
STRATA_HEADER = ("rep", "mode", "k", "role", "theta", "N", "pilot", "Z", "stop", "mean", "variance",
                 "provenance", "candidate", "structure")
SELECTION_HEADER = ("mode", "candidate", "mean_count", "se", "n_reps")


def _write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


def _read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def _prepare_out(path):
    os.makedirs(path, exist_ok=True)
    probe = os.path.join(path, ".write_probe")
    with open(probe, "w") as fh:
        fh.write("")
    os.remove(probe)


def _worker(args):
    cfg, r = args
    return run_macrorep(cfg, r)


def run_experiment(cfg, out=None):
    """Run every macro-rep and mode, write CSV outputs; returns the run directory."""
    out = out or cfg.out
    _prepare_out(out)
    if cfg.workers > 1 and cfg.macroreps > 1:
        with ProcessPoolExecutor(cfg.workers) as ex:
            results = list(ex.map(_worker, [(cfg, r) for r in range(cfg.macroreps)]))
    else:
        problem, data = make_problem(cfg)
        results = [run_macrorep(cfg, r, problem, data) for r in range(cfg.macroreps)]
    ok = [res for res in results if res["failed"] is None]
    progress = [row for res in ok for row in res["progress"]]
    evaluations = [row for res in ok for row in res["evaluations"]]
    _write_csv(os.path.join(out, "progress.csv"), PROGRESS_HEADER, progress)
    _write_csv(os.path.join(out, "summary.csv"), SUMMARY_HEADER,
               summarize(progress, checkpoint_grid(cfg.budget, cfg.checkpoints)))
    _write_csv(os.path.join(out, "strata_log.csv"), STRATA_HEADER, evaluations)
    _write_csv(os.path.join(out, "selection_freq.csv"), SELECTION_HEADER,
               selection_frequency_report(evaluations, [res["rep"] for res in ok]))
    manifest = {
        "config": asdict(cfg),
        "seed": cfg.seed,
        "failed_reps": {str(res["rep"]): res["failed"] for res in results if res["failed"] is not None},
        "calls": {str(res["rep"]): res["calls"] for res in ok},
        "versions": {"python": platform.python_version(), "numpy": np.__version__, "scipy": scipy.__version__},
    }
    with open(os.path.join(out, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True, default=list)
        fh.write("\n")
    return out


def report(out, checkpoints=21, budget=None):
    """Rebuild summary.csv (and selection_freq.csv when a strata log exists) from progress.csv."""
    rows = _read_csv(os.path.join(out, "progress.csv"))
    progress = [(int(r["rep"]), r["mode"], int(r["calls"]), r["theta"], float(r["holdout"])) for r in rows]
    if budget is None:
        mpath = os.path.join(out, "manifest.json")
        if os.path.exists(mpath):
            with open(mpath) as fh:
                budget = json.load(fh)["config"]["budget"]
        else:
            budget = max(p[2] for p in progress)
    summary = summarize(progress, checkpoint_grid(budget, checkpoints))
    _write_csv(os.path.join(out, "summary.csv"), SUMMARY_HEADER, summary)
    spath = os.path.join(out, "strata_log.csv")
    if os.path.exists(spath):
        ev = [(int(r["rep"]), r["mode"]) + (None,) * 10 + (r["candidate"],) for r in _read_csv(spath)]
        reps = sorted({p[0] for p in progress})
        _write_csv(os.path.join(out, "selection_freq.csv"), SELECTION_HEADER, selection_frequency_report(ev, reps))
    return summary


def sweep_cells(grid):
    """One-factor-at-a-time cells; an empty grid gives the baseline alone."""
    cells = [(k, v) for k in grid for v in grid[k]]
    return cells or [(None, None)]


def sweep(cfg, out=None):
    """Run one experiment per grid cell and collect terminal statistics."""
    out = out or cfg.out
    _prepare_out(out)
    rows = []
    for param, value in sweep_cells(cfg.grid):
        if param is None:
            cell_cfg, name = replace(cfg, grid={}), "baseline"
        else:
            cell_cfg, name = replace(cfg, grid={}, **{param: value}), f"{param}={value}"
        cell_dir = run_experiment(cell_cfg, os.path.join(out, name))
        summ = _read_csv(os.path.join(cell_dir, "summary.csv"))
        prog = _read_csv(os.path.join(cell_dir, "progress.csv"))
        for mode in cell_cfg.modes:
            term = [r for r in summ if r["mode"] == mode and int(r["budget"]) == cell_cfg.budget]
            last = {}
            for r in prog:
                if r["mode"] == mode:
                    last[r["rep"]] = float(r["holdout"])
            vals = np.array(list(last.values()))
            sd = float(np.std(vals, ddof=1)) if vals.size >= 2 else math.nan
            if term:
                rows.append((name, param or "", "" if value is None else value, mode,
                             float(term[0]["mean_holdout"]), float(term[0]["ci95_halfwidth"]), sd))
    _write_csv(os.path.join(out, "sweep.csv"),
               ("cell", "param", "value", "mode", "terminal_mean", "ci95_halfwidth", "terminal_sd"), rows)
    return rows
