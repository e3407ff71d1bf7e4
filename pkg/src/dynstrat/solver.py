"""ASTRO-DF trust-region search with post-stratified adaptive sampling."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq

from .conv_strata import ConvConfig, PopulationCache, build_conv_strata
from .core import IndexStream, RandomStream, check_losses
from .strata import PostStratifier, TrivialStructure
from .tree_strata import build_tree_strata

MODES = ("ns", "bt", "conv-r", "conv-s")


@dataclass
class SolverConfig:
    theta0: tuple = (0.1,)
    delta0: float = 0.08
    lambda0: int = 80
    kappa: float = 1.0
    eta: float = 0.1
    gamma_inc: float = 1.5
    gamma_dec: float = 0.5
    delta_max: float | None = None  # default 10 * delta0
    n_max: int | None = None  # default ceil(0.05 * budget)
    budget: int = 10_000
    mode: str = "ns"
    tau: int = 5
    z_max: int = 4
    eps: float = 1e-6
    rho: float = 0.1
    n_boot: int = 50

    def __post_init__(self):
        self.theta0 = tuple(np.atleast_1d(np.asarray(self.theta0, dtype=float)).tolist())
        if self.delta_max is None:
            self.delta_max = 10.0 * self.delta0
        if self.n_max is None:
            self.n_max = math.ceil(0.05 * self.budget)
        self.validate()

    def validate(self):
        if not self.delta0 > 0:
            raise ValueError("delta0 must be positive")
        if not 0 < self.eta < 1:
            raise ValueError("eta must lie in (0, 1)")
        if not self.gamma_dec < 1 < self.gamma_inc:
            raise ValueError("need gamma_dec < 1 < gamma_inc")
        if self.lambda0 < 2:
            raise ValueError("lambda0 must be at least 2")
        if self.delta_max < self.delta0:
            raise ValueError("delta_max below delta0")
        if self.mode not in MODES:
            raise ValueError(f"unknown strata mode {self.mode!r}")
        if self.budget < 1:
            raise ValueError("budget must be positive")

    @property
    def conv(self):
        return ConvConfig(self.z_max, self.eps, self.rho, self.n_boot)


def pilot_size(k, lambda0):
    """Pilot sample size at iteration ``k``; never below ``lambda0``."""
    return max(int(lambda0), math.ceil(lambda0 * math.log(k + 1) ** 1.5))


class Budget:
    def __init__(self, total):
        self.total = int(total)
        self.spent = 0

    @property
    def remaining(self):
        return self.total - self.spent

    def spend(self, n):
        if n > self.remaining:
            raise RuntimeError("budget overdraft")
        self.spent += n


# ---------------------------------------------------------------------------
# Strata builders


@dataclass
class Pilot:
    X: np.ndarray
    Y: np.ndarray
    losses: np.ndarray
    aux: dict


def make_builder(mode, problem, dataset, config, stream=None):
    """Callable ``pilot -> StratificationStructure`` for a strata mode."""
    if mode == "ns":
        return lambda pilot: TrivialStructure()
    if mode == "bt":
        cols = tuple(problem.strat_features)
        population = dataset.X[:, cols]

        def build_bt(pilot):
            return build_tree_strata(pilot.X[:, cols], pilot.losses, population, config.tau, columns=cols,
                                     feature_names=[dataset.x_names[c] for c in cols])
        return build_bt
    if mode in ("conv-r", "conv-s"):
        cands = problem.concomitant_candidates()
        cache = PopulationCache(dataset.X) if mode == "conv-r" else None
        kind = "real" if mode == "conv-r" else "simulated"
        cfg = config.conv
        stream = stream or RandomStream(0, 0, "bootstrap")

        def build_conv(pilot):
            return build_conv_strata(kind, cands, pilot.X, pilot.aux, pilot.losses, dataset.X, cfg, stream, cache)
        return build_conv
    raise ValueError(f"unknown strata mode {mode!r}")


# ---------------------------------------------------------------------------
# Adaptive sampling


@dataclass
class SamplingOutcome:
    N: int
    pilot: int
    mean: float
    variance: float
    stop: str  # threshold-met | cap-hit | budget-exhausted
    structure: object = None
    Z: int = 1
    se_before_last: float = math.nan
    threshold: float = math.nan

    @property
    def complete(self):
        return self.stop != "budget-exhausted"


def adaptive_sample(problem, dataset, theta, delta, k, builder, budget, draws, config):
    """Pilot, build strata, then add one i.i.d. point at a time until the
    post-stratified standard error drops to ``kappa * delta**2 / sqrt(lambda_k)``.
    """
    theta = np.atleast_1d(np.asarray(theta, dtype=float))
    lam = pilot_size(k, config.lambda0)
    if budget.remaining < 1:
        return SamplingOutcome(0, lam, math.nan, math.nan, "budget-exhausted")
    m = min(lam, budget.remaining)
    idx = draws.take(m)
    X, Y = dataset.X[idx], dataset.Y[idx]
    losses, aux = problem.simulate(theta, X, Y)
    budget.spend(m)
    losses = np.asarray(losses, dtype=float)
    check_losses(losses)
    if m < lam:
        mean = float(np.mean(losses))
        var = float(np.var(losses, ddof=1)) / m if m > 1 else math.nan
        return SamplingOutcome(m, lam, mean, var, "budget-exhausted")
    structure = builder(Pilot(X, Y, losses, aux))
    labels = getattr(structure, "pilot_labels", None)
    if labels is None or len(labels) != m:
        labels = structure.assign(X, aux)
    acc = PostStratifier(structure, losses, labels)
    est = acc.estimate()
    threshold = config.kappa * delta ** 2 / math.sqrt(lam)
    cap = max(config.n_max, lam)
    n = m
    se_prev = math.nan
    stop = "threshold-met"
    while math.sqrt(est.variance) > threshold:
        if n >= cap:
            stop = "cap-hit"
            break
        if budget.remaining < 1:
            stop = "budget-exhausted"
            break
        j = draws.take(1)
        xj, yj = dataset.X[j], dataset.Y[j]
        lj, auxj = problem.simulate(theta, xj, yj)
        budget.spend(1)
        check_losses(np.asarray(lj))
        z = int(structure.assign(xj, auxj)[0])
        acc.add(z, lj[0])
        n += 1
        se_prev = math.sqrt(est.variance)
        est = acc.estimate()
    return SamplingOutcome(n, lam, est.mean, est.variance, stop, structure, structure.n_strata, se_prev, threshold)


# ---------------------------------------------------------------------------
# Local model and subproblem


@dataclass
class LocalModel:
    center: float
    g: np.ndarray
    h: np.ndarray
    delta: float

    def __call__(self, s):
        s = np.asarray(s, dtype=float)
        return self.center + float(self.g @ s) + 0.5 * float(self.h @ (s * s))


def build_model(center, values, offsets, delta):
    """Diagonal quadratic through the center and two points per coordinate.

    ``values[i]`` and ``offsets[i]`` hold the two function estimates and the
    signed steps along coordinate ``i``. Symmetric offsets give central
    differences.
    """
    d = len(values)
    g = np.empty(d)
    h = np.empty(d)
    for i, ((fa, fb), (a, b)) in enumerate(zip(values, offsets)):
        if a == -b:
            g[i] = (fa - fb) / (2 * a)
            h[i] = (fa - 2 * center + fb) / a ** 2
        else:
            da, db = fa - center, fb - center
            h[i] = 2 * (da * b - db * a) / (a * b * (a - b))
            g[i] = (da - 0.5 * h[i] * a * a) / a
    return LocalModel(float(center), g, h, float(delta))


def solve_subproblem(g, h, delta):
    """Minimize ``g.s + 0.5*sum(h*s^2)`` over ``||s|| <= delta``.

    Returns ``(s, predicted_reduction)``.
    """
    g = np.atleast_1d(np.asarray(g, dtype=float))
    h = np.atleast_1d(np.asarray(h, dtype=float))

    def model(s):
        return float(g @ s) + 0.5 * float(h @ (s * s))

    if np.all(g == 0):
        s = np.zeros_like(g)
        if np.any(h < 0):
            j = int(np.argmin(h))
            s[j] = delta
        return s, -model(s)
    if np.all(h > 0):
        with np.errstate(over="ignore"):
            s = -g / h
        if np.linalg.norm(s) <= delta:
            return s, -model(s)
    hmin = float(h.min())
    mu_lo = max(0.0, -hmin)
    flat = h == hmin
    if hmin <= 0 and np.all(g[flat] == 0):
        # hard case: no pole at mu_lo along the most negative curvature
        s = np.where(flat, 0.0, -g / np.where(flat, 1.0, h + mu_lo))
        nrm = np.linalg.norm(s)
        if nrm <= delta:
            j = int(np.flatnonzero(flat)[0])
            s[j] = math.sqrt(max(delta ** 2 - nrm ** 2, 0.0))
            return s, -model(s)

    def phi(mu):
        with np.errstate(divide="ignore"):
            return np.linalg.norm(g / (h + mu)) - delta

    mu_hi = np.linalg.norm(g) / delta - hmin + 1.0
    while phi(mu_hi) > 0:
        mu_hi *= 2
    step = 1e-8 * (1.0 + mu_hi)
    a = mu_lo + step
    while phi(a) <= 0 and mu_lo + 0.5 * step > mu_lo:
        step *= 0.5
        a = mu_lo + step
    if phi(a) <= 0:
        # the pole at mu_lo is too weak to resolve, so this is numerically the
        # hard case: fill the remaining radius along the most negative curvature
        s = np.where(flat, 0.0, -g / np.where(flat, 1.0, h + mu_lo))
        nrm = min(np.linalg.norm(s), delta)
        j = int(np.flatnonzero(flat)[0])
        s[j] = -math.copysign(math.sqrt(max(delta ** 2 - nrm ** 2, 0.0)), g[j])
        return s, -model(s)
    mu = brentq(phi, a, mu_hi, xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=500)
    s = -g / (h + mu)
    nrm = np.linalg.norm(s)
    if nrm > delta:
        s *= delta / nrm
    return s, -model(s)


def _interval_step(g, h, lo, hi):
    """Exact 1-D minimizer of ``g*s + h*s^2/2`` on ``[lo, hi]``."""
    cands = [lo, hi]
    if h > 0 and lo < -g / h < hi:
        cands.append(-g / h)
    vals = [g * s + 0.5 * h * s * s for s in cands]
    return np.array([cands[int(np.argmin(vals))]])


def _offsets(theta_i, delta, lo, hi):
    """Signed interpolation steps for one coordinate, kept inside ``[lo, hi]``."""
    a, b = delta, -delta
    if theta_i + a > hi:
        a = -2 * delta if theta_i - 2 * delta >= lo else hi - theta_i
    if theta_i + b < lo:
        b = 2 * delta if theta_i + 2 * delta <= hi else lo - theta_i
    if a == b or a == 0 or b == 0:
        raise ValueError("trust region does not fit inside the domain")
    return a, b


# ---------------------------------------------------------------------------
# Trust-region loop


@dataclass
class TrustRegionState:
    theta: np.ndarray
    delta: float
    k: int = 0
    calls: int = 0
    f_est: float = math.nan


@dataclass
class EvaluationRecord:
    k: int
    role: str
    theta: np.ndarray
    outcome: SamplingOutcome


@dataclass
class IterationRecord:
    k: int
    theta: np.ndarray
    delta: float
    rho: float
    accepted: bool
    calls: int
    one_sided: bool = False  # an interpolation point was moved to stay inside the domain
    pred: float = math.nan
    center: float = math.nan
    candidate: float = math.nan


class Solver:
    """One ASTRO-DF run on ``problem`` over the rows of ``dataset``.

    ``draws`` supplies data-point indices (shared across strata modes for
    common random numbers); ``boot_stream`` feeds the strata-count bootstrap.
    """

    def __init__(self, problem, dataset, config, draws=None, boot_stream=None):
        self.problem = problem
        self.dataset = dataset
        self.config = config
        self.draws = draws if draws is not None else IndexStream(len(dataset), RandomStream(0, 0, "draws"))
        self.builder = make_builder(config.mode, problem, dataset, config, boot_stream)
        self.budget = Budget(config.budget)
        self.evaluations = []
        self.iterations = []
        theta0 = np.asarray(config.theta0, dtype=float)
        if theta0.size != problem.theta_dim:
            raise ValueError("theta0 has the wrong dimension")
        if not problem.in_domain(theta0):
            raise ValueError("theta0 outside the domain")
        self.state = TrustRegionState(theta0.copy(), config.delta0)

    def _estimate(self, theta, role):
        st = self.state
        out = adaptive_sample(self.problem, self.dataset, theta, st.delta, st.k, self.builder,
                              self.budget, self.draws, self.config)
        self.evaluations.append(EvaluationRecord(st.k, role, np.array(theta, dtype=float), out))
        st.calls = self.budget.spent
        return out

    def step(self):
        """One iteration; returns the IterationRecord, or None if the budget ran out."""
        st, cfg, pb = self.state, self.config, self.problem
        center = self._estimate(st.theta, "center")
        if not center.complete:
            return None
        values, offsets = [], []
        one_sided = False
        for i in range(pb.theta_dim):
            a, b = _offsets(st.theta[i], st.delta, pb.lower[i], pb.upper[i])
            one_sided |= (a, b) != (st.delta, -st.delta)
            pair = []
            for off, tag in ((a, "+"), (b, "-")):
                pt = st.theta.copy()
                pt[i] += off
                out = self._estimate(pt, f"interp{i}{tag}")
                if not out.complete:
                    return None
                pair.append(out.mean)
            values.append(tuple(pair))
            offsets.append((a, b))
        model = build_model(center.mean, values, offsets, st.delta)
        if pb.theta_dim == 1:
            lo = max(pb.lower[0] - st.theta[0], -st.delta)
            hi = min(pb.upper[0] - st.theta[0], st.delta)
            s = _interval_step(model.g[0], model.h[0], lo, hi)
            pred = model(np.zeros(1)) - model(s)
        else:
            s, _ = solve_subproblem(model.g, model.h, st.delta)
            s = pb.project(st.theta + s) - st.theta
            pred = model(np.zeros_like(s)) - model(s)
        cand_theta = st.theta + s
        cand = self._estimate(cand_theta, "candidate")
        if not cand.complete:
            return None
        if pred <= 1e-14:
            rho = -math.inf
        else:
            rho = (center.mean - cand.mean) / pred
        accepted = rho > cfg.eta
        if accepted:
            st.theta = cand_theta
            st.f_est = cand.mean
            st.delta = min(cfg.gamma_inc * st.delta, cfg.delta_max)
        else:
            st.f_est = center.mean
            st.delta = cfg.gamma_dec * st.delta
        rec = IterationRecord(st.k, st.theta.copy(), st.delta, rho, accepted, self.budget.spent, one_sided,
                              pred, center.mean, cand.mean)
        self.iterations.append(rec)
        st.k += 1
        return rec

    def run(self):
        """Iterate until the budget is spent; returns ``[(calls, theta), ...]``."""
        trajectory = [(0, self.state.theta.copy())]
        while self.budget.remaining > 0:
            rec = self.step()
            if rec is None:
                break
            trajectory.append((rec.calls, rec.theta.copy()))
        self.trajectory = trajectory
        return trajectory


def run(problem, dataset, config, draws=None, boot_stream=None):
    solver = Solver(problem, dataset, config, draws, boot_stream)
    solver.run()
    return solver
