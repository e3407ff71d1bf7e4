"""One-dimensional strata on a concomitant variable.

The concomitant is picked among candidate transforms of real inputs or of
simulation by-products by robust linear regression against the loss. Cut
points solve the fixed-point condition ``c_z = (mu_z + mu_{z+1}) / 2`` where
``mu_z`` is the conditional mean of the concomitant on interval ``z``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import stats as sps

from .strata import (EstimationFailure, IntervalStructure, TrivialStructure,
                     StratumStats, estimate_from_stats)

DEFAULT_EPS = 1e-6
DEFAULT_RHO = 0.1
DEFAULT_ZMAX = 4
DEFAULT_NBOOT = 50
DEFAULT_MAX_ITERS = 200
BISQUARE_C = 4.685

_TRANSFORMS = {
    "identity": lambda v: v,
    "square": lambda v: v * v,
    "cube": lambda v: v * v * v,
}


class DegenerateCovariate(ValueError):
    pass


class BoundaryDegenerate(RuntimeError):
    pass


@dataclass(frozen=True)
class ConcomitantCandidate:
    """Transform of an input column (``source='real'``) or an auxiliary key."""

    name: str
    source: str  # "real" | "simulated"
    base: object  # column index for real inputs, aux key for simulated ones
    transform: str = "identity"

    def values(self, X=None, aux=None):
        if self.source == "real":
            v = np.asarray(X, dtype=float)[:, self.base]
        else:
            v = np.asarray(aux[self.base], dtype=float)
        return _TRANSFORMS[self.transform](v)


# ---------------------------------------------------------------------------
# Regression


@dataclass
class RegressionFit:
    intercept: float
    slope: float
    residuals: np.ndarray = field(repr=False)
    residual_variance: float
    correlation: float  # Pearson correlation between covariate and residuals
    variance_ratio: float
    converged: bool
    iterations: int


def _wls(C, F, w):
    sw = w.sum()
    cm = np.dot(w, C) / sw
    fm = np.dot(w, F) / sw
    dc = C - cm
    sxx = np.dot(w, dc * dc)
    if sxx <= 0:
        return None
    beta = np.dot(w, dc * (F - fm)) / sxx
    return fm - beta * cm, beta


def robust_linear_fit(C, F, c=BISQUARE_C, max_iter=10, tol=1e-10):
    """Tukey-bisquare IRLS fit of ``F ~ alpha + beta*C`` started from OLS.

    Residuals are reported around the robust slope with the intercept set
    to their mean, so they average to zero.
    """
    C = np.asarray(C, dtype=float)
    F = np.asarray(F, dtype=float)
    n = C.size
    if n < 3 or F.size != n:
        raise ValueError("need at least three paired observations")
    if np.ptp(C) == 0:
        raise DegenerateCovariate("covariate is constant")
    alpha, beta = _wls(C, F, np.ones(n))
    converged = False
    it = 0
    scale_floor = 1e-12 * max(float(np.std(F)), float(np.max(np.abs(F))), 1e-300)
    for it in range(1, max_iter + 1):
        r = F - alpha - beta * C
        s = float(np.median(np.abs(r - np.median(r)))) / 0.6745
        if s <= scale_floor:
            converged = True
            break
        u = r / (c * s)
        w = np.where(np.abs(u) < 1.0, (1.0 - u * u) ** 2, 0.0)
        if np.count_nonzero(w) < 3:
            break
        est = _wls(C, F, w)
        if est is None:
            break
        a_new, b_new = est
        done = abs(b_new - beta) <= tol * (1.0 + abs(beta)) and abs(a_new - alpha) <= tol * (1.0 + abs(alpha))
        alpha, beta = a_new, b_new
        if done:
            converged = True
            break
    alpha = float(np.mean(F - beta * C))
    E = F - alpha - beta * C
    var_e = float(np.var(E, ddof=1))
    var_f = float(np.var(F, ddof=1))
    ratio = var_e / var_f if var_f > 0 else 0.0
    sd_e = float(np.std(E))
    corr = 0.0 if sd_e <= 1e-14 * max(float(np.std(F)), 1e-300) else float(np.corrcoef(C, E)[0, 1])
    return RegressionFit(alpha, float(beta), E, var_e, corr, ratio, converged, it)


def select_concomitant(candidates, values, losses, rho=DEFAULT_RHO):
    """Pick the candidate with the smallest residual variance among those whose
    residuals are nearly uncorrelated with the covariate (``|corr| < rho``).

    ``values`` holds one array of covariate values per candidate. Returns
    ``(candidate, fit)`` or None.
    """
    if not candidates:
        raise ValueError("empty candidate list")
    best = None
    for cand, C in zip(candidates, values):
        try:
            fit = robust_linear_fit(C, losses)
        except DegenerateCovariate:
            continue
        if not abs(fit.correlation) < rho:
            continue
        if best is None or fit.residual_variance < best[1].residual_variance:
            best = (cand, fit)
    return best


# ---------------------------------------------------------------------------
# Boundaries


@dataclass
class BoundarySet:
    cuts: np.ndarray
    iterations: int
    displacement: float
    converged: bool

    @property
    def Z(self):
        return self.cuts.size + 1


def _iterate(cond_mean, cuts, eps, max_iters, repair):
    disp = math.inf
    it = 0
    for it in range(1, max_iters + 1):
        mu = cond_mean(cuts)
        if mu is None:
            cuts = repair(cuts)
            continue
        new = 0.5 * (mu[:-1] + mu[1:])
        disp = float(np.max(np.abs(new - cuts)))
        cuts = new
        if disp <= eps:
            break
    return cuts, it, disp


def dalenius_boundaries(values, Z, eps=DEFAULT_EPS, max_iters=DEFAULT_MAX_ITERS, init=None):
    """Fixed-point cut points for ``Z`` strata on an empirical sample."""
    v = np.sort(np.asarray(values, dtype=float))
    if Z < 2:
        raise ValueError("Z must be at least 2")
    if np.unique(v).size < Z:
        raise BoundaryDegenerate(f"fewer than {Z} distinct values")
    csum = np.concatenate([[0.0], np.cumsum(v)])
    vmin, vmax = v[0], v[-1]

    def cond_mean(cuts):
        idx = np.concatenate([[0], np.searchsorted(v, cuts, side="left"), [v.size]])
        cnt = np.diff(idx)
        if np.any(cnt == 0):
            return None
        return np.diff(csum[idx]) / cnt

    repairs = [0]

    def repair(cuts):
        repairs[0] += 1
        if repairs[0] > 10 * Z:
            raise BoundaryDegenerate("strata keep emptying")
        idx = np.concatenate([[0], np.searchsorted(v, cuts, side="left"), [v.size]])
        cnt = np.diff(idx)
        cuts = cuts.copy()
        z = int(np.flatnonzero(cnt == 0)[0])
        k = z if z < Z - 1 else z - 1
        lo = cuts[k - 1] if k > 0 else vmin
        hi = cuts[k + 1] if k < Z - 2 else vmax
        cuts[k] = 0.5 * (lo + hi)
        return cuts

    if init is None:
        cuts = np.quantile(v, np.arange(1, Z) / Z)
    else:
        cuts = np.array(init, dtype=float)
    cuts, it, disp = _iterate(cond_mean, cuts, eps, max_iters, repair)
    idx = np.concatenate([[0], np.searchsorted(v, cuts, side="left"), [v.size]])
    if np.any(np.diff(cuts) <= 0) or np.any(np.diff(idx) == 0):
        raise BoundaryDegenerate("an interval holds no data")
    return BoundarySet(cuts, it, disp, disp <= eps)


def _uniform_family(a, b):
    def cond_mean(lo, hi):
        return 0.5 * (np.clip(lo, a, b) + np.clip(hi, a, b))

    def ppf(q):
        return a + (b - a) * q
    return cond_mean, ppf


def _normal_family(mu, sigma):
    def cond_mean(lo, hi):
        zl = (lo - mu) / sigma
        zh = (hi - mu) / sigma
        mass = sps.norm.cdf(zh) - sps.norm.cdf(zl)
        return mu + sigma * (sps.norm.pdf(zl) - sps.norm.pdf(zh)) / mass

    def ppf(q):
        return mu + sigma * sps.norm.ppf(q)
    return cond_mean, ppf


def _binned_family(points, weights=None):
    """Piecewise-constant density with one cell per grid point.

    Cell edges sit halfway between neighbouring points; the outer cells are
    mirrored about the end points.
    """
    x = np.sort(np.asarray(points, dtype=float))
    if x.size < 2 or np.any(np.diff(x) <= 0):
        raise BoundaryDegenerate("grid needs at least two distinct points")
    w = np.ones(x.size) if weights is None else np.asarray(weights, dtype=float)[np.argsort(points)]
    w = w / w.sum()
    mid = 0.5 * (x[1:] + x[:-1])
    edges = np.concatenate([[2 * x[0] - mid[0]], mid, [2 * x[-1] - mid[-1]]])
    dens = w / np.diff(edges)
    F = np.concatenate([[0.0], np.cumsum(w)])
    M = np.concatenate([[0.0], np.cumsum(0.5 * dens * (edges[1:] ** 2 - edges[:-1] ** 2))])

    def moments(t):
        t = np.clip(t, edges[0], edges[-1])
        i = np.clip(np.searchsorted(edges, t, side="right") - 1, 0, x.size - 1)
        return F[i] + dens[i] * (t - edges[i]), M[i] + 0.5 * dens[i] * (t * t - edges[i] ** 2)

    def cond_mean(lo, hi):
        fl, ml = moments(lo)
        fh, mh = moments(hi)
        return (mh - ml) / (fh - fl)

    def ppf(q):
        return np.interp(q, F, edges)
    return cond_mean, ppf


def grid_boundaries(points, Z, weights=None, eps=DEFAULT_EPS, max_iters=DEFAULT_MAX_ITERS, init=None):
    """Fixed-point cut points for a density given on a grid of cell midpoints.

    Unlike ``dalenius_boundaries`` the grid is treated as a continuous
    piecewise-constant density, so cuts are not tied to the grid spacing.
    """
    if Z < 2:
        raise ValueError("Z must be at least 2")
    cm, ppf = _binned_family(points, weights)

    def cond_mean(cuts):
        edges = np.concatenate([[-np.inf], cuts, [np.inf]])
        mu = cm(edges[:-1], edges[1:])
        return mu if np.all(np.isfinite(mu)) else None

    def repair(cuts):
        raise BoundaryDegenerate("an interval holds no mass")

    cuts = ppf(np.arange(1, Z) / Z) if init is None else np.array(init, dtype=float)
    cuts, it, disp = _iterate(cond_mean, cuts, eps, max_iters, repair)
    return BoundarySet(cuts, it, disp, disp <= eps)


def analytic_boundaries(family, Z, params=(), eps=DEFAULT_EPS, max_iters=DEFAULT_MAX_ITERS, init=None):
    """Fixed-point cut points for a known distribution.

    ``family`` is ``"uniform"`` (params ``a, b``; default 0, 1) or
    ``"normal"`` (params ``mu, sigma``; default 0, 1).
    """
    if family == "uniform":
        cm, ppf = _uniform_family(*(params or (0.0, 1.0)))
    elif family == "normal":
        cm, ppf = _normal_family(*(params or (0.0, 1.0)))
    else:
        raise ValueError(f"unknown family {family!r}")
    if Z < 2:
        raise ValueError("Z must be at least 2")

    def cond_mean(cuts):
        edges = np.concatenate([[-np.inf], cuts, [np.inf]])
        return cm(edges[:-1], edges[1:])

    cuts = ppf(np.arange(1, Z) / Z) if init is None else np.array(init, dtype=float)
    cuts, it, disp = _iterate(cond_mean, cuts, eps, max_iters, None)
    return BoundarySet(cuts, it, disp, disp <= eps)


# ---------------------------------------------------------------------------
# Number of strata


def _boot_variances(labels, losses, idx, Z, p):
    """Post-stratified variance of each bootstrap resample under one labelling."""
    B, n = idx.shape
    lab = labels[idx]
    val = losses[idx]
    keys = (lab + Z * np.arange(B)[:, None]).ravel()
    cnt = np.bincount(keys, minlength=B * Z).reshape(B, Z).astype(float)
    s1 = np.bincount(keys, weights=val.ravel(), minlength=B * Z).reshape(B, Z)
    out = np.empty(B)
    good = np.all(cnt >= 2, axis=1)
    if good.any():
        mean = s1[good] / cnt[good]
        dev = val[good] - np.take_along_axis(mean, lab[good], axis=1)
        kg = (lab[good] + Z * np.arange(good.sum())[:, None]).ravel()
        ss = np.bincount(kg, weights=(dev * dev).ravel(), minlength=good.sum() * Z).reshape(-1, Z)
        s2 = ss / (cnt[good] - 1)
        out[good] = (s2 @ p) / n + (s2 @ (1.0 - p)) / n ** 2
    return out, good


def choose_strata_count(losses, labelings, n_boot=DEFAULT_NBOOT, stream=None):
    """Pick the number of strata by bootstrap.

    ``labelings`` maps ``Z`` to ``(structure, pilot_labels)``. For each
    bootstrap resample of the pilot the structure with the smallest
    post-stratified variance wins; the most frequent winner is returned,
    ties going to the smaller ``Z``. Returns 1 if no structure is usable.
    """
    losses = np.asarray(losses, dtype=float)
    if not labelings:
        return 1
    n = losses.size
    rng = stream.rng if hasattr(stream, "rng") else (stream or np.random.default_rng())
    idx = rng.integers(0, n, size=(n_boot, n))
    Zs = sorted(labelings)
    V = np.full((n_boot, len(Zs)), np.inf)
    for j, Z in enumerate(Zs):
        structure, labels = labelings[Z]
        v, good = _boot_variances(np.asarray(labels), losses, idx, structure.n_strata, structure.p)
        V[good, j] = v[good]
        for b in np.flatnonzero(~good):
            lab = labels[idx[b]]
            val = losses[idx[b]]
            st = [StratumStats.from_values(val[lab == z]) for z in range(structure.n_strata)]
            try:
                V[b, j] = estimate_from_stats(structure, st).variance
            except EstimationFailure:
                pass
    usable = np.isfinite(V).any(axis=1)
    if not usable.any():
        return 1
    winners = np.argmin(V[usable], axis=1)
    counts = np.bincount(winners, minlength=len(Zs))
    return Zs[int(np.argmax(counts))]


# ---------------------------------------------------------------------------
# End to end


@dataclass
class ConvConfig:
    z_max: int = DEFAULT_ZMAX
    eps: float = DEFAULT_EPS
    rho: float = DEFAULT_RHO
    n_boot: int = DEFAULT_NBOOT
    max_iters: int = DEFAULT_MAX_ITERS


class PopulationCache:
    """Sorted concomitant values and cut points over a fixed modeling dataset."""

    def __init__(self, X):
        self.X = X
        self._values = {}
        self._bounds = {}

    def values(self, cand):
        if cand.name not in self._values:
            self._values[cand.name] = cand.values(self.X)
        return self._values[cand.name]

    def boundaries(self, cand, Z, cfg):
        key = (cand.name, Z, cfg.eps, cfg.max_iters)
        if key not in self._bounds:
            try:
                bs = dalenius_boundaries(self.values(cand), Z, cfg.eps, cfg.max_iters)
                counts = np.bincount(np.searchsorted(bs.cuts, self.values(cand), side="right"), minlength=Z)
                self._bounds[key] = (bs, counts / counts.sum())
            except BoundaryDegenerate:
                self._bounds[key] = None
        return self._bounds[key]


def build_conv_strata(mode, candidates, pilot_X, pilot_aux, losses, population=None,
                      config=None, stream=None, cache=None):
    """Concomitant-variable strata from a pilot sample.

    ``mode='real'`` uses real-input candidates with boundaries and
    probabilities from the population (the modeling dataset inputs);
    ``mode='simulated'`` uses simulation by-products with boundaries and
    probabilities from the pilot itself.
    """
    cfg = config or ConvConfig()
    losses = np.asarray(losses, dtype=float)
    source = "real" if mode == "real" else "simulated"
    cands = [c for c in candidates if c.source == source]
    trivial = TrivialStructure()
    trivial.fit = None
    trivial.candidate = None
    if not cands or losses.size < 3:
        return trivial
    values = [c.values(pilot_X, pilot_aux) for c in cands]
    chosen = select_concomitant(cands, values, losses, cfg.rho)
    if chosen is None:
        return trivial
    cand, fit = chosen
    C = values[cands.index(cand)]
    provenance = "concomitant-real" if source == "real" else "concomitant-simulated"
    if source == "real" and cache is None:
        cache = PopulationCache(population if population is not None else pilot_X)

    labelings = {}
    for Z in range(2, cfg.z_max + 1):
        if source == "real":
            res = cache.boundaries(cand, Z, cfg)
            if res is None:
                continue
            bs, p = res
            if np.any(p <= 0):
                continue
        else:
            try:
                bs = dalenius_boundaries(C, Z, cfg.eps, cfg.max_iters)
            except BoundaryDegenerate:
                continue
            counts = np.bincount(np.searchsorted(bs.cuts, C, side="right"), minlength=Z)
            if np.any(counts == 0):
                continue
            p = counts / counts.sum()
        structure = IntervalStructure(cand, bs.cuts, p, provenance)
        structure.fit = fit
        structure.boundary_set = bs
        labelings[Z] = (structure, np.searchsorted(bs.cuts, C, side="right"))
    Zk = choose_strata_count(losses, labelings, cfg.n_boot, stream)
    if Zk == 1:
        trivial.fit = fit
        trivial.candidate = cand
        return trivial
    structure = labelings[Zk][0]
    structure.pilot_labels = labelings[Zk][1]
    return structure
