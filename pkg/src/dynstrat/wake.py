"""Synthetic wind-farm calibration benchmark built on the Jensen top-hat wake.

Inputs per data point are ``(wind speed [m/s], direction [deg], turbulence
intensity)``; outputs are normalized power per turbine. The calibration
parameter is the wake decay coefficient.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .conv_strata import ConcomitantCandidate
from .core import Dataset, Problem

WS, DIRECTION, TI = 0, 1, 2
REFERENCE_THETA = 0.04  # common offshore default
TRUE_THETA = 0.05


@dataclass
class FarmLayout:
    positions: np.ndarray  # (p, 2) metres, x east / y north
    rotor_radius: float = 40.0
    ct: float = 0.8
    cut_in: float = 3.0
    rated: float = 12.0
    cut_out: float = 25.0

    def __post_init__(self):
        self.positions = np.asarray(self.positions, dtype=float)
        if self.rotor_radius <= 0:
            raise ValueError("rotor radius must be positive")
        if not 0 < self.ct < 1:
            raise ValueError("thrust coefficient must lie in (0, 1)")
        if len({tuple(r) for r in self.positions}) != len(self.positions):
            raise ValueError("turbine positions must be distinct")

    @property
    def n_turbines(self):
        return self.positions.shape[0]


def default_layout(rows=2, cols=5, spacing_radii=10.0, rotor_radius=40.0):
    s = spacing_radii * rotor_radius
    pos = [(c * s, r * s) for r in range(rows) for c in range(cols)]
    return FarmLayout(np.array(pos), rotor_radius=rotor_radius)


def _downwind(direction_deg):
    # meteorological convention: direction the wind blows from
    phi = np.deg2rad(direction_deg)
    return np.stack([-np.sin(phi), -np.cos(phi)], axis=-1)


def _geometry(layout, direction, theta):
    d = _downwind(np.atleast_1d(np.asarray(direction, dtype=float)))  # (n, 2)
    rel = layout.positions[None, :, :] - layout.positions[:, None, :]  # (i, j, 2): j relative to i
    s = np.einsum("ijk,nk->nij", rel, d)
    cross = np.abs(rel[None, :, :, 0] * d[:, None, None, 1] - rel[None, :, :, 1] * d[:, None, None, 0])
    radius = layout.rotor_radius + theta * s
    return s, radius, (s > 0) & (cross <= radius)


def wake_membership(layout, direction, theta):
    """Boolean ``(n, i, j)``: turbine ``j`` sits inside the wake cone of turbine ``i``."""
    return _geometry(layout, direction, theta)[2]


def jensen_effective_speeds(layout, u0, direction, theta):
    """Effective wind speed at each turbine, shape ``(n, p)``.

    A turbine sits in an upwind turbine's wake when its crosswind offset is
    within the cone radius ``r + theta*s``; single-wake deficits combine as
    the root sum of squares.
    """
    u0 = np.atleast_1d(np.asarray(u0, dtype=float))
    s, radius, waked = _geometry(layout, direction, theta)
    a = 1.0 - np.sqrt(1.0 - layout.ct)
    with np.errstate(divide="ignore", invalid="ignore"):
        deficit = np.where(waked, a * (layout.rotor_radius / radius) ** 2, 0.0)
    combined = np.minimum(np.sqrt(np.sum(deficit ** 2, axis=1)), 1.0)  # over upwind i
    return u0[:, None] * (1.0 - combined)


def power_curve(speed, layout):
    """Normalized power: cubic in speed between cut-in and rated, flat to cut-out."""
    u = np.asarray(speed, dtype=float)
    ci, ur = layout.cut_in, layout.rated
    ramp = (u ** 3 - ci ** 3) / (ur ** 3 - ci ** 3)
    out = np.where(u < ci, 0.0, np.where(u < ur, ramp, 1.0))
    return np.where(u > layout.cut_out, 0.0, out)


def ramp_lipschitz(layout):
    return 3 * layout.rated ** 2 / (layout.rated ** 3 - layout.cut_in ** 3)


AUX_KEYS = ("ws_hat", "h_hat", "ws_hat_sq", "h_hat_sq", "ws_hat_cube")


class WakeProblem(Problem):
    name = "wake"
    theta_dim = 1
    strat_features = (WS, TI)

    def __init__(self, layout=None, lower=1e-3, upper=0.5):
        self.layout = layout or default_layout()
        self.lower = np.array([lower])
        self.upper = np.array([upper])

    def simulate_power(self, theta, X):
        X = np.asarray(X, dtype=float)
        theta = float(np.asarray(theta).ravel()[0])
        u = jensen_effective_speeds(self.layout, X[:, WS], X[:, DIRECTION], theta)
        return u, power_curve(u, self.layout)

    def simulate(self, theta, X, Y):
        u, h = self.simulate_power(theta, X)
        loss = np.mean((h - np.asarray(Y, dtype=float)) ** 2, axis=1)
        ws = u.mean(axis=1)
        hb = h.mean(axis=1)
        aux = {"ws_hat": ws, "h_hat": hb, "ws_hat_sq": ws * ws, "h_hat_sq": hb * hb, "ws_hat_cube": ws ** 3}
        return loss, aux

    def concomitant_candidates(self):
        return [
            ConcomitantCandidate("WS", "real", WS),
            ConcomitantCandidate("TI", "real", TI),
            ConcomitantCandidate("WS^2", "real", WS, "square"),
            ConcomitantCandidate("TI^2", "real", TI, "square"),
            ConcomitantCandidate("WS^3", "real", WS, "cube"),
            ConcomitantCandidate("WS_hat", "simulated", "ws_hat"),
            ConcomitantCandidate("h_hat", "simulated", "h_hat"),
            ConcomitantCandidate("WS_hat^2", "simulated", "ws_hat", "square"),
            ConcomitantCandidate("h_hat^2", "simulated", "h_hat", "square"),
            ConcomitantCandidate("WS_hat^3", "simulated", "ws_hat", "cube"),
        ]


@dataclass
class NoiseModel:
    base: float = 0.02
    ti_slope: float = 0.3
    scale: float = 1.0  # multiplies the whole standard deviation; 0 gives noise-free data

    def std(self, u0, ti, rated):
        return self.scale * (self.base + self.ti_slope * ti * (u0 / rated))


@dataclass
class WindClimate:
    weibull_shape: float = 2.0
    weibull_scale: float = 8.0
    direction_center: float = 270.0
    direction_halfwidth: float = 15.0
    ti_median: float = 0.10
    ti_sigma: float = 0.35


def generate_synthetic_dataset(layout, n, theta_true=TRUE_THETA, noise=None, stream=None,
                               climate=None):
    """Synthetic SCADA-like records with known wake decay coefficient."""
    noise = noise or NoiseModel()
    climate = climate or WindClimate()
    rng = stream.rng if hasattr(stream, "rng") else (stream or np.random.default_rng())
    u0 = np.empty(0)
    while u0.size < n:
        draw = climate.weibull_scale * rng.weibull(climate.weibull_shape, size=2 * n)
        draw = draw[(draw >= layout.cut_in) & (draw <= layout.cut_out)]
        u0 = np.concatenate([u0, draw])
    u0 = u0[:n]
    direction = rng.uniform(climate.direction_center - climate.direction_halfwidth,
                            climate.direction_center + climate.direction_halfwidth, size=n)
    ti = rng.lognormal(np.log(climate.ti_median), climate.ti_sigma, size=n)
    u = jensen_effective_speeds(layout, u0, direction, theta_true)
    h = power_curve(u, layout)
    sd = noise.std(u0, ti, layout.rated)[:, None]
    y = np.clip(h + sd * rng.standard_normal(h.shape), 0.0, 1.0)
    X = np.column_stack([u0, direction, ti])
    return Dataset(X, y, ["x1", "x2", "x3"], [f"y{j + 1}" for j in range(layout.n_turbines)])


# ---------------------------------------------------------------------------
# Analytic fixtures


class QuadraticProblem(Problem):
    """``F(theta, x) = (theta - 0.3)^2 + noise_std * x`` with ``x ~ Exp(1)``."""

    name = "quadratic"
    theta_dim = 1
    strat_features = (0,)
    optimum = 0.3

    def __init__(self, noise_std=0.1, lower=-1.0, upper=1.0):
        self.noise_std = noise_std
        self.lower = np.array([lower])
        self.upper = np.array([upper])

    def simulate(self, theta, X, Y):
        X = np.asarray(X, dtype=float)
        t = float(np.asarray(theta).ravel()[0])
        loss = (t - self.optimum) ** 2 + self.noise_std * X[:, 0]
        return loss, {"x": X[:, 0].copy()}

    def concomitant_candidates(self):
        return [ConcomitantCandidate("x", "real", 0), ConcomitantCandidate("x_sim", "simulated", "x")]


def quadratic_dataset(n, stream=None):
    rng = stream.rng if hasattr(stream, "rng") else (stream or np.random.default_rng())
    return Dataset(rng.exponential(1.0, size=(n, 1)), np.zeros((n, 1)))


class TwoRegimeProblem(Problem):
    """Quadratic mean plus a non-negative noise whose scale jumps at ``x = 0.5``.

    The stratum standard deviations are ``(1, 5)`` and the stratum noise
    means ``sqrt(3) * (1, 5)``, so the best one-cut boundary is 0.5.
    """

    name = "two-regime"
    theta_dim = 1
    strat_features = (0,)
    optimum = 0.3
    boundary = 0.5
    scales = (1.0, 5.0)

    def __init__(self, lower=-1.0, upper=1.0):
        self.lower = np.array([lower])
        self.upper = np.array([upper])

    def simulate(self, theta, X, Y):
        X = np.asarray(X, dtype=float)
        Y = np.asarray(Y, dtype=float)
        t = float(np.asarray(theta).ravel()[0])
        s = np.where(X[:, 0] < self.boundary, self.scales[0], self.scales[1])
        loss = (t - self.optimum) ** 2 + s * (np.sqrt(3.0) + Y[:, 0])
        return loss, {"x": X[:, 0].copy()}

    def stratum_moments(self):
        """Per-stratum (p, mean of the noise term, std) under the true boundary."""
        p = np.array([self.boundary, 1 - self.boundary])
        sd = np.array(self.scales)
        return p, np.sqrt(3.0) * sd, sd

    def concomitant_candidates(self):
        return [ConcomitantCandidate("x", "real", 0), ConcomitantCandidate("x_sim", "simulated", "x")]


def two_regime_dataset(n, stream=None):
    rng = stream.rng if hasattr(stream, "rng") else (stream or np.random.default_rng())
    x = rng.uniform(0, 1, size=(n, 1))
    e = rng.uniform(-np.sqrt(3.0), np.sqrt(3.0), size=(n, 1))
    return Dataset(x, e)
