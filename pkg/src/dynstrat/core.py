"""Problem abstraction, datasets and reproducible random streams.

A problem maps a parameter vector ``theta`` and a batch of data points to
per-point losses plus an auxiliary record of simulation by-products. Every
row passed through :meth:`Problem.simulate` counts as one unit of budget.
"""
from __future__ import annotations

import csv
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


class InvalidArgument(ValueError):
    pass


class EvaluationFailure(RuntimeError):
    def __init__(self, message, index=None):
        super().__init__(message)
        self.index = index


@dataclass(frozen=True)
class DataPoint:
    x: np.ndarray
    y: np.ndarray


class Dataset:
    """Inputs ``X`` (n x q) paired with observed outputs ``Y`` (n x p)."""

    def __init__(self, X, Y, x_names=None, y_names=None):
        X = np.array(X, dtype=float, ndmin=2)
        Y = np.array(Y, dtype=float, ndmin=2)
        if X.shape[0] < 1:
            raise InvalidArgument("dataset must hold at least one point")
        if X.shape[0] != Y.shape[0]:
            raise InvalidArgument("X and Y row counts differ")
        if X.shape[1] < 1 or Y.shape[1] < 1:
            raise InvalidArgument("need q >= 1 and p >= 1")
        if not (np.all(np.isfinite(X)) and np.all(np.isfinite(Y))):
            raise InvalidArgument("non-finite entries in dataset")
        X.setflags(write=False)
        Y.setflags(write=False)
        self.X = X
        self.Y = Y
        self.x_names = list(x_names) if x_names else [f"x{i + 1}" for i in range(X.shape[1])]
        self.y_names = list(y_names) if y_names else [f"y{i + 1}" for i in range(Y.shape[1])]

    def __len__(self):
        return self.X.shape[0]

    @property
    def q(self):
        return self.X.shape[1]

    @property
    def p(self):
        return self.Y.shape[1]

    def point(self, i):
        return DataPoint(self.X[i], self.Y[i])

    def subset(self, indices):
        indices = np.asarray(indices, dtype=int)
        return Dataset(self.X[indices], self.Y[indices], self.x_names, self.y_names)

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(self.x_names + self.y_names)
            for x, y in zip(self.X, self.Y):
                w.writerow([repr(float(v)) for v in x] + [repr(float(v)) for v in y])

    @classmethod
    def from_csv(cls, path):
        """Read a CSV whose header is ``x1..xq`` followed by ``y1..yp``."""
        with open(Path(path), newline="") as fh:
            rows = list(csv.reader(fh))
        if len(rows) < 2:
            raise InvalidArgument(f"{path}: no data rows")
        header = [h.strip() for h in rows[0]]
        x_cols = [i for i, h in enumerate(header) if h.startswith("x")]
        y_cols = [i for i, h in enumerate(header) if h.startswith("y")]
        if not x_cols or not y_cols or max(x_cols) > min(y_cols):
            raise InvalidArgument(f"{path}: header must list x columns then y columns")
        data = np.array([[float(v) for v in r] for r in rows[1:] if r], dtype=float)
        return cls(data[:, x_cols], data[:, y_cols])


class Problem:
    """Black-box per-datapoint loss.

    Subclasses implement :meth:`simulate`, vectorized over rows of ``X``/``Y``.
    It must be deterministic and return non-negative finite losses together
    with a dict of auxiliary arrays (one entry per row, same keys every call).
    """

    name = "problem"
    theta_dim = 1
    lower = np.array([-np.inf])
    upper = np.array([np.inf])
    # input columns usable as stratification variables
    strat_features: tuple = (0,)

    def simulate(self, theta, X, Y):
        raise NotImplementedError

    def evaluate(self, theta, point):
        losses, aux = self.simulate(np.atleast_1d(theta), point.x[None, :], point.y[None, :])
        return float(losses[0]), {k: float(v[0]) for k, v in aux.items()}

    def concomitant_candidates(self):
        return []

    def in_domain(self, theta):
        theta = np.asarray(theta, dtype=float)
        return bool(np.all(theta >= self.lower) and np.all(theta <= self.upper))

    def project(self, theta):
        return np.clip(np.asarray(theta, dtype=float), self.lower, self.upper)


def _purpose_key(purpose):
    if isinstance(purpose, (int, np.integer)):
        return int(purpose)
    return zlib.crc32(str(purpose).encode())


@dataclass
class RandomStream:
    """Seed hierarchy ``(seed, rep, purpose)`` wrapped around a numpy Generator.

    Identical hierarchies give identical draw sequences; distinct purposes
    map to distinct spawn keys and hence independent streams.
    """

    seed: int
    rep: int = 0
    purpose: str = "main"
    rng: np.random.Generator = field(init=False, repr=False)

    def __post_init__(self):
        ss = np.random.SeedSequence(self.seed, spawn_key=(self.rep, _purpose_key(self.purpose)))
        self.rng = np.random.Generator(np.random.PCG64(ss))

    def child(self, purpose):
        return RandomStream(self.seed, self.rep, f"{self.purpose}/{purpose}")


class IndexStream:
    """Sequence of i.i.d. uniform row indices, served one request at a time.

    Indices are generated in fixed-size blocks so the j-th index does not
    depend on how requests were batched. Sharing the seed across solver
    variants gives common random numbers.
    """

    block = 4096

    def __init__(self, n, stream):
        if n < 1:
            raise InvalidArgument("cannot draw from an empty dataset")
        self.n = n
        self.stream = stream
        self._buf = np.empty(0, dtype=np.int64)
        self._pos = 0
        self.drawn = 0

    def take(self, count):
        if count < 0:
            raise InvalidArgument("count must be non-negative")
        out = []
        while count > 0:
            if self._pos >= self._buf.size:
                self._buf = self.stream.rng.integers(0, self.n, size=self.block)
                self._pos = 0
            m = min(count, self._buf.size - self._pos)
            out.append(self._buf[self._pos:self._pos + m])
            self._pos += m
            count -= m
        self.drawn += sum(a.size for a in out)
        return np.concatenate(out) if out else np.empty(0, dtype=np.int64)


def draw_iid(dataset, stream, count):
    """Draw ``count`` points uniformly with replacement; returns row indices."""
    if len(dataset) < 1:
        raise InvalidArgument("cannot draw from an empty dataset")
    if count < 1:
        raise InvalidArgument("count must be >= 1")
    if isinstance(stream, IndexStream):
        return stream.take(count)
    return stream.rng.integers(0, len(dataset), size=count)


def split_dataset(dataset, stream, fraction):
    """Random disjoint split; the first part holds ``round(fraction * n)`` rows."""
    if not 0 < fraction < 1:
        raise InvalidArgument("fraction must lie in (0, 1)")
    n = len(dataset)
    perm = stream.rng.permutation(n)
    m = int(round(fraction * n))
    model_idx, valid_idx = np.sort(perm[:m]), np.sort(perm[m:])
    return model_idx, valid_idx


@dataclass
class SAAEstimate:
    mean: float
    variance: float  # nan when N == 1
    losses: np.ndarray

    @property
    def variance_defined(self):
        return self.losses.size >= 2


def check_losses(losses):
    bad = np.flatnonzero(~np.isfinite(losses))
    if bad.size:
        raise EvaluationFailure(f"non-finite loss at sample position {bad[0]}", index=int(bad[0]))


def sample_moments(losses):
    """Mean and unbiased variance, nan variance for a single value."""
    mean = float(np.mean(losses))
    var = float(np.var(losses, ddof=1)) if losses.size >= 2 else float("nan")
    return mean, var


def saa_estimate(problem, theta, X, Y):
    """Sample-average estimate of the objective at ``theta`` over rows of X, Y."""
    X = np.asarray(X, dtype=float)
    if X.shape[0] == 0:
        raise InvalidArgument("empty sample")
    if not problem.in_domain(theta):
        raise InvalidArgument(f"theta {theta} outside the domain")
    losses, _ = problem.simulate(np.atleast_1d(np.asarray(theta, dtype=float)), X, np.asarray(Y, dtype=float))
    losses = np.asarray(losses, dtype=float)
    check_losses(losses)
    mean, var = sample_moments(losses)
    return SAAEstimate(mean, var, losses)
