"""Stratification structures, stratified/post-stratified estimators and allocations."""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np


class EstimationFailure(RuntimeError):
    pass


class DegenerateAllocation(ValueError):
    pass


class AllocationExhausted(RuntimeError):
    pass


PROVENANCES = ("none", "tree", "concomitant-real", "concomitant-simulated")


# ---------------------------------------------------------------------------
# Structures


class StratificationStructure:
    """Partition of the input space into ``Z`` strata with probabilities ``p``.

    ``assign(X, aux)`` maps rows (input matrix plus auxiliary simulation
    record) to stratum indices ``0..Z-1``.
    """

    provenance = "none"
    uses_aux = False

    def __init__(self, p):
        p = np.asarray(p, dtype=float)
        if p.ndim != 1 or p.size < 1:
            raise ValueError("p must be a non-empty vector")
        if np.any(p <= 0):
            raise ValueError("stratum probabilities must be positive")
        if abs(p.sum() - 1.0) > 1e-12:
            raise ValueError(f"stratum probabilities sum to {p.sum()!r}")
        self.p = p

    @property
    def n_strata(self):
        return self.p.size

    def assign(self, X, aux=None):
        raise NotImplementedError

    def merge_partner(self, group, groups, counts):
        """Index into ``groups`` of the group that should absorb ``group``."""
        return _largest_other(group, groups, counts)

    def record(self):
        return {"provenance": self.provenance, "Z": self.n_strata, "p": [float(v) for v in self.p]}

    def serialize(self):
        return json.dumps(self.record(), sort_keys=True)


def _largest_other(group, groups, counts):
    best, best_n = None, -1
    for i, g in enumerate(groups):
        if g is group:
            continue
        n = sum(counts[z] for z in g)
        if n > best_n:
            best, best_n = i, n
    return best


class TrivialStructure(StratificationStructure):
    def __init__(self):
        super().__init__([1.0])

    def assign(self, X, aux=None):
        return np.zeros(np.asarray(X).shape[0], dtype=np.int64)


class IntervalStructure(StratificationStructure):
    """Strata ``[c_{z}, c_{z+1})`` on a scalar concomitant value."""

    def __init__(self, candidate, cuts, p, provenance):
        super().__init__(p)
        cuts = np.asarray(cuts, dtype=float)
        if cuts.size != self.p.size - 1:
            raise ValueError("need Z-1 cut points")
        if np.any(np.diff(cuts) <= 0):
            raise ValueError("cut points must strictly increase")
        self.candidate = candidate
        self.cuts = cuts
        self.provenance = provenance
        self.uses_aux = candidate.source == "simulated"

    def assign(self, X, aux=None):
        return np.searchsorted(self.cuts, self.candidate.values(X, aux), side="right")

    def merge_partner(self, group, groups, counts):
        lo, hi = min(group), max(group)
        left = right = None
        for i, g in enumerate(groups):
            if lo - 1 in g:
                left = i
            if hi + 1 in g:
                right = i
        if left is None and right is None:
            return _largest_other(group, groups, counts)
        if left is None or right is None:
            return right if left is None else left
        n_left = sum(counts[z] for z in groups[left])
        n_right = sum(counts[z] for z in groups[right])
        return left if n_left >= n_right else right

    def record(self):
        rec = super().record()
        rec["candidate"] = self.candidate.name
        rec["cuts"] = [float(c) for c in self.cuts]
        return rec


@dataclass
class TreeNode:
    leaf: int | None = None  # stratum index for leaves
    var: int | None = None
    value: float | None = None
    left: "TreeNode | None" = None
    right: "TreeNode | None" = None
    parent: "TreeNode | None" = field(default=None, repr=False)

    @property
    def is_leaf(self):
        return self.leaf is not None

    def splits(self):
        if self.is_leaf:
            return {"leaf": self.leaf}
        return {"var": self.var, "value": self.value,
                "left": self.left.splits(), "right": self.right.splits()}


class TreeStructure(StratificationStructure):
    """Leaves of an axis-aligned binary tree; left child is ``x[var] <= value``."""

    provenance = "tree"

    def __init__(self, root, p, columns=None, feature_names=None):
        super().__init__(p)
        self.root = root
        # maps split variable -> column of the full input matrix
        self.columns = None if columns is None else tuple(columns)
        self.feature_names = feature_names
        self._leaves = {}
        stack = [root]
        while stack:
            node = stack.pop()
            if node.is_leaf:
                self._leaves[node.leaf] = node
            else:
                stack.extend([node.left, node.right])
        if sorted(self._leaves) != list(range(self.p.size)):
            raise ValueError("leaf indices must be 0..Z-1")

    def assign(self, X, aux=None):
        X = np.asarray(X, dtype=float)
        out = np.empty(X.shape[0], dtype=np.int64)
        stack = [(self.root, np.arange(X.shape[0]))]
        while stack:
            node, idx = stack.pop()
            if node.is_leaf:
                out[idx] = node.leaf
                continue
            col = node.var if self.columns is None else self.columns[node.var]
            go_left = X[idx, col] <= node.value
            stack.append((node.left, idx[go_left]))
            stack.append((node.right, idx[~go_left]))
        return out

    def merge_partner(self, group, groups, counts):
        if len(group) == 1:
            node = self._leaves[group[0]]
            parent = node.parent
            if parent is not None:
                sib = parent.right if parent.left is node else parent.left
                if sib.is_leaf:
                    for i, g in enumerate(groups):
                        if sib.leaf in g and g is not group:
                            return i
        return _largest_other(group, groups, counts)

    def record(self):
        rec = super().record()
        rec["tree"] = self.root.splits()
        if self.columns is not None:
            rec["columns"] = list(self.columns)
        return rec


# ---------------------------------------------------------------------------
# Running statistics


class StratumStats:
    """Count, mean and sum of squared deviations, updated one value at a time."""

    __slots__ = ("count", "mean", "m2")

    def __init__(self, count=0, mean=0.0, m2=0.0):
        self.count = count
        self.mean = mean
        self.m2 = m2

    @classmethod
    def from_values(cls, values):
        values = np.asarray(values, dtype=float)
        if values.size == 0:
            return cls()
        mean = float(np.mean(values))
        return cls(values.size, mean, float(np.sum((values - mean) ** 2)))

    def add(self, value):
        self.count += 1
        delta = value - self.mean
        self.mean += delta / self.count
        self.m2 += delta * (value - self.mean)

    def merged(self, other):
        if self.count == 0:
            return StratumStats(other.count, other.mean, other.m2)
        if other.count == 0:
            return StratumStats(self.count, self.mean, self.m2)
        n = self.count + other.count
        delta = other.mean - self.mean
        mean = self.mean + delta * other.count / n
        m2 = self.m2 + other.m2 + delta * delta * self.count * other.count / n
        return StratumStats(n, mean, m2)

    @property
    def variance(self):
        if self.count < 2:
            return float("nan")
        return self.m2 / (self.count - 1)

    def copy(self):
        return StratumStats(self.count, self.mean, self.m2)

    def __repr__(self):
        return f"StratumStats(count={self.count}, mean={self.mean!r}, var={self.variance!r})"


# ---------------------------------------------------------------------------
# Estimators


def stratified_mean(stats, p):
    p = np.asarray(p, dtype=float)
    if any(s.count < 1 for s, pz in zip(stats, p) if pz > 0):
        raise EstimationFailure("stratum with positive probability has no samples")
    means = np.array([s.mean for s in stats])
    return float(np.sum(p * means))


def post_stratified_variance(stats, p, N):
    """Variance of the post-stratified mean, dropping the O(N^-3) remainder."""
    p = np.asarray(p, dtype=float)
    if any(s.count < 2 for s in stats):
        raise EstimationFailure("every stratum needs at least two samples")
    s2 = np.array([s.variance for s in stats])
    return float(np.sum(p * s2)) / N + float(np.sum((1.0 - p) * s2)) / N ** 2


def neyman_weights(p, sigma):
    p = np.asarray(p, dtype=float)
    sigma = np.asarray(sigma, dtype=float)
    if np.any(sigma < 0):
        raise ValueError("sigma must be non-negative")
    total = float(np.sum(p * sigma))
    if total <= 0:
        raise DegenerateAllocation("all stratum standard deviations are zero")
    return p * sigma / total


def analytic_variances(p, sigma, N):
    """``(var_optimal, var_proportional)`` for known stratum standard deviations."""
    p = np.asarray(p, dtype=float)
    sigma = np.asarray(sigma, dtype=float)
    return float(np.sum(p * sigma)) ** 2 / N, float(np.sum(p * sigma ** 2)) / N


def allocation_inflation(n_hat, n_prime, N):
    """Variance inflation factor from misallocating optimal sample sizes."""
    n_hat = np.asarray(n_hat, dtype=float)
    n_prime = np.asarray(n_prime, dtype=float)
    return 1.0 + float(np.sum((n_hat - n_prime) ** 2 / n_hat)) / N


def selective_random_stratum(v, n_z, n, stream):
    """Draw the next stratum, restricted to strata still below their target share.

    ``v`` holds Neyman weight estimates (optimal) or ``p`` (proportional).
    """
    v = np.asarray(v, dtype=float)
    n_z = np.asarray(n_z, dtype=float)
    mass = np.where(v > n_z / n, v, 0.0)
    total = mass.sum()
    if total <= 0:
        raise AllocationExhausted("no stratum below its target share")
    rng = stream.rng if hasattr(stream, "rng") else stream
    return int(rng.choice(v.size, p=mass / total))


# ---------------------------------------------------------------------------
# Post-stratification


@dataclass
class PostStratifiedEstimate:
    stats: list  # per merged group
    p: np.ndarray  # per merged group
    groups: list  # original stratum indices per group
    N: int
    mean: float
    variance: float
    raw_counts: np.ndarray = None

    @property
    def Z(self):
        return len(self.groups)


def merge_degenerate(structure, stats):
    """Fold strata with fewer than two samples into a partner stratum."""
    counts = [s.count for s in stats]
    groups = [[z] for z in range(len(stats))]
    while True:
        small = [g for g in groups if sum(counts[z] for z in g) < 2]
        if not small or len(groups) == 1:
            break
        g = small[0]
        j = structure.merge_partner(g, groups, counts)
        partner = groups[j]
        groups = [h for h in groups if h is not g and h is not partner]
        groups.append(sorted(g + partner))
        groups.sort(key=lambda h: h[0])
    merged = []
    for g in groups:
        acc = stats[g[0]]
        for z in g[1:]:
            acc = acc.merged(stats[z])
        merged.append(acc)
    p = np.array([sum(structure.p[z] for z in g) for g in groups])
    return groups, merged, p


def estimate_from_stats(structure, stats):
    N = sum(s.count for s in stats)
    if len(stats) == 1:
        groups, merged, p = [[0]], [stats[0]], np.array([1.0])
    else:
        groups, merged, p = merge_degenerate(structure, stats)
    if N < 2:
        raise EstimationFailure("need at least two samples")
    mean = stratified_mean(merged, p)
    var = post_stratified_variance(merged, p, N)
    return PostStratifiedEstimate(merged, p, groups, N, mean, var,
                                  np.array([s.count for s in stats]))


def post_stratify_sample(structure, losses, X=None, aux=None, labels=None):
    """Bin per-point losses by stratum membership and estimate mean and variance."""
    losses = np.asarray(losses, dtype=float)
    if labels is None:
        if X is None:
            X = np.zeros((losses.size, 1))
        labels = structure.assign(X, aux)
    stats = [StratumStats.from_values(losses[labels == z]) for z in range(structure.n_strata)]
    return estimate_from_stats(structure, stats)


class PostStratifier:
    """Incremental post-stratified estimator for one sampling loop."""

    def __init__(self, structure, losses, labels):
        self.structure = structure
        losses = np.asarray(losses, dtype=float)
        self.stats = [StratumStats.from_values(losses[labels == z]) for z in range(structure.n_strata)]

    def add(self, z, loss):
        self.stats[z].add(float(loss))

    @property
    def N(self):
        return sum(s.count for s in self.stats)

    def estimate(self):
        return estimate_from_stats(self.structure, self.stats)
