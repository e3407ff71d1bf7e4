"""Greedy binary-tree strata grown while the information gain keeps improving."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .strata import TreeNode, TreeStructure, TrivialStructure

DEFAULT_TAU = 5


@dataclass
class SplitEvaluation:
    var: int  # column index into the candidate-variable matrix
    value: float
    n_left: int
    n_right: int
    var_left: float
    var_right: float
    q_left: float
    q_right: float
    objective: float


def best_split(X, losses, n_total=None, tau=DEFAULT_TAU):
    """Exhaustive search for the split minimizing ``s2_l*Q_l + s2_r*Q_r``.

    Candidate values are midpoints between consecutive distinct values of
    each column of ``X``. Only splits leaving more than ``tau`` samples on
    both sides are admissible. Ties go to the lowest column, then the
    smallest value. Returns None when nothing is admissible.
    """
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    y = np.asarray(losses, dtype=float)
    m = y.size
    n_total = m if n_total is None else n_total
    if m <= 2 * tau + 1:
        return None
    y = y - y.mean()
    pos = np.arange(1, m)  # left size
    ok_size = (pos > tau) & (m - pos > tau)
    best = None
    for t in range(X.shape[1]):
        order = np.argsort(X[:, t], kind="stable")
        v = X[order, t]
        ys = y[order]
        s1 = np.cumsum(ys)
        s2 = np.cumsum(ys * ys)
        nl = pos.astype(float)
        nr = m - nl
        ssl = s2[:-1] - s1[:-1] ** 2 / nl
        sr1 = s1[-1] - s1[:-1]
        ssr = (s2[-1] - s2[:-1]) - sr1 ** 2 / nr
        ssl = np.maximum(ssl, 0.0)
        ssr = np.maximum(ssr, 0.0)
        ok = ok_size & (v[1:] > v[:-1])
        if not ok.any():
            continue
        with np.errstate(divide="ignore", invalid="ignore"):
            obj = (ssl / (nl - 1)) * (nl / n_total) + (ssr / (nr - 1)) * (nr / n_total)
        obj = np.where(ok, obj, np.inf)
        i = int(np.argmin(obj))
        if best is not None and not obj[i] < best.objective:
            continue
        a, b = v[i], v[i + 1]
        value = 0.5 * (a + b)
        if not value < b:
            value = a
        k = i + 1
        best = SplitEvaluation(t, float(value), k, m - k, float(ssl[i] / (k - 1)), float(ssr[i] / (m - k - 1)),
                               k / n_total, (m - k) / n_total, float(obj[i]))
    return best


def variance_if_split(sigma2_k, N, p_z, s2_z, p_l, s2_l, p_r, s2_r):
    """Post-stratified variance after replacing stratum z by two children."""
    def term(p, s2):
        return (p + (1.0 - p) / N) * s2
    return sigma2_k - (term(p_z, s2_z) - term(p_l, s2_l) - term(p_r, s2_r)) / N


def information_gain(delta):
    if not 0.0 < delta < 1.0:
        return -math.inf
    return -delta * math.log(delta)


@dataclass
class _Leaf:
    node: TreeNode
    samples: np.ndarray  # pilot row positions
    pop: np.ndarray  # population row positions
    cache: tuple | None = None  # (SplitEvaluation, p_left, p_right) or (None,)


def _post_strat_variance(leaves, s2, n_pop, N):
    p = np.array([lf.pop.size / n_pop for lf in leaves])
    s2 = np.asarray(s2)
    return float(np.sum(p * s2)) / N + float(np.sum((1.0 - p) * s2)) / N ** 2


def build_tree_strata(X, losses, population=None, tau=DEFAULT_TAU, columns=None, feature_names=None):
    """Grow tree strata from pilot inputs ``X`` (candidate columns) and losses.

    ``columns`` maps the columns of ``X`` back to the full input matrix used
    for membership. ``population`` holds the same columns for every point of the modeling
    dataset; stratum probabilities are the fractions of population rows in
    each leaf. Defaults to the pilot rows themselves.

    The returned structure carries ``history``: one ``(leaf, var, value,
    gain)`` tuple per accepted split.
    """
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    y = np.asarray(losses, dtype=float)
    P = X if population is None else np.asarray(population, dtype=float)
    if P.ndim == 1:
        P = P[:, None]
    N = y.size
    n_pop = P.shape[0]

    def trivial():
        s = TrivialStructure()
        s.history = []
        return s

    if N < 2 * tau + 2:
        return trivial()
    sigma2_k = float(np.var(y, ddof=1)) / N
    if sigma2_k <= 0:
        return trivial()

    root = TreeNode(leaf=0)
    leaves = [_Leaf(root, np.arange(N), np.arange(n_pop))]
    s2 = [float(np.var(y, ddof=1))]

    def evaluate(z):
        lf = leaves[z]
        if lf.cache is None:
            split = None
            if lf.samples.size > 2 * tau:
                split = best_split(X[lf.samples], y[lf.samples], N, tau)
            if split is None:
                lf.cache = (None,)
            else:
                left = P[lf.pop, split.var] <= split.value
                lf.cache = (split, left)
        if lf.cache[0] is None:
            return -math.inf, None
        split, left = lf.cache
        p_z = lf.pop.size / n_pop
        p_l = np.count_nonzero(left) / n_pop
        p_r = p_z - p_l
        new = variance_if_split(sigma2_k, N, p_z, s2[z], p_l, split.var_left, p_r, split.var_right)
        delta = (sigma2_k - new) / sigma2_k
        return information_gain(delta), split

    def apply(z, split):
        lf = leaves[z]
        _, left_pop = lf.cache
        xs = X[lf.samples, split.var]
        left_s = lf.samples[xs <= split.value]
        right_s = lf.samples[xs > split.value]
        new_z = len(leaves)
        node = lf.node
        lchild = TreeNode(leaf=z, parent=node)
        rchild = TreeNode(leaf=new_z, parent=node)
        node.leaf, node.var, node.value = None, split.var, split.value
        node.left, node.right = lchild, rchild
        leaves[z] = _Leaf(lchild, left_s, lf.pop[left_pop])
        leaves.append(_Leaf(rchild, right_s, lf.pop[~left_pop]))
        s2[z] = float(np.var(y[left_s], ddof=1))
        s2.append(float(np.var(y[right_s], ddof=1)))

    g_first, split = evaluate(0)
    if split is None:
        return trivial()
    history = [(0, split.var, split.value, g_first)]
    apply(0, split)
    g_prev = g_first
    sigma2_k = _post_strat_variance(leaves, s2, n_pop, N)

    while sigma2_k > 0:
        best_z, best_g, best_split_ = None, -math.inf, None
        for z in range(len(leaves)):
            g, sp = evaluate(z)
            if sp is not None and g > g_prev and g > best_g:
                best_z, best_g, best_split_ = z, g, sp
        if best_z is None:
            break
        history.append((best_z, best_split_.var, best_split_.value, best_g))
        apply(best_z, best_split_)
        g_prev = best_g
        sigma2_k = _post_strat_variance(leaves, s2, n_pop, N)

    p = np.array([lf.pop.size for lf in leaves], dtype=float)
    p = p / p.sum()
    structure = TreeStructure(root, p, columns, feature_names)
    structure.history = history
    structure.pilot_labels = np.empty(N, dtype=np.int64)
    for z, lf in enumerate(leaves):
        structure.pilot_labels[lf.samples] = z
    return structure
