"""Exact search for score-maximizing shallow decision-tree policies."""

from __future__ import annotations

from collections.abc import Iterable, Sequence
from dataclasses import dataclass

import numpy as np
from numba import njit

from .core import (
    AipwScoreTable,
    ArmSet,
    FixedPolicy,
    Leaf,
    Split,
    TreePolicy,
    ValidationError,
)


def default_split_budget(depth: int) -> int:
    return 16 if depth <= 2 else 8


def candidate_thresholds(x, Q: int) -> np.ndarray:
    """Midpoints between consecutive distinct values, thinned to at most ``Q``.

    When thinning, each of the ``Q`` interior quantiles of ``x`` is snapped to
    the first midpoint at or above it.
    """
    if Q < 1:
        raise ValidationError("split budget Q must be >= 1")
    x = np.asarray(x, dtype=float)
    u = np.unique(x)
    mids = (u[:-1] + u[1:]) / 2
    if len(mids) <= Q:
        return mids
    qs = np.quantile(x, np.arange(1, Q + 1) / (Q + 1))
    idx = np.minimum(np.searchsorted(mids, qs, side="left"), len(mids) - 1)
    return mids[np.unique(idx)]


@dataclass(frozen=True, eq=False)
class SplitGrid:
    """Candidate thresholds per feature and every row's bin code.

    ``codes[i, j] <= c`` exactly when ``X[i, j] <= thresholds[j][c]``.
    """

    thresholds: tuple[np.ndarray, ...]
    codes: np.ndarray
    offsets: np.ndarray

    @property
    def n_bins(self) -> int:
        return int(self.offsets[-1])

    def encode(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        return np.column_stack([np.searchsorted(t, X[:, j], side="left")
                                for j, t in enumerate(self.thresholds)]).astype(np.int64)


def build_split_grid(X, Q: int) -> SplitGrid:
    X = np.atleast_2d(np.asarray(X, dtype=float))
    thr = tuple(candidate_thresholds(X[:, j], Q) for j in range(X.shape[1]))
    sizes = np.array([len(t) + 1 for t in thr], dtype=np.int64)
    offsets = np.concatenate([[0], np.cumsum(sizes)]).astype(np.int64)
    grid = SplitGrid(thr, np.zeros((0, X.shape[1]), dtype=np.int64), offsets)
    return SplitGrid(thr, grid.encode(X) if len(X) else grid.codes, offsets)


# -- kernels ----------------------------------------------------------------
# A depth-1 result is (feature, bin, left arm, right arm, value); feature -1
# means a single leaf with arm ``left arm``.

@njit(cache=True)
def _argmax(v):
    best = 0
    for k in range(1, v.shape[0]):
        if v[k] > v[best]:
            best = k
    return best


@njit(cache=True)
def _bin_sums(codes, G, offsets):
    n, p = codes.shape
    K = G.shape[1]
    NB = offsets[-1]
    M = np.zeros((NB, K))
    C = np.zeros(NB)
    for i in range(n):
        for j in range(p):
            b = offsets[j] + codes[i, j]
            C[b] += 1.0
            for k in range(K):
                M[b, k] += G[i, k]
    return M, C


@njit(cache=True)
def _depth1(M, C, offsets, total, ntot):
    K = M.shape[1]
    p = offsets.shape[0] - 1
    a = _argmax(total)
    bf, bc, ba, bb, bv = -1, -1, a, a, total[a]
    left = np.empty(K)
    right = np.empty(K)
    for j in range(p):
        lo = offsets[j]
        left[:] = 0.0
        nl = 0.0
        for c in range(offsets[j + 1] - lo - 1):
            b = lo + c
            for k in range(K):
                left[k] += M[b, k]
            nl += C[b]
            if nl == 0.0 or nl == ntot:
                continue
            for k in range(K):
                right[k] = total[k] - left[k]
            la = _argmax(left)
            ra = _argmax(right)
            v = left[la] + right[ra]
            if v > bv:
                bf, bc, ba, bb, bv = j, c, la, ra, v
    return bf, bc, ba, bb, bv


@njit(cache=True)
def _solve_depth1(codes, G, offsets):
    M, C = _bin_sums(codes, G, offsets)
    total = np.zeros(G.shape[1])
    for i in range(G.shape[0]):
        total += G[i]
    return _depth1(M, C, offsets, total, float(G.shape[0]))


@njit(cache=True)
def _solve_depth2(codes, G, offsets):
    n, p = codes.shape
    K = G.shape[1]
    NB = offsets[-1]
    M, C = _bin_sums(codes, G, offsets)
    total = np.zeros(K)
    for i in range(n):
        total += G[i]
    d1 = _depth1(M, C, offsets, total, float(n))
    out = np.full(11, -1.0)
    out[0] = d1[4]
    out[3], out[4], out[5], out[6] = d1[0], d1[1], d1[2], d1[3]
    best = d1[4]
    for j in range(p):
        nbj = offsets[j + 1] - offsets[j]
        if nbj < 2:
            continue
        T = np.zeros((nbj, NB, K))
        TC = np.zeros((nbj, NB))
        tot_b = np.zeros((nbj, K))
        n_b = np.zeros(nbj)
        for i in range(n):
            bj = codes[i, j]
            n_b[bj] += 1.0
            for k in range(K):
                tot_b[bj, k] += G[i, k]
            for jj in range(p):
                b = offsets[jj] + codes[i, jj]
                TC[bj, b] += 1.0
                for k in range(K):
                    T[bj, b, k] += G[i, k]
        L = np.zeros((NB, K))
        LC = np.zeros(NB)
        Ltot = np.zeros(K)
        nl = 0.0
        for c in range(nbj - 1):
            L += T[c]
            LC += TC[c]
            Ltot += tot_b[c]
            nl += n_b[c]
            if nl == 0.0 or nl == n:
                continue
            lres = _depth1(L, LC, offsets, Ltot, nl)
            rres = _depth1(M - L, C - LC, offsets, total - Ltot, n - nl)
            v = lres[4] + rres[4]
            if v > best:
                best = v
                out[0], out[1], out[2] = v, j, c
                out[3], out[4], out[5], out[6] = lres[0], lres[1], lres[2], lres[3]
                out[7], out[8], out[9], out[10] = rres[0], rres[1], rres[2], rres[3]
    return out


# -- tree assembly -------------------------------------------------------

def _collapse(node):
    if isinstance(node, Leaf):
        return node
    left, right = _collapse(node.left), _collapse(node.right)
    if isinstance(left, Leaf) and isinstance(right, Leaf) and left.arm == right.arm:
        return left
    return Split(node.feature, node.threshold, left, right)


class _Searcher:
    def __init__(self, grid: SplitGrid, G: np.ndarray, codes: np.ndarray, arm_ids: Sequence[int]):
        self.grid = grid
        self.G = G
        self.codes = codes
        self.arm_ids = tuple(arm_ids)

    def _d1_node(self, f, c, a, b):
        if f < 0:
            return Leaf(self.arm_ids[int(a)])
        thr = float(self.grid.thresholds[int(f)][int(c)])
        return Split(int(f), thr, Leaf(self.arm_ids[int(a)]), Leaf(self.arm_ids[int(b)]))

    def solve(self, rows: np.ndarray, depth: int):
        G, codes, off = self.G[rows], self.codes[rows], self.grid.offsets
        if depth == 0:
            tot = G.sum(axis=0)
            a = int(np.argmax(tot))
            return float(tot[a]), Leaf(self.arm_ids[a])
        if depth == 1:
            f, c, a, b, v = _solve_depth1(codes, G, off)
            return float(v), self._d1_node(f, c, a, b)
        if depth == 2:
            r = _solve_depth2(codes, G, off)
            if r[1] < 0:
                return float(r[0]), self._d1_node(r[3], r[4], r[5], r[6])
            thr = float(self.grid.thresholds[int(r[1])][int(r[2])])
            node = Split(int(r[1]), thr, self._d1_node(*r[3:7]), self._d1_node(*r[7:11]))
            return float(r[0]), node
        best_v, best_node = self.solve(rows, depth - 1)
        for j, thr in enumerate(self.grid.thresholds):
            col = self.codes[rows, j]
            for c in range(len(thr)):
                go_left = col <= c
                if go_left.all() or not go_left.any():
                    continue
                lv, ln = self.solve(rows[go_left], depth - 1)
                rv, rn = self.solve(rows[~go_left], depth - 1)
                if lv + rv > best_v:
                    best_v, best_node = lv + rv, Split(j, float(thr[c]), ln, rn)
        return best_v, best_node


def _score_matrix(scores) -> tuple[np.ndarray, tuple[int, ...]]:
    if isinstance(scores, AipwScoreTable):
        return np.asarray(scores.scores, dtype=float), scores.eligible
    G = np.atleast_2d(np.asarray(scores, dtype=float))
    return G, tuple(range(G.shape[1]))


def solve_tree_with_value(scores, X, depth: int, Q: int | None = None, weights=None,
                          arms: ArmSet | None = None, feature_names: Sequence[str] | None = None,
                          grid: SplitGrid | None = None) -> tuple[TreePolicy, float]:
    """Best tree of the given depth and its objective ``sum_i weight_i * G[i, pi(x_i)]``.

    ``weights`` are non-negative row multiplicities (bootstrap counts); rows
    with weight 0 are ignored entirely. ``grid`` may be prebuilt to share
    candidate thresholds across calls; it must have been built on ``X``.
    """
    G, arm_ids = _score_matrix(scores)
    X = np.atleast_2d(np.asarray(X, dtype=float))
    n = G.shape[0]
    if n == 0:
        raise ValidationError("solve_tree: empty score table")
    if len(X) != n:
        raise ValidationError("solve_tree: contexts and scores differ in length")
    if depth not in (0, 1, 2, 3):
        raise ValidationError(f"solve_tree: depth must be 0..3, got {depth}")
    if grid is None:
        grid = build_split_grid(X, Q or default_split_budget(depth))
    codes = grid.codes if grid.codes.shape[0] == n else grid.encode(X)
    if weights is None:
        rows = np.arange(n)
        Gw = G
    else:
        wts = np.asarray(weights, dtype=float)
        if wts.shape != (n,) or np.any(wts < 0):
            raise ValidationError("solve_tree: weights must be non-negative, one per row")
        rows = np.flatnonzero(wts > 0)
        if len(rows) == 0:
            raise ValidationError("solve_tree: all weights are zero")
        Gw = G * wts[:, None]
    searcher = _Searcher(grid, np.ascontiguousarray(Gw), np.ascontiguousarray(codes), arm_ids)
    value, node = searcher.solve(rows, depth)
    if arms is None:
        arms = ArmSet(tuple(f"arm{i}" for i in range(max(arm_ids) + 1)))
    if feature_names is None:
        feature_names = tuple(f"x{j}" for j in range(X.shape[1]))
    return TreePolicy(_collapse(node), arms, tuple(feature_names)), value


def solve_tree(scores, X, depth: int, Q: int | None = None, **kwargs) -> TreePolicy:
    return solve_tree_with_value(scores, X, depth, Q, **kwargs)[0]


def evaluate_policy_on_scores(policy, scores, X) -> float:
    """Mean score of the arm the policy picks at each context."""
    G, arm_ids = _score_matrix(scores)
    if G.shape[0] == 0:
        raise ValidationError("evaluate_policy_on_scores: empty score table")
    picks = np.asarray(policy.predict(X))
    col = {a: j for j, a in enumerate(arm_ids)}
    try:
        j = np.array([col[int(a)] for a in picks], dtype=np.int64)
    except KeyError as exc:
        raise ValidationError(f"policy picks arm {exc.args[0]} which has no score column") from None
    return float(G[np.arange(len(j)), j].mean())


@dataclass(frozen=True)
class DepthSelection:
    depth: int
    policy: TreePolicy
    held_out_values: dict


def select_depth_by_cv(scores, X, depths: Iterable[int] = (1, 2), train_fraction: float = 0.8,
                       Q: int | None = None, arms: ArmSet | None = None,
                       feature_names: Sequence[str] | None = None) -> DepthSelection:
    """Pick the depth whose tree, fit on the first ``train_fraction`` of rows,
    scores best on the rest; then refit at that depth on every row.

    Rows are assumed to be in chronological order. Ties go to the smaller depth.
    """
    G, arm_ids = _score_matrix(scores)
    X = np.atleast_2d(np.asarray(X, dtype=float))
    depths = sorted(set(int(d) for d in depths))
    if not depths or any(d not in (1, 2, 3) for d in depths):
        raise ValidationError("depths must be a non-empty subset of {1, 2, 3}")
    n = G.shape[0]
    n_train = int(np.floor(train_fraction * n))
    if n_train == 0:
        raise ValidationError("training split is empty")
    if n_train >= n:
        raise ValidationError("held-out split is empty")
    table = AipwScoreTable(G, arm_ids)
    train, test = table.take(slice(0, n_train)), table.take(slice(n_train, n))
    values = {}
    for d in depths:
        pol = solve_tree(train, X[:n_train], d, Q, arms=arms, feature_names=feature_names)
        values[d] = evaluate_policy_on_scores(pol, test, X[n_train:])
    best = depths[0]
    for d in depths[1:]:
        if values[d] > values[best]:
            best = d
    policy = solve_tree(table, X, best, Q, arms=arms, feature_names=feature_names)
    return DepthSelection(best, policy, values)


def best_fixed_arm(scores) -> tuple[int, float]:
    """Global arm with the highest mean score and that mean."""
    G, arm_ids = _score_matrix(scores)
    means = G.mean(axis=0)
    j = int(np.argmax(means))
    return arm_ids[j], float(means[j])


def fixed_policy(scores, arms: ArmSet) -> FixedPolicy:
    return FixedPolicy(best_fixed_arm(scores)[0], arms)
