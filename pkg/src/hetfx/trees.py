"""Shared tree-growing machinery.

One grower serves the regression, classification, causal, and FE-causal
forests. Split search is vectorized in numba: candidate thresholds are the
midpoints of sorted distinct values of each sampled feature, and validity
constraints are enforced on the structure and estimation halves at once, so
honest trees never produce an invalid leaf.

Criteria
--------
regression      variance reduction
classification  Gini impurity reduction
causal          nl*nr/(nl+nr)^2 * (tau_l - tau_r)^2 with tau = sum(ty)/sum(tt)

Tie-breaking is deterministic: strictly larger gain wins, candidates are
scanned in ascending feature index and ascending threshold order.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numba import njit

KIND_REG = 0
KIND_CLF = 1
KIND_CAUSAL = 2

LEAF = -1


@dataclass
class Tree:
    """Flat node-array representation of a fitted tree."""

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray
    n_est: np.ndarray
    gain: np.ndarray

    @property
    def n_nodes(self) -> int:
        return len(self.feature)

    def to_dict(self) -> dict:
        return {
            "feature": self.feature.tolist(),
            "threshold": self.threshold.tolist(),
            "left": self.left.tolist(),
            "right": self.right.tolist(),
            "value": self.value.tolist(),
            "n_est": self.n_est.tolist(),
            "gain": self.gain.tolist(),
        }


@njit(cache=True)
def _best_split(kind, xs, s1, s2, ex, e2, min_leaf_s, min_leaf_e, eps):
    """Best threshold for one feature at one node.

    xs, s1, s2: structure-half feature values and criterion stats.
    ex, e2: estimation-half feature values and stats (same arrays as the
    structure half for non-honest trees).

    Returns (gain, threshold, ok).
    """
    n = xs.shape[0]
    ne = ex.shape[0]
    order = np.argsort(xs, kind="mergesort")
    xs_s = xs[order]
    a = s1[order]
    if kind == KIND_CAUSAL:
        b = s2[order]
    else:
        b = np.zeros(0)
    eorder = np.argsort(ex, kind="mergesort")
    ex_s = ex[eorder]
    if kind == KIND_CAUSAL:
        eb = e2[eorder]
    else:
        eb = np.zeros(0)

    tot_a = 0.0
    for i in range(n):
        tot_a += a[i]
    tot_b = 0.0
    if kind == KIND_CAUSAL:
        for i in range(n):
            tot_b += b[i]
    tot_eb = 0.0
    if kind == KIND_CAUSAL:
        for i in range(ne):
            tot_eb += eb[i]

    best_gain = -1.0
    best_thr = 0.0
    found = False

    run_a = 0.0
    run_b = 0.0
    j = 0          # pointer into est-sorted values
    run_eb = 0.0
    for i in range(n - 1):
        run_a += a[i]
        if kind == KIND_CAUSAL:
            run_b += b[i]
        if xs_s[i + 1] <= xs_s[i]:
            continue
        thr = 0.5 * (xs_s[i] + xs_s[i + 1])
        nl = i + 1
        nr = n - nl
        if nl < min_leaf_s or nr < min_leaf_s:
            continue
        while j < ne and ex_s[j] <= thr:
            if kind == KIND_CAUSAL:
                run_eb += eb[j]
            j += 1
        nl_e = j
        nr_e = ne - j
        if nl_e < min_leaf_e or nr_e < min_leaf_e:
            continue

        if kind == KIND_REG:
            gain = run_a * run_a / nl + (tot_a - run_a) * (tot_a - run_a) / nr \
                - tot_a * tot_a / n
        elif kind == KIND_CLF:
            pos_l = run_a
            pos_r = tot_a - run_a
            g_parent = 2.0 * tot_a * (n - tot_a) / n
            g_l = 2.0 * pos_l * (nl - pos_l) / nl
            g_r = 2.0 * pos_r * (nr - pos_r) / nr
            gain = g_parent - g_l - g_r
        else:
            sl_tt = run_b
            sr_tt = tot_b - run_b
            if sl_tt <= eps or sr_tt <= eps:
                continue
            el_tt = run_eb
            er_tt = tot_eb - run_eb
            if el_tt <= eps or er_tt <= eps:
                continue
            tau_l = run_a / sl_tt
            tau_r = (tot_a - run_a) / sr_tt
            d = tau_l - tau_r
            gain = (nl / float(n)) * (nr / float(n)) * d * d

        if gain > best_gain and gain > 0.0:
            best_gain = gain
            best_thr = thr
            found = True
    return best_gain, best_thr, found


@njit(cache=True)
def _apply_tree(feature, threshold, left, right, x):
    """Leaf index for every row of x."""
    n = x.shape[0]
    out = np.empty(n, dtype=np.int64)
    for i in range(n):
        node = 0
        while feature[node] >= 0:
            if x[i, feature[node]] <= threshold[node]:
                node = left[node]
            else:
                node = right[node]
        out[i] = node
    return out


@njit(cache=True)
def _two_way_demean(values, g1, g2, n1, n2, tol, max_sweeps):
    """Alternating group demeaning; returns (residuals, converged, sweeps)."""
    out = values.copy()
    n = out.shape[0]
    converged = False
    sweeps = 0
    for s in range(max_sweeps):
        sweeps = s + 1
        delta = 0.0
        sums = np.zeros(n1)
        cnts = np.zeros(n1)
        for i in range(n):
            sums[g1[i]] += out[i]
            cnts[g1[i]] += 1.0
        for k in range(n1):
            if cnts[k] > 0:
                sums[k] /= cnts[k]
                m = abs(sums[k])
                if m > delta:
                    delta = m
        for i in range(n):
            out[i] -= sums[g1[i]]
        sums2 = np.zeros(n2)
        cnts2 = np.zeros(n2)
        for i in range(n):
            sums2[g2[i]] += out[i]
            cnts2[g2[i]] += 1.0
        for k in range(n2):
            if cnts2[k] > 0:
                sums2[k] /= cnts2[k]
                m = abs(sums2[k])
                if m > delta:
                    delta = m
        for i in range(n):
            out[i] -= sums2[g2[i]]
        if delta < tol:
            converged = True
            break
    return out, converged, sweeps


@njit(cache=True)
def _count_distinct(codes):
    seen = {}
    for c in codes:
        seen[c] = 1
    return len(seen)


class _TreeBuilder:
    """Accumulates nodes during growth and freezes them into a Tree."""

    def __init__(self):
        self.feature = []
        self.threshold = []
        self.left = []
        self.right = []
        self.value = []
        self.n_est = []
        self.gain = []

    def add_leaf(self, value: float, n_est: int) -> int:
        idx = len(self.feature)
        self.feature.append(LEAF)
        self.threshold.append(math.nan)
        self.left.append(LEAF)
        self.right.append(LEAF)
        self.value.append(value)
        self.n_est.append(n_est)
        self.gain.append(0.0)
        return idx

    def add_internal(self, feat: int, thr: float, gain: float, n_est: int) -> int:
        idx = len(self.feature)
        self.feature.append(feat)
        self.threshold.append(thr)
        self.left.append(LEAF)
        self.right.append(LEAF)
        self.value.append(math.nan)
        self.n_est.append(n_est)
        self.gain.append(gain)
        return idx

    def freeze(self) -> Tree:
        return Tree(
            feature=np.asarray(self.feature, dtype=np.int64),
            threshold=np.asarray(self.threshold, dtype=np.float64),
            left=np.asarray(self.left, dtype=np.int64),
            right=np.asarray(self.right, dtype=np.int64),
            value=np.asarray(self.value, dtype=np.float64),
            n_est=np.asarray(self.n_est, dtype=np.int64),
            gain=np.asarray(self.gain, dtype=np.float64),
        )


def _sample_features(rng: np.random.Generator, p: int, mtry: int) -> np.ndarray:
    if mtry >= p:
        return np.arange(p)
    feats = rng.permutation(p)[:mtry]
    feats.sort()
    return feats


def grow_tree(
    x: np.ndarray,
    s1: np.ndarray,
    s2: np.ndarray,
    struct_idx: np.ndarray,
    est_idx: np.ndarray,
    kind: int,
    min_leaf: int,
    mtry: int,
    rng: np.random.Generator,
    eps: float = 1e-10,
    fallback_value: float = 0.0,
) -> Tree:
    """Grow one tree.

    ``s1``/``s2`` are full-length stat columns read through the index sets:
    regression and classification use s1 only (target / labels); the causal
    kind uses s1 = t~*y~ and s2 = t~^2. Leaf values come from the estimation
    rows only.
    """
    builder = _TreeBuilder()
    empty = np.zeros(0)

    def leaf_value(e_idx: np.ndarray, parent: float) -> float:
        if kind == KIND_CAUSAL:
            tt = s2[e_idx].sum()
            if tt <= eps:
                return parent
            return s1[e_idx].sum() / tt
        if len(e_idx) == 0:
            return parent
        return float(s1[e_idx].mean())

    # stack entries: (struct rows, est rows, parent estimate, parent slot)
    stack = [(struct_idx, est_idx, fallback_value, ("root", 0))]
    links = []  # (parent_node, side, child_node)

    while stack:
        s_idx, e_idx, parent_val, slot = stack.pop()
        value_here = leaf_value(e_idx, parent_val)

        splittable = (
            len(s_idx) >= 2 * min_leaf
            and len(e_idx) >= 2 * min_leaf
        )
        if kind == KIND_CAUSAL and splittable:
            splittable = s2[s_idx].sum() > eps and s2[e_idx].sum() > eps
        if kind == KIND_REG and splittable:
            splittable = np.ptp(s1[s_idx]) > 0
        if kind == KIND_CLF and splittable:
            splittable = 0 < s1[s_idx].sum() < len(s_idx)

        best = None
        if splittable:
            feats = _sample_features(rng, x.shape[1], mtry)
            xs_all = x[s_idx]
            ex_all = x[e_idx]
            s1_n = s1[s_idx]
            s2_n = s2[s_idx] if kind == KIND_CAUSAL else empty
            e2_n = s2[e_idx] if kind == KIND_CAUSAL else empty
            for f in feats:
                gain, thr, ok = _best_split(
                    kind, np.ascontiguousarray(xs_all[:, f]), s1_n, s2_n,
                    np.ascontiguousarray(ex_all[:, f]), e2_n,
                    min_leaf, min_leaf, eps,
                )
                if ok and (best is None or gain > best[0]):
                    best = (gain, int(f), thr)

        if best is None:
            node = builder.add_leaf(value_here, len(e_idx))
        else:
            gain, f, thr = best
            node = builder.add_internal(f, thr, gain, len(e_idx))
            s_mask = x[s_idx, f] <= thr
            e_mask = x[e_idx, f] <= thr
            # right pushed first so the left child is processed next (DFS)
            stack.append((s_idx[~s_mask], e_idx[~e_mask], value_here, (node, "right")))
            stack.append((s_idx[s_mask], e_idx[e_mask], value_here, (node, "left")))
        if slot[0] != "root":
            links.append((slot[0], slot[1], node))

    tree = builder.freeze()
    for parent, side, child in links:
        if side == "left":
            tree.left[parent] = child
        else:
            tree.right[parent] = child
    return tree


def grow_fe_causal_tree(
    x: np.ndarray,
    y: np.ndarray,
    t: np.ndarray,
    pair_codes: np.ndarray,
    year_codes: np.ndarray,
    struct_idx: np.ndarray,
    est_idx: np.ndarray,
    min_leaf: int,
    mtry: int,
    rng: np.random.Generator,
    n_pairs: int,
    n_years: int,
    fe_tol: float,
    fe_max_sweeps: int,
    eps: float = 1e-10,
    fallback_value: float = 0.0,
) -> Tree:
    """Causal tree with node-local two-way fixed-effects residualization.

    At every node the outcome and treatment are demeaned on pair and year
    groups over the node's own rows, separately for the structure and
    estimation halves, before the split criterion and leaf effect are
    computed. Nodes whose halves span fewer than two pairs or two years are
    closed as leaves.
    """
    builder = _TreeBuilder()

    def demean(idx: np.ndarray, values: np.ndarray) -> np.ndarray:
        res, _, _ = _two_way_demean(
            values[idx], pair_codes[idx], year_codes[idx],
            n_pairs, n_years, fe_tol, fe_max_sweeps,
        )
        return res

    stack = [(struct_idx, est_idx, fallback_value, ("root", 0))]
    links = []
    while stack:
        s_idx, e_idx, parent_val, slot = stack.pop()

        s_ok = (
            len(s_idx) >= 2
            and _count_distinct(pair_codes[s_idx]) >= 2
            and _count_distinct(year_codes[s_idx]) >= 2
        )
        e_ok = (
            len(e_idx) >= 2
            and _count_distinct(pair_codes[e_idx]) >= 2
            and _count_distinct(year_codes[e_idx]) >= 2
        )

        value_here = parent_val
        ty_e = tt_e = None
        if e_ok:
            y_e = demean(e_idx, y)
            t_e = demean(e_idx, t)
            ty_e = t_e * y_e
            tt_e = t_e * t_e
            s_tt = tt_e.sum()
            if s_tt > eps:
                value_here = float(ty_e.sum() / s_tt)

        best = None
        if (
            s_ok
            and e_ok
            and len(s_idx) >= 2 * min_leaf
            and len(e_idx) >= 2 * min_leaf
        ):
            y_s = demean(s_idx, y)
            t_s = demean(s_idx, t)
            ty_s = t_s * y_s
            tt_s = t_s * t_s
            if tt_s.sum() > eps and tt_e.sum() > eps:
                feats = _sample_features(rng, x.shape[1], mtry)
                xs_all = x[s_idx]
                ex_all = x[e_idx]
                for f in feats:
                    gain, thr, ok = _best_split(
                        KIND_CAUSAL, np.ascontiguousarray(xs_all[:, f]), ty_s, tt_s,
                        np.ascontiguousarray(ex_all[:, f]), tt_e,
                        min_leaf, min_leaf, eps,
                    )
                    if ok and (best is None or gain > best[0]):
                        best = (gain, int(f), thr)

        if best is None:
            node = builder.add_leaf(value_here, len(e_idx))
        else:
            gain, f, thr = best
            node = builder.add_internal(f, thr, gain, len(e_idx))
            s_mask = x[s_idx, f] <= thr
            e_mask = x[e_idx, f] <= thr
            stack.append((s_idx[~s_mask], e_idx[~e_mask], value_here, (node, "right")))
            stack.append((s_idx[s_mask], e_idx[e_mask], value_here, (node, "left")))
        node_of[slot] = node
        if slot[0] != "root":
            links.append((slot[0], slot[1], node))

    tree = builder.freeze()
    for parent, side, child in links:
        if side == "left":
            tree.left[parent] = child
        else:
            tree.right[parent] = child
    return tree


def predict_tree(tree: Tree, x: np.ndarray) -> np.ndarray:
    leaves = _apply_tree(tree.feature, tree.threshold, tree.left, tree.right, x)
    return tree.value[leaves]


def tree_leaf_counts(tree: Tree) -> np.ndarray:
    """Estimation-row counts of the leaf nodes."""
    mask = tree.feature == LEAF
    return tree.n_est[mask]
