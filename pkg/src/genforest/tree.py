"""Gradient trees: relabel, CART-split on pseudo-outcomes, recurse.

Trees are stored as flat node arrays (``feature == -1`` marks a leaf). A
sample goes left when ``x[feature] <= threshold``. Leaves hold the indices
of the honest (J2) samples routed to them; the J1 half only shapes the
partition.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple, Optional

import numba
import numpy as np

from .data import Dataset, validate_for_model
from .errors import InvalidOptions
from .models import MomentModel, columns, relabel_node


@dataclass(frozen=True)
class SplitOptions:
    """Node-size, balance and split-variable settings.

    ``mtry_rate`` is the Poisson mean for the number of candidate features
    per node; ``None`` means ``min(ceil(sqrt(p)) + 1, p)``.
    """

    min_node_size: int = 5
    balance_fraction: float = 0.05
    mtry_rate: Optional[float] = None

    def __post_init__(self):
        if int(self.min_node_size) != self.min_node_size or self.min_node_size < 1:
            raise InvalidOptions(f"min_node_size must be a positive integer, got {self.min_node_size}")
        if not 0.0 < self.balance_fraction <= 0.5:
            raise InvalidOptions(f"balance_fraction must lie in (0, 0.5], got {self.balance_fraction}")
        if self.mtry_rate is not None and not self.mtry_rate > 0:
            raise InvalidOptions(f"mtry_rate must be positive, got {self.mtry_rate}")

    def rate(self, p: int) -> float:
        if self.mtry_rate is not None:
            return float(self.mtry_rate)
        return float(min(math.ceil(math.sqrt(p)) + 1, p))

    def min_child(self, n_parent: int) -> int:
        return max(self.min_node_size, math.ceil(self.balance_fraction * n_parent))


class Split(NamedTuple):
    feature: int
    threshold: float
    criterion: float


# ---------------------------------------------------------------------------
# kernels


@numba.njit(cache=True, nogil=True)
def _choose_features(k_raw, keys):
    p = keys.shape[0]
    k = min(max(k_raw, 1), p)
    order = np.argsort(keys, kind="mergesort")
    return np.sort(order[:k])


@numba.njit(cache=True, nogil=True)
def _min_child(n, min_node_size, omega):
    c = int(math.ceil(omega * n))
    return max(min_node_size, c)


@numba.njit(cache=True, nogil=True)
def _find_split(X, members, rho, features, min_child):
    """Best (feature, threshold, criterion); feature == -1 when no split.

    Ties keep the earliest candidate: lowest feature index, then lowest
    threshold, since features arrive sorted and thresholds are scanned in
    increasing order. Criteria within 1e-12 of the node's sum of squared
    pseudo-outcomes count as tied, so the same partition reached through
    different features, or after a shift of rho, is not decided by rounding.
    """
    m = members.shape[0]
    d = rho.shape[1]
    tot = np.zeros(d)
    sumsq = 0.0
    varying = False
    for c in range(d):
        lo = rho[0, c]
        hi = rho[0, c]
        for i in range(m):
            tot[c] += rho[i, c]
            v = rho[i, c]
            sumsq += v * v
            if v < lo:
                lo = v
            if v > hi:
                hi = v
        if hi > lo:
            varying = True
    if not varying:
        return -1, 0.0, 0.0
    baseline = 0.0
    for c in range(d):
        baseline += tot[c] * tot[c]
    baseline /= m
    tol = 1e-12 * sumsq

    best_f = -1
    best_t = 0.0
    best_c = -np.inf
    vals = np.empty(m)
    left = np.empty(d)
    for f in features:
        for i in range(m):
            vals[i] = X[members[i], f]
        order = np.argsort(vals, kind="mergesort")
        left[:] = 0.0
        for r in range(m - 1):
            i = order[r]
            for c in range(d):
                left[c] += rho[i, c]
            nl = r + 1
            nr = m - nl
            a = vals[i]
            b = vals[order[r + 1]]
            if a == b or nl < min_child or nr < min_child:
                continue
            crit = 0.0
            for c in range(d):
                rs = tot[c] - left[c]
                crit += left[c] * left[c] / nl + rs * rs / nr
            if crit > best_c + tol:
                best_c = crit
                best_f = f
                t = 0.5 * (a + b)
                if t >= b:
                    t = a
                best_t = t
    if best_f < 0 or not best_c > baseline + tol:
        return -1, 0.0, 0.0
    return best_f, best_t, best_c


@numba.njit(cache=True, nogil=True)
def _route(feature, threshold, left, right, x):
    node = 0
    while feature[node] >= 0:
        if x[feature[node]] <= threshold[node]:
            node = left[node]
        else:
            node = right[node]
    return node


@numba.njit(cache=True, nogil=True)
def _grow(X, y, w, z, kind, levels, j1, j2, min_node_size, omega, k_draws, keys):
    n1 = j1.shape[0]
    cap = 2 * n1 + 1
    feature = np.full(cap, -1, dtype=np.int64)
    threshold = np.zeros(cap)
    left = np.full(cap, -1, dtype=np.int64)
    right = np.full(cap, -1, dtype=np.int64)
    start = np.zeros(cap, dtype=np.int64)
    end = np.zeros(cap, dtype=np.int64)
    idx = j1.copy()
    buf = np.empty(n1, dtype=np.int64)
    start[0] = 0
    end[0] = n1
    n_nodes = 1
    node = 0
    # children are appended, so id order is the FIFO processing order
    while node < n_nodes:
        s = start[node]
        e = end[node]
        m = e - s
        if m >= 2 * min_node_size and m >= 2:
            members = idx[s:e]
            rho, ok = relabel_node(kind, levels, y, w, z, members)
            if ok:
                feats = _choose_features(k_draws[node], keys[node])
                mc = _min_child(m, min_node_size, omega)
                f, t, _ = _find_split(X, members, rho, feats, mc)
                if f >= 0:
                    nl = 0
                    nr = 0
                    for i in range(m):
                        j = members[i]
                        if X[j, f] <= t:
                            buf[nl] = j
                            nl += 1
                    for i in range(m):
                        j = members[i]
                        if X[j, f] > t:
                            buf[nl + nr] = j
                            nr += 1
                    for i in range(m):
                        idx[s + i] = buf[i]
                    feature[node] = f
                    threshold[node] = t
                    left[node] = n_nodes
                    right[node] = n_nodes + 1
                    start[n_nodes] = s
                    end[n_nodes] = s + nl
                    start[n_nodes + 1] = s + nl
                    end[n_nodes + 1] = e
                    n_nodes += 2
        node += 1

    feature = feature[:n_nodes].copy()
    threshold = threshold[:n_nodes].copy()
    left = left[:n_nodes].copy()
    right = right[:n_nodes].copy()
    n2 = j2.shape[0]
    leaf_of = np.empty(n2, dtype=np.int64)
    counts = np.zeros(n_nodes + 1, dtype=np.int64)
    for i in range(n2):
        lf = _route(feature, threshold, left, right, X[j2[i]])
        leaf_of[i] = lf
        counts[lf + 1] += 1
    offsets = np.cumsum(counts)
    fill = offsets[:-1].copy()
    members_out = np.empty(n2, dtype=np.int64)
    for i in range(n2):
        lf = leaf_of[i]
        members_out[fill[lf]] = j2[i]
        fill[lf] += 1
    return feature, threshold, left, right, offsets, members_out


@numba.njit(cache=True, nogil=True)
def _apply(feature, threshold, left, right, X, rows):
    out = np.empty(rows.shape[0], dtype=np.int64)
    for r in range(rows.shape[0]):
        out[r] = _route(feature, threshold, left, right, X[rows[r]])
    return out


# ---------------------------------------------------------------------------
# public API


@dataclass(frozen=True, eq=False)
class Tree:
    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    leaf_offsets: np.ndarray
    leaf_members: np.ndarray

    @property
    def n_nodes(self) -> int:
        return self.feature.shape[0]

    def is_leaf(self, node: int) -> bool:
        return self.feature[node] < 0

    def leaf_samples(self, node: int) -> np.ndarray:
        return self.leaf_members[self.leaf_offsets[node]:self.leaf_offsets[node + 1]]

    def apply(self, X) -> np.ndarray:
        """Leaf index for every row of ``X``."""
        X = np.ascontiguousarray(np.atleast_2d(X), dtype=np.float64)
        rows = np.arange(X.shape[0], dtype=np.int64)
        return _apply(self.feature, self.threshold, self.left, self.right, X, rows)

    def leaves(self) -> np.ndarray:
        return np.flatnonzero(self.feature < 0)

    def depth(self) -> int:
        depth = np.zeros(self.n_nodes, dtype=np.int64)
        for node in range(self.n_nodes):
            if self.feature[node] >= 0:
                depth[self.left[node]] = depth[self.right[node]] = depth[node] + 1
        return int(depth.max())

    @classmethod
    def from_leaves(cls, X, feature, threshold, left, right, j2):
        """Assemble a tree from explicit node arrays, routing ``j2`` into leaves."""
        feature = np.asarray(feature, dtype=np.int64)
        threshold = np.asarray(threshold, dtype=np.float64)
        left = np.asarray(left, dtype=np.int64)
        right = np.asarray(right, dtype=np.int64)
        X = np.ascontiguousarray(X, dtype=np.float64)
        j2 = np.asarray(j2, dtype=np.int64)
        leaf = _apply(feature, threshold, left, right, X, j2)
        order = np.argsort(leaf, kind="stable")
        counts = np.bincount(leaf, minlength=feature.shape[0])
        offsets = np.concatenate([[0], np.cumsum(counts)]).astype(np.int64)
        return cls(feature, threshold, left, right, offsets, j2[order])


def select_split_variables(p: int, m: float, rng: np.random.Generator) -> np.ndarray:
    """Draw ``min(max(Poisson(m), 1), p)`` distinct feature indices uniformly."""
    if p < 1 or not m > 0:
        raise InvalidOptions(f"need p >= 1 and m > 0, got p={p}, m={m}")
    k_raw = int(rng.poisson(m))
    keys = rng.random(p)
    return _choose_features(k_raw, keys)


def as_rho_matrix(rho) -> np.ndarray:
    """Pseudo-outcomes as a 2-d float matrix; integer class labels become one-hot."""
    rho = np.asarray(rho)
    if rho.ndim == 2:
        return np.ascontiguousarray(rho, dtype=np.float64)
    if np.issubdtype(rho.dtype, np.integer):
        k = int(rho.max()) + 1 if rho.size else 1
        out = np.zeros((rho.shape[0], k))
        out[np.arange(rho.shape[0]), rho] = 1.0
        return out
    return np.ascontiguousarray(rho, dtype=np.float64)[:, None]


def find_best_split(rho, X, members, opts: SplitOptions, features=None) -> Optional[Split]:
    """Maximize the summed squared child totals over size-normalized children.

    ``rho`` holds one pseudo-outcome (or class label) per entry of
    ``members``; ``X`` is the full feature matrix and ``features`` restricts
    the candidates (default: all columns).
    """
    X = np.ascontiguousarray(X, dtype=np.float64)
    members = np.asarray(members, dtype=np.int64)
    R = as_rho_matrix(rho)
    if R.shape[0] != members.shape[0]:
        raise ValueError("rho and members differ in length")
    if features is None:
        features = np.arange(X.shape[1], dtype=np.int64)
    features = np.sort(np.asarray(features, dtype=np.int64))
    m = members.shape[0]
    if m < 2 * opts.min_node_size or m < 2:
        return None
    f, t, c = _find_split(X, members, R, features, opts.min_child(m))
    if f < 0:
        return None
    return Split(int(f), float(t), float(c))


def draw_node_randomness(rng: np.random.Generator, n_j1: int, p: int, opts: SplitOptions):
    rows = 2 * max(n_j1 // opts.min_node_size, 1) + 1
    k_draws = rng.poisson(opts.rate(p), size=rows).astype(np.int64)
    keys = rng.random((rows, p))
    return k_draws, keys


def grow_tree(
    data: Dataset,
    j1,
    j2,
    model: MomentModel,
    opts: SplitOptions,
    rng: np.random.Generator,
) -> Tree:
    """Grow one honest gradient tree: J1 shapes the splits, J2 fills the leaves."""
    validate_for_model(data, model.kind)
    j1 = np.asarray(j1, dtype=np.int64)
    j2 = np.asarray(j2, dtype=np.int64)
    if j1.size == 0 or j2.size == 0:
        raise InvalidOptions("J1 and J2 must both be nonempty")
    if np.intersect1d(j1, j2).size:
        raise InvalidOptions("J1 and J2 must be disjoint")
    y, w, z = columns(data)
    k_draws, keys = draw_node_randomness(rng, j1.shape[0], data.p, opts)
    parts = _grow(
        data.features, y, w, z, model.code, model.levels(), j1, j2,
        opts.min_node_size, float(opts.balance_fraction), k_draws, keys,
    )
    return Tree(*parts)
