"""Honest subsampled forests and forest-weighted local estimation.

Trees are grouped into little bags: every ``little_bag_size`` consecutive
trees draw their subsamples from one shared half-sample, which is what the
variance estimator in :mod:`genforest.inference` relies on.

All randomness for tree ``b`` comes from a generator seeded by
``(seed, 1, b)`` (half-sample ``g`` uses ``(seed, 0, g)``), so a forest is
reproducible whatever the number of worker threads.
"""

from __future__ import annotations

import io
import json
import math
import os
import zipfile
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from functools import cached_property
from typing import Optional

import numba
import numpy as np

from .data import Dataset, validate_for_model
from .errors import FormatError, InvalidOptions, NoContributingTrees
from .models import (
    MomentModel,
    ParameterEstimate,
    columns,
    raise_for_status,
    solve_batch,
)
from .tree import SplitOptions, Tree, _grow, draw_node_randomness

FORMAT_VERSION = 1
_ZIP_DATE = (1980, 1, 1, 0, 0, 0)


@dataclass(frozen=True)
class ForestOptions:
    num_trees: int = 2000
    little_bag_size: int = 4
    subsample_fraction: float = 0.5
    subsample_exponent: Optional[float] = None
    split: SplitOptions = field(default_factory=SplitOptions)
    seed: int = 0
    ci_group_sampling: bool = True

    def __post_init__(self):
        if self.num_trees < 1:
            raise InvalidOptions(f"num_trees must be positive, got {self.num_trees}")
        if not 0.0 < self.subsample_fraction < 1.0:
            raise InvalidOptions(f"subsample_fraction must lie in (0, 1), got {self.subsample_fraction}")
        if self.subsample_exponent is not None and not 0.0 < self.subsample_exponent < 1.0:
            raise InvalidOptions(f"subsample_exponent must lie in (0, 1), got {self.subsample_exponent}")
        if not 0 <= self.seed < 2**64:
            raise InvalidOptions(f"seed must be a 64-bit unsigned integer, got {self.seed}")
        if self.ci_group_sampling:
            if self.little_bag_size < 2:
                raise InvalidOptions("little_bag_size must be at least 2")
            if self.num_trees % self.little_bag_size:
                raise InvalidOptions(
                    f"num_trees={self.num_trees} is not a multiple of "
                    f"little_bag_size={self.little_bag_size}"
                )

    def subsample_size(self, n: int) -> int:
        if self.subsample_exponent is not None:
            return int(math.ceil(n ** self.subsample_exponent))
        return int(self.subsample_fraction * n)

    def check(self, n: int) -> int:
        s = self.subsample_size(n)
        if s < 2:
            raise InvalidOptions(f"subsample size {s} is too small for honest splitting")
        if self.ci_group_sampling and s > n // 2:
            raise InvalidOptions(f"subsample size {s} exceeds the half-sample size {n // 2}")
        if s > n:
            raise InvalidOptions(f"subsample size {s} exceeds n={n}")
        return s

    @property
    def n_groups(self) -> int:
        return self.num_trees // self.little_bag_size if self.ci_group_sampling else 0

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ForestOptions":
        d = dict(d)
        d["split"] = SplitOptions(**d["split"])
        return cls(**d)


def default_workers() -> int:
    env = os.environ.get("GRF_THREADS")
    if env:
        return max(1, int(env))
    return os.cpu_count() or 1


# ---------------------------------------------------------------------------
# kernels


@numba.njit(cache=True, nogil=True)
def _leaf_nodes(X, node_offset, feature, threshold, left, right, leaf_start, leaf_end):
    """Global leaf index per (query, tree); -1 where the leaf holds no samples."""
    m = X.shape[0]
    B = node_offset.shape[0] - 1
    out = np.empty((m, B), dtype=np.int64)
    for q in range(m):
        x = X[q]
        for b in range(B):
            base = node_offset[b]
            node = 0
            while feature[base + node] >= 0:
                g = base + node
                if x[feature[g]] <= threshold[g]:
                    node = left[g]
                else:
                    node = right[g]
            g = base + node
            out[q, b] = g if leaf_end[g] > leaf_start[g] else -1
    return out


@numba.njit(cache=True, nogil=True)
def _mask_in_bag(leaves, rows, in_bag):
    for q in range(leaves.shape[0]):
        for b in range(leaves.shape[1]):
            if in_bag[b, rows[q]]:
                leaves[q, b] = -1


@numba.njit(cache=True, nogil=True)
def _weights_from_leaves(leaves, leaf_start, leaf_end, members, n):
    m, B = leaves.shape
    out = np.zeros((m, n))
    used = np.zeros(m, dtype=np.int64)
    for q in range(m):
        for b in range(B):
            g = leaves[q, b]
            if g < 0:
                continue
            size = leaf_end[g] - leaf_start[g]
            inc = 1.0 / size
            for k in range(leaf_start[g], leaf_end[g]):
                out[q, members[k]] += inc
            used[q] += 1
        if used[q] > 0:
            for i in range(n):
                out[q, i] /= used[q]
    return out, used


@numba.njit(cache=True, nogil=True)
def _leaf_means(leaf_row, leaf_start, leaf_end, members, values):
    B = leaf_row.shape[0]
    k = values.shape[1]
    out = np.full((B, k), np.nan)
    for b in range(B):
        g = leaf_row[b]
        if g < 0:
            continue
        size = leaf_end[g] - leaf_start[g]
        for c in range(k):
            acc = 0.0
            for t in range(leaf_start[g], leaf_end[g]):
                acc += values[members[t], c]
            out[b, c] = acc / size
    return out


# ---------------------------------------------------------------------------


@dataclass(eq=False)
class Forest:
    """A trained forest: flat node arrays plus per-tree subsample records.

    ``left``/``right`` index nodes within a tree; ``leaf_start``/``leaf_end``
    index the concatenated ``members`` array. ``groups[b]`` is the little-bag
    id of tree ``b`` (-1 when grouping is off) and ``half_samples[g]`` the
    half-sample shared by group ``g``.
    """

    data: Dataset
    model: MomentModel
    options: ForestOptions
    node_offset: np.ndarray
    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    leaf_start: np.ndarray
    leaf_end: np.ndarray
    members: np.ndarray
    j1_offset: np.ndarray
    j1: np.ndarray
    j2_offset: np.ndarray
    j2: np.ndarray
    groups: np.ndarray
    half_samples: np.ndarray
    split_model: Optional[MomentModel] = None

    @property
    def num_trees(self) -> int:
        return self.node_offset.shape[0] - 1

    @property
    def has_groups(self) -> bool:
        return bool(self.num_trees and self.groups[0] >= 0)

    def tree(self, b: int) -> Tree:
        lo, hi = self.node_offset[b], self.node_offset[b + 1]
        starts = self.leaf_start[lo:hi]
        base = starts[0] if hi > lo else 0
        offsets = np.concatenate([starts, self.leaf_end[hi - 1:hi]]) - base
        m_hi = self.leaf_end[lo:hi].max() if hi > lo else base
        return Tree(
            self.feature[lo:hi], self.threshold[lo:hi], self.left[lo:hi], self.right[lo:hi],
            offsets, self.members[base:m_hi],
        )

    def tree_j1(self, b: int) -> np.ndarray:
        return self.j1[self.j1_offset[b]:self.j1_offset[b + 1]]

    def tree_j2(self, b: int) -> np.ndarray:
        return self.j2[self.j2_offset[b]:self.j2_offset[b + 1]]

    def subsample(self, b: int) -> np.ndarray:
        return np.concatenate([self.tree_j1(b), self.tree_j2(b)])

    @cached_property
    def in_bag(self) -> np.ndarray:
        mask = np.zeros((self.num_trees, self.data.n), dtype=np.bool_)
        for b in range(self.num_trees):
            mask[b, self.tree_j1(b)] = True
            mask[b, self.tree_j2(b)] = True
        return mask

    def leaves(self, X) -> np.ndarray:
        X = _query_matrix(X, self.data.p)
        return _leaf_nodes(
            X, self.node_offset, self.feature, self.threshold, self.left, self.right,
            self.leaf_start, self.leaf_end,
        )

    @classmethod
    def from_trees(cls, data, model, options, trees, j1s, j2s, groups=None,
                   half_samples=None, split_model=None) -> "Forest":
        sizes = np.array([t.n_nodes for t in trees], dtype=np.int64)
        node_offset = np.concatenate([[0], np.cumsum(sizes)]).astype(np.int64)
        member_base = np.concatenate(
            [[0], np.cumsum([t.leaf_members.shape[0] for t in trees])]
        ).astype(np.int64)
        leaf_start = np.concatenate(
            [t.leaf_offsets[:-1] + member_base[b] for b, t in enumerate(trees)]
        ).astype(np.int64)
        leaf_end = np.concatenate(
            [t.leaf_offsets[1:] + member_base[b] for b, t in enumerate(trees)]
        ).astype(np.int64)

        def _cat(parts, dtype):
            parts = [np.asarray(p, dtype=dtype) for p in parts]
            off = np.concatenate([[0], np.cumsum([len(p) for p in parts])]).astype(np.int64)
            return off, np.concatenate(parts).astype(dtype)

        j1_offset, j1 = _cat(j1s, np.int64)
        j2_offset, j2 = _cat(j2s, np.int64)
        B = len(trees)
        return cls(
            data=data,
            model=model,
            options=options,
            node_offset=node_offset,
            feature=np.concatenate([t.feature for t in trees]).astype(np.int64),
            threshold=np.concatenate([t.threshold for t in trees]).astype(np.float64),
            left=np.concatenate([t.left for t in trees]).astype(np.int64),
            right=np.concatenate([t.right for t in trees]).astype(np.int64),
            leaf_start=leaf_start,
            leaf_end=leaf_end,
            members=np.concatenate([t.leaf_members for t in trees]).astype(np.int64),
            j1_offset=j1_offset,
            j1=j1,
            j2_offset=j2_offset,
            j2=j2,
            groups=(np.full(B, -1, dtype=np.int64) if groups is None
                    else np.asarray(groups, dtype=np.int64)),
            half_samples=(np.zeros((0, 0), dtype=np.int64) if half_samples is None
                          else np.asarray(half_samples, dtype=np.int64)),
            split_model=split_model,
        )


def _query_matrix(X, p) -> np.ndarray:
    X = np.ascontiguousarray(np.atleast_2d(np.asarray(X, dtype=np.float64)))
    if X.shape[1] != p:
        raise ValueError(f"query has {X.shape[1]} features, forest expects {p}")
    if not np.all(np.isfinite(X)):
        raise ValueError("query points must be finite")
    return X


def _seed(seed: int, stream: int, index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(stream, index)))


def train_forest(
    data: Dataset,
    model: MomentModel,
    opts: ForestOptions = ForestOptions(),
    split_model: Optional[MomentModel] = None,
    workers: Optional[int] = None,
) -> Forest:
    """Grow ``opts.num_trees`` honest gradient trees.

    ``split_model`` (default: ``model``) supplies the pseudo-outcomes used to
    grow trees, while ``model`` is solved at query time. Passing a
    regression ``split_model`` with a quantile ``model`` gives the
    regression-split quantile forest.
    """
    validate_for_model(data, model.kind)
    split_model = split_model or model
    validate_for_model(data, split_model.kind)
    n = data.n
    s = opts.check(n)
    if n < 4 * opts.split.min_node_size:
        raise InvalidOptions(f"n={n} is below 4 * min_node_size={4 * opts.split.min_node_size}")
    B = opts.num_trees
    ell = opts.little_bag_size
    if opts.ci_group_sampling:
        half = np.stack(
            [_seed(opts.seed, 0, g).choice(n, n // 2, replace=False) for g in range(opts.n_groups)]
        )
        groups = np.arange(B) // ell
    else:
        half = None
        groups = None
    y, w, z = columns(data)
    X = data.features
    levels = split_model.levels()
    code = split_model.code
    n1 = s // 2

    def grow_one(b):
        rng = _seed(opts.seed, 1, b)
        pool = half[groups[b]] if half is not None else n
        sub = rng.choice(pool, s, replace=False)
        j1, j2 = sub[:n1], sub[n1:]
        k_draws, keys = draw_node_randomness(rng, n1, data.p, opts.split)
        parts = _grow(X, y, w, z, code, levels, j1, j2, opts.split.min_node_size,
                      float(opts.split.balance_fraction), k_draws, keys)
        return Tree(*parts), j1, j2

    workers = workers or default_workers()
    if workers == 1:
        results = [grow_one(b) for b in range(B)]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(grow_one, range(B)))
    trees, j1s, j2s = zip(*results)
    return Forest.from_trees(
        data, model, opts, list(trees), j1s, j2s, groups, half,
        split_model=None if split_model == model else split_model,
    )


# ---------------------------------------------------------------------------
# weights and prediction


def _chunks(m, n):
    step = max(1, 4_000_000 // max(n, 1))
    for lo in range(0, m, step):
        yield lo, min(m, lo + step)


def weights_matrix(forest: Forest, X, oob_rows=None):
    """Dense ``(m, n)`` forest weights and the number of contributing trees.

    With ``oob_rows`` (training indices, one per query row) trees whose
    subsample contains that row are skipped.
    """
    X = _query_matrix(X, forest.data.p)
    leaves = forest.leaves(X)
    if oob_rows is not None:
        _mask_in_bag(leaves, np.asarray(oob_rows, dtype=np.int64), forest.in_bag)
    return _weights_from_leaves(leaves, forest.leaf_start, forest.leaf_end,
                                forest.members, forest.data.n)


def compute_weights(forest: Forest, x) -> np.ndarray:
    """Forest weights ``alpha_i(x)`` over the training samples (sum to one)."""
    w, used = weights_matrix(forest, np.asarray(x, dtype=np.float64).reshape(1, -1))
    if used[0] == 0:
        raise NoContributingTrees("every tree's leaf at x is empty")
    return w[0]


def _estimate(model, theta_row, nu_row):
    t = theta_row
    return ParameterEstimate(float(t) if np.ndim(t) == 0 else np.array(t), nu_row)


def predict(forest: Forest, x) -> ParameterEstimate:
    alpha = compute_weights(forest, x)
    theta, nu, status = solve_batch(forest.model, forest.data, alpha[None, :])
    raise_for_status(int(status[0]))
    return _estimate(forest.model, theta[0], nu[0])


def predict_oob(forest: Forest, i: int) -> ParameterEstimate:
    """Prediction at ``X_i`` from the trees whose subsample excludes ``i``."""
    w, used = weights_matrix(forest, forest.data.features[i:i + 1], oob_rows=[i])
    if used[0] == 0:
        raise NoContributingTrees(f"no tree leaves out sample {i}")
    theta, nu, status = solve_batch(forest.model, forest.data, w)
    raise_for_status(int(status[0]), f" at sample {i}")
    return _estimate(forest.model, theta[0], nu[0])


def predict_many(forest: Forest, X, strict: bool = True, oob: bool = False):
    """Batch prediction; returns ``(theta, nu)`` arrays.

    With ``oob=True`` ``X`` is ignored and every training sample gets its
    out-of-bag prediction. When ``strict`` is False, points without
    contributing trees or with an unidentified equation come back as NaN.
    """
    if oob:
        X = forest.data.features
        rows = np.arange(forest.data.n)
    else:
        X = _query_matrix(X, forest.data.p)
        rows = None
    m = X.shape[0]
    k = forest.model.n_theta
    theta = np.empty((m, k)) if forest.model.kind == "quantile" else np.empty(m)
    nu = np.empty((m, forest.model.n_nu))
    for lo, hi in _chunks(m, forest.data.n):
        w, used = weights_matrix(forest, X[lo:hi], None if rows is None else rows[lo:hi])
        t, v, status = solve_batch(forest.model, forest.data, w)
        if strict:
            empty = np.flatnonzero(used == 0)
            if empty.size:
                raise NoContributingTrees(f"no contributing trees at point {lo + empty[0]}")
            bad = np.flatnonzero(status != 0)
            if bad.size:
                raise_for_status(int(status[bad[0]]), f" at point {lo + bad[0]}")
        theta[lo:hi] = t
        nu[lo:hi] = v
    return theta, nu


def tree_leaf_means(forest: Forest, leaf_row, values) -> np.ndarray:
    """Per-tree average of ``values`` over the leaf reached by one query."""
    values = np.ascontiguousarray(values, dtype=np.float64)
    if values.ndim == 1:
        values = values[:, None]
    return _leaf_means(np.asarray(leaf_row, dtype=np.int64), forest.leaf_start,
                       forest.leaf_end, forest.members, values)


# ---------------------------------------------------------------------------
# serialization

_ARRAYS = (
    "node_offset", "feature", "threshold", "left", "right", "leaf_start", "leaf_end",
    "members", "j1_offset", "j1", "j2_offset", "j2", "groups", "half_samples",
)


def _model_dict(model):
    return None if model is None else {"kind": model.kind, "quantiles": list(model.quantiles)}


def _model_from(d):
    return None if d is None else MomentModel(d["kind"], tuple(d["quantiles"]))


def save_forest(forest: Forest, path, extra: Optional[dict] = None) -> None:
    """Write a zip archive of ``meta.json`` plus one ``.npy`` per array.

    Entries carry a fixed timestamp so identical forests give identical bytes.
    """
    meta = {
        "format": "genforest",
        "version": FORMAT_VERSION,
        "model": _model_dict(forest.model),
        "split_model": _model_dict(forest.split_model),
        "options": forest.options.to_dict(),
        "feature_names": list(forest.data.feature_names),
        "roles": [r for r in ("outcome", "treatment", "instrument")
                  if getattr(forest.data, r) is not None],
        "extra": extra or {},
    }
    arrays = {name: getattr(forest, name) for name in _ARRAYS}
    arrays["X"] = forest.data.features
    for role in meta["roles"]:
        arrays[role] = getattr(forest.data, role)
    with zipfile.ZipFile(path, "w", compression=zipfile.ZIP_DEFLATED) as zf:
        info = zipfile.ZipInfo("meta.json", date_time=_ZIP_DATE)
        info.compress_type = zipfile.ZIP_DEFLATED
        zf.writestr(info, json.dumps(meta, sort_keys=True, indent=1))
        for name, arr in arrays.items():
            buf = io.BytesIO()
            np.lib.format.write_array(buf, np.ascontiguousarray(arr), allow_pickle=False)
            info = zipfile.ZipInfo(f"{name}.npy", date_time=_ZIP_DATE)
            info.compress_type = zipfile.ZIP_DEFLATED
            zf.writestr(info, buf.getvalue())


def load_forest(path):
    """Inverse of :func:`save_forest`; returns ``(forest, extra)``."""
    try:
        zf = zipfile.ZipFile(path)
    except zipfile.BadZipFile as exc:
        raise FormatError(f"{path} is not a forest archive") from exc
    with zf:
        meta = json.loads(zf.read("meta.json"))
        if meta.get("format") != "genforest" or "version" not in meta:
            raise FormatError(f"{path} lacks a genforest header")
        if meta["version"] > FORMAT_VERSION:
            raise FormatError(f"unsupported format version {meta['version']}")

        def arr(name):
            return np.lib.format.read_array(io.BytesIO(zf.read(f"{name}.npy")),
                                            allow_pickle=False)

        data = Dataset(
            features=arr("X"),
            feature_names=tuple(meta["feature_names"]),
            **{role: arr(role) for role in meta["roles"]},
        )
        forest = Forest(
            data=data,
            model=_model_from(meta["model"]),
            options=ForestOptions.from_dict(meta["options"]),
            split_model=_model_from(meta["split_model"]),
            **{name: arr(name) for name in _ARRAYS},
        )
    return forest, meta.get("extra", {})
