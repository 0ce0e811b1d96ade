"""Delta-method confidence intervals with bootstrap-of-little-bags variances.

For a query ``x`` the forest score ``Psi = sum_i alpha_i(x) psi(O_i)`` is a
regression-forest-like average of per-tree scores ``Psi_b``. Trees sharing a
half-sample form a little bag; the spread of bag means around the forest
mean, corrected for the within-bag Monte Carlo noise, estimates ``Var(Psi)``:

    H = between - within / (ell - 1)

The variance of ``theta`` then follows from the sandwich
``e0' V^-1 H V^-T e0`` with ``V`` the local moment matrix. With few trees the
difference can come out negative; by default the projected variance is
replaced by its posterior mean under a flat prior on ``[0, inf)``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Optional

import math

import numpy as np
from scipy.special import log_ndtr, ndtri

from .errors import (
    GroupsUnavailable,
    InvalidOptions,
    LengthMismatch,
    NoContributingTrees,
    SingularCurvature,
    TooFewGroups,
    UnsupportedForModel,
)
from .forest import (
    Forest,
    ForestOptions,
    _weights_from_leaves,
    predict_many,
    train_forest,
    tree_leaf_means,
)
from .models import (
    SINGULAR_TOL,
    MomentModel,
    ParameterEstimate,
    columns,
    curvature,
    raise_for_status,
    score_matrix,
    solve_batch,
)


@dataclass(frozen=True)
class VarianceEstimate:
    sigma_sq: float
    H_hat: np.ndarray
    V_hat: np.ndarray
    truncated: bool
    estimate: Optional[ParameterEstimate] = None

    @property
    def std_err(self) -> float:
        return float(np.sqrt(self.sigma_sq))


@dataclass(frozen=True)
class ConfidenceInterval:
    lower: float
    upper: float
    level: float

    def __contains__(self, value) -> bool:
        return self.lower <= value <= self.upper


@dataclass(frozen=True)
class GroupScores:
    scores: np.ndarray  # (B, k), NaN rows for trees whose leaf at x is empty
    groups: np.ndarray  # (B,) little-bag id per tree


def group_scores(forest: Forest, x, estimate: ParameterEstimate, leaf_row=None) -> GroupScores:
    """Per-tree scores ``Psi_b`` at ``x`` evaluated at ``estimate``."""
    if not forest.has_groups:
        raise GroupsUnavailable("forest was trained without little-bag grouping")
    if leaf_row is None:
        leaf_row = forest.leaves(np.asarray(x, dtype=np.float64).reshape(1, -1))[0]
    y, w, z = columns(forest.data)
    psi = score_matrix(forest.model, y, w, z, estimate.theta, estimate.nu)
    return GroupScores(tree_leaf_means(forest, leaf_row, psi), forest.groups.copy())


def _complete_groups(scores, groups, ell):
    scores = np.asarray(scores, dtype=np.float64)
    if scores.ndim == 1:
        scores = scores[:, None]
    groups = np.asarray(groups)
    if scores.shape[0] != groups.shape[0]:
        raise LengthMismatch("one group id per tree score is required")
    live = ~np.isnan(scores).any(axis=1)
    kept = []
    for g in np.unique(groups[live]):
        block = scores[live & (groups == g)]
        if block.shape[0] == ell:
            kept.append(block)
    if len(kept) < 2:
        raise TooFewGroups(f"{len(kept)} complete little bags, need at least 2")
    return np.stack(kept)  # (G, ell, k)


def anova_terms(scores, groups, ell: int):
    """Between-bag and within-bag second-moment matrices."""
    if ell < 2:
        raise InvalidOptions("little bags need at least two trees")
    return _anova(_complete_groups(scores, groups, ell), ell)


def _anova(S, ell):
    bag_means = S.mean(axis=1)
    grand = bag_means.mean(axis=0)
    dev = bag_means - grand
    between = np.einsum("gi,gj->ij", dev, dev) / S.shape[0]
    inner = S - bag_means[:, None, :]
    within = np.einsum("gbi,gbj->ij", inner, inner) / (S.shape[0] * ell)
    return between, within


def blb_variance(scores, groups, ell: int):
    """Bootstrap-of-little-bags estimate of ``Var(Psi)``; returns ``(H, truncated)``.

    Negative diagonal entries are floored at zero together with their
    row and column, and any remaining negative eigenvalues are clipped.
    """
    between, within = anova_terms(scores, groups, ell)
    return _truncate(between - within / (ell - 1))


def _truncate(H):
    H = 0.5 * (H + H.T)
    neg = np.diag(H) < 0
    truncated = bool(neg.any())
    if truncated:
        H[neg, :] = 0.0
        H[:, neg] = 0.0
    if H.shape[0] > 1:
        vals, vecs = np.linalg.eigh(H)
        if vals.min() < 0:
            truncated = True
            H = (vecs * np.clip(vals, 0, None)) @ vecs.T
            H = 0.5 * (H + H.T)
    return H, truncated


def _first_row_of_inverse(V):
    V = np.atleast_2d(V)
    if abs(np.linalg.det(V)) < SINGULAR_TOL:
        raise SingularCurvature("curvature matrix is singular")
    return np.linalg.inv(V)[0]


def sandwich(V, H) -> float:
    """``e0' V^-1 H V^-T e0``: variance of the first coordinate."""
    a = _first_row_of_inverse(V)
    return float(max(a @ np.atleast_2d(H) @ a, 0.0))


def flat_prior_variance(between: float, noise: float, n_groups: int, ell: int) -> float:
    """Posterior mean of a variance component constrained to ``[0, inf)``.

    ``between`` is the mean square of the bag means and ``noise`` its Monte
    Carlo part (within / (ell - 1)), so ``between - noise`` is the raw
    estimate. The raw estimate is taken as Gaussian around the true value
    with the chi-square standard error of the two mean squares; under a flat
    prior on the nonnegative half-line the posterior is that Gaussian
    truncated at zero.
    """
    raw = between - noise
    # E[between] >= E[noise], so the larger one is the better plug-in scale
    tau_sq = max(between, noise)
    se = math.sqrt(2.0 / n_groups * tau_sq**2 + 2.0 / (n_groups * (ell - 1)) * noise**2)
    if se == 0.0:
        return max(raw, 0.0)
    r = raw / se
    mills = math.exp(-0.5 * r * r - 0.5 * math.log(2 * math.pi) - float(log_ndtr(r)))
    return max(raw + se * mills, 0.0)


_CURVATURE_MOMENTS = {
    "partial_effect": ("ww", "w"),
    "instrumental": ("zw", "z", "w"),
}


def fit_curvature_forests(forest: Forest, opts: ForestOptions) -> dict:
    """Separate regression forests for the entries of ``V``.

    An alternative to reading ``V`` off the main forest's weights.
    """
    kind = forest.model.kind
    if kind not in _CURVATURE_MOMENTS:
        return {}
    y, w, z = columns(forest.data)
    targets = {"ww": w * w, "w": w, "zw": z * w, "z": z}
    reg = MomentModel.regression()
    return {
        key: train_forest(forest.data.replace(outcome=targets[key], treatment=None,
                                              instrument=None), reg, opts)
        for key in _CURVATURE_MOMENTS[kind]
    }


def _curvature_from_forests(kind, forests, x):
    m = {k: float(predict_many(f, x)[0][0]) for k, f in forests.items()}
    if kind == "partial_effect":
        return np.array([[m["ww"], m["w"]], [m["w"], 1.0]])
    return np.array([[m["zw"], m["z"]], [m["w"], 1.0]])


CORRECTIONS = ("flat_prior", "truncate")


def variance_at(
    forest: Forest,
    x,
    curvature_forests: Optional[Mapping[str, Forest]] = None,
    correction: str = "flat_prior",
) -> VarianceEstimate:
    """Point estimate and sandwich variance of ``theta`` at ``x``.

    ``correction="truncate"`` plugs the truncated ``H`` into the sandwich.
    ``"flat_prior"`` projects the bag ANOVA onto the sandwich direction and
    uses the posterior mean of the resulting scalar variance, which stays
    positive when few trees make the raw difference negative.
    """
    if correction not in CORRECTIONS:
        raise InvalidOptions(f"correction must be one of {CORRECTIONS}, got {correction!r}")
    model = forest.model
    if not model.supports_curvature:
        raise UnsupportedForModel("confidence intervals are not available for quantile forests")
    if not forest.has_groups:
        raise GroupsUnavailable("forest was trained without little-bag grouping")
    x = np.asarray(x, dtype=np.float64).reshape(1, -1)
    leaf_row = forest.leaves(x)
    alpha, used = _weights_from_leaves(leaf_row, forest.leaf_start, forest.leaf_end,
                                       forest.members, forest.data.n)
    if used[0] == 0:
        raise NoContributingTrees("every tree's leaf at x is empty")
    theta, nu, status = solve_batch(model, forest.data, alpha)
    raise_for_status(int(status[0]))
    est = ParameterEstimate(float(theta[0]), nu[0])
    gs = group_scores(forest, x, est, leaf_row=leaf_row[0])
    ell = forest.options.little_bag_size
    S = _complete_groups(gs.scores, gs.groups, ell)
    between, within = _anova(S, ell)
    H, truncated = _truncate(between - within / (ell - 1))
    if curvature_forests:
        V = _curvature_from_forests(model.kind, curvature_forests, x)
    else:
        V = curvature(model, forest.data, alpha[0], est)
    if correction == "truncate":
        sigma_sq = sandwich(V, H)
    else:
        a = _first_row_of_inverse(V)
        sigma_sq = flat_prior_variance(float(a @ between @ a), float(a @ within @ a) / (ell - 1),
                                       S.shape[0], ell)
    return VarianceEstimate(sigma_sq, H, V, truncated, est)


def normal_quantile(p: float) -> float:
    return float(ndtri(p))


def confidence_interval(estimate, variance, level: float = 0.95) -> ConfidenceInterval:
    """Gaussian interval ``theta +- z * sigma``.

    ``estimate`` may be a :class:`ParameterEstimate` or a float and
    ``variance`` a :class:`VarianceEstimate` or ``sigma^2``.
    """
    if not 0.0 < level < 1.0:
        raise InvalidOptions(f"level must lie in (0, 1), got {level}")
    theta = estimate.theta if isinstance(estimate, ParameterEstimate) else estimate
    sigma_sq = variance.sigma_sq if isinstance(variance, VarianceEstimate) else variance
    if sigma_sq < 0:
        raise InvalidOptions("variance must be nonnegative")
    half = normal_quantile(1.0 - (1.0 - level) / 2.0) * np.sqrt(sigma_sq)
    return ConfidenceInterval(float(theta - half), float(theta + half), level)
