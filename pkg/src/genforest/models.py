"""Local estimating equations: weighted solvers, split pseudo-outcomes, scores.

A :class:`MomentModel` names one of four score functions ``psi``:

* ``regression``      psi = Y - theta
* ``quantile``        psi = q - 1{Y <= theta}  (one column per quantile level)
* ``partial_effect``  psi = (Y - theta W - nu) * (W, 1)
* ``instrumental``    psi = (Y - theta W - nu) * (Z, 1)

Score vectors are ordered (moment that identifies theta, intercept moment), so
``curvature`` rows line up with ``score_vectors`` columns.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numba
import numpy as np

from .data import Dataset, validate_for_model
from .errors import (
    DegenerateIdentification,
    EmptySupport,
    InvalidOptions,
    SingularCurvature,
    UnsupportedForModel,
)

REGRESSION, QUANTILE, PARTIAL_EFFECT, INSTRUMENTAL = 0, 1, 2, 3
KIND_CODES = {
    "regression": REGRESSION,
    "quantile": QUANTILE,
    "partial_effect": PARTIAL_EFFECT,
    "instrumental": INSTRUMENTAL,
}

DEGENERACY_TOL = 1e-10
SINGULAR_TOL = 1e-12
# absorbs cumulative-sum rounding when comparing the weighted CDF to q
QUANTILE_TOL = 1e-12

OK, EMPTY, DEGENERATE = 0, 1, 2


@dataclass(frozen=True)
class MomentModel:
    kind: str
    quantiles: tuple = ()

    def __post_init__(self):
        if self.kind not in KIND_CODES:
            raise InvalidOptions(f"unknown model kind {self.kind!r}")
        q = tuple(float(v) for v in self.quantiles)
        if self.kind == "quantile":
            if not q:
                raise InvalidOptions("quantile model needs at least one level")
            if any(not 0.0 < v < 1.0 for v in q) or any(b <= a for a, b in zip(q, q[1:])):
                raise InvalidOptions(f"quantile levels must be increasing in (0, 1): {q}")
        elif q:
            raise InvalidOptions(f"{self.kind} model takes no quantile levels")
        object.__setattr__(self, "quantiles", q)

    @property
    def code(self) -> int:
        return KIND_CODES[self.kind]

    @property
    def n_theta(self) -> int:
        return len(self.quantiles) if self.kind == "quantile" else 1

    @property
    def n_nu(self) -> int:
        return 1 if self.kind in ("partial_effect", "instrumental") else 0

    @property
    def score_dim(self) -> int:
        if self.kind == "quantile":
            return len(self.quantiles)
        return 1 + self.n_nu

    @property
    def supports_curvature(self) -> bool:
        return self.kind != "quantile"

    def levels(self) -> np.ndarray:
        return np.asarray(self.quantiles, dtype=np.float64)

    @classmethod
    def regression(cls):
        return cls("regression")

    @classmethod
    def quantile(cls, levels: Sequence[float]):
        return cls("quantile", tuple(levels))

    @classmethod
    def partial_effect(cls):
        return cls("partial_effect")

    @classmethod
    def instrumental(cls):
        return cls("instrumental")


@dataclass(frozen=True)
class ParameterEstimate:
    """``theta`` is a float, or an array of one estimate per quantile level."""

    theta: object
    nu: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "nu", np.asarray(self.nu, dtype=np.float64).reshape(-1))


def columns(data: Dataset):
    """(Y, W, Z) with zeros standing in for absent roles."""
    zeros = np.zeros(data.n)
    y = data.outcome if data.outcome is not None else zeros
    w = data.treatment if data.treatment is not None else zeros
    z = data.instrument if data.instrument is not None else zeros
    return y, w, z


# ---------------------------------------------------------------------------
# node relabeling (called from the tree kernel)


@numba.njit(cache=True, nogil=True)
def _node_quantile(sorted_y, q):
    m = sorted_y.shape[0]
    for k in range(m):
        if (k + 1) / m >= q - QUANTILE_TOL:
            return sorted_y[k]
    return sorted_y[m - 1]


@numba.njit(cache=True, nogil=True)
def relabel_node(kind, levels, y, w, z, members):
    """Pseudo-outcomes for one parent node under uniform weights.

    Returns ``(rho, ok)``. ``rho`` has one row per member; it has a single
    column except for multi-quantile models, where it is a one-hot encoding of
    the inter-quantile class. ``ok`` is False when the parent equation is not
    identified.
    """
    m = members.shape[0]
    if kind == QUANTILE and levels.shape[0] > 1:
        d = levels.shape[0] + 1
    else:
        d = 1
    rho = np.zeros((m, d))
    inv_m = 1.0 / m
    if kind == REGRESSION:
        ybar = 0.0
        for i in range(m):
            ybar += y[members[i]]
        ybar *= inv_m
        for i in range(m):
            rho[i, 0] = y[members[i]] - ybar
        return rho, True
    if kind == QUANTILE:
        yv = np.empty(m)
        for i in range(m):
            yv[i] = y[members[i]]
        sy = np.sort(yv)
        if d == 1:
            theta = _node_quantile(sy, levels[0])
            for i in range(m):
                rho[i, 0] = 1.0 if yv[i] > theta else 0.0
            return rho, True
        thetas = np.empty(levels.shape[0])
        for k in range(levels.shape[0]):
            thetas[k] = _node_quantile(sy, levels[k])
        for i in range(m):
            c = 0
            for k in range(thetas.shape[0]):
                if yv[i] >= thetas[k]:
                    c += 1
            rho[i, c] = 1.0
        return rho, True
    ybar = 0.0
    wbar = 0.0
    zbar = 0.0
    for i in range(m):
        j = members[i]
        ybar += y[j]
        wbar += w[j]
        zbar += z[j]
    ybar *= inv_m
    wbar *= inv_m
    zbar *= inv_m
    if kind == PARTIAL_EFFECT:
        vww = 0.0
        vwy = 0.0
        for i in range(m):
            j = members[i]
            dw = w[j] - wbar
            vww += dw * dw
            vwy += dw * (y[j] - ybar)
        vww *= inv_m
        vwy *= inv_m
        if abs(vww) < DEGENERACY_TOL:
            return rho, False
        beta = vwy / vww
        for i in range(m):
            j = members[i]
            dw = w[j] - wbar
            rho[i, 0] = dw * (y[j] - ybar - dw * beta) / vww
        return rho, True
    # instrumental
    czw = 0.0
    czy = 0.0
    for i in range(m):
        j = members[i]
        dz = z[j] - zbar
        czw += dz * (w[j] - wbar)
        czy += dz * (y[j] - ybar)
    czw *= inv_m
    czy *= inv_m
    if abs(czw) < DEGENERACY_TOL:
        return rho, False
    tau = czy / czw
    for i in range(m):
        j = members[i]
        rho[i, 0] = (z[j] - zbar) * ((y[j] - ybar) - (w[j] - wbar) * tau)
    return rho, True


def pseudo_outcomes(model: MomentModel, data: Dataset, node_members) -> np.ndarray:
    """Split labels for the samples of one parent node.

    Returns real pseudo-outcomes, or integer class labels for a quantile model
    with several levels. Raises :class:`DegenerateIdentification` when the
    parent equation has no unique root.
    """
    validate_for_model(data, model.kind)
    members = np.asarray(node_members, dtype=np.int64)
    if members.shape[0] < 2:
        raise ValueError("a parent node needs at least two members")
    y, w, z = columns(data)
    rho, ok = relabel_node(model.code, model.levels(), y, w, z, members)
    if not ok:
        raise DegenerateIdentification("parent node moment matrix is singular")
    if rho.shape[1] > 1:
        return np.argmax(rho, axis=1)
    return rho[:, 0]


# ---------------------------------------------------------------------------
# weighted solvers


def solve_batch(model: MomentModel, data: Dataset, weights: np.ndarray):
    """Solve the weighted equation for every row of an ``(m, n)`` weight matrix.

    Returns ``(theta, nu, status)``; ``theta`` is ``(m,)`` or ``(m, K)`` for
    quantile models, ``nu`` is ``(m, n_nu)`` and ``status`` flags rows that are
    empty or not identified (their estimates are NaN).
    """
    A = np.atleast_2d(np.asarray(weights, dtype=np.float64))
    m = A.shape[0]
    y, w, z = columns(data)
    mass = A.sum(axis=1)
    status = np.where(mass > 0, OK, EMPTY)
    nu = np.full((m, model.n_nu), np.nan)
    kind = model.kind
    if kind == "regression":
        theta = A @ y
    elif kind == "quantile":
        order = np.argsort(y, kind="stable")
        cum = np.cumsum(A[:, order], axis=1)
        ys = y[order]
        theta = np.empty((m, len(model.quantiles)))
        for k, q in enumerate(model.quantiles):
            idx = np.argmax(cum >= q - QUANTILE_TOL, axis=1)
            theta[:, k] = ys[idx]
    else:
        ybar = A @ y
        wbar = A @ w
        if kind == "partial_effect":
            den = A @ (w * w) - wbar * wbar
            num = A @ (w * y) - wbar * ybar
        else:
            zbar = A @ z
            den = A @ (z * w) - zbar * wbar
            num = A @ (z * y) - zbar * ybar
        bad = np.abs(den) < DEGENERACY_TOL
        status = np.where((status == OK) & bad, DEGENERATE, status)
        with np.errstate(divide="ignore", invalid="ignore"):
            theta = num / np.where(bad, np.nan, den)
        nu[:, 0] = ybar - theta * wbar
    theta = np.where(
        (status == OK)[:, None] if np.ndim(theta) == 2 else status == OK, theta, np.nan
    )
    return theta, nu, status


def raise_for_status(status: int, where: str = ""):
    if status == EMPTY:
        raise EmptySupport(f"all weights are zero{where}")
    if status == DEGENERATE:
        raise DegenerateIdentification(f"identifying moment vanishes{where}")


def solve_weighted(model: MomentModel, data: Dataset, weights) -> ParameterEstimate:
    """Exact root of ``sum_i weights_i * psi(O_i) = 0``."""
    validate_for_model(data, model.kind)
    a = np.asarray(weights, dtype=np.float64)
    if a.shape != (data.n,):
        raise ValueError(f"expected {data.n} weights, got shape {a.shape}")
    if np.any(a < 0):
        raise ValueError("weights must be nonnegative")
    theta, nu, status = solve_batch(model, data, a[None, :])
    raise_for_status(int(status[0]))
    t = theta[0]
    return ParameterEstimate(float(t) if np.ndim(t) == 0 else np.array(t), nu[0])


# ---------------------------------------------------------------------------
# scores and curvature


def score_matrix(model: MomentModel, y, w, z, theta, nu) -> np.ndarray:
    """``psi`` evaluated at one parameter value for every sample, shape ``(n, k)``."""
    if model.kind == "regression":
        return (y - theta)[:, None]
    if model.kind == "quantile":
        th = np.atleast_1d(np.asarray(theta, dtype=np.float64))
        return np.asarray(model.quantiles)[None, :] - (y[:, None] <= th[None, :])
    resid = y - theta * w - nu[0]
    first = w if model.kind == "partial_effect" else z
    return np.column_stack([resid * first, resid])


def score_vectors(model: MomentModel, data: Dataset, members, estimate: ParameterEstimate):
    """Per-sample score vectors for ``members`` at ``estimate``, shape ``(len, k)``."""
    validate_for_model(data, model.kind)
    idx = np.asarray(members, dtype=np.int64)
    y, w, z = columns(data)
    return score_matrix(model, y[idx], w[idx], z[idx], estimate.theta, estimate.nu)


def curvature(model: MomentModel, data: Dataset, weights, estimate: ParameterEstimate = None):
    """Local moment matrix ``V`` built from the forest weights.

    The estimate is accepted for interface symmetry; all three supported
    models have a curvature that does not depend on it.
    """
    if not model.supports_curvature:
        raise UnsupportedForModel("quantile curvature needs a conditional density estimate")
    a = np.asarray(weights, dtype=np.float64)
    y, w, z = columns(data)
    if model.kind == "regression":
        V = np.ones((1, 1))
    elif model.kind == "partial_effect":
        sw = a @ w
        V = np.array([[a @ (w * w), sw], [sw, 1.0]])
    else:
        V = np.array([[a @ (z * w), a @ z], [a @ w, 1.0]])
    if abs(np.linalg.det(V)) < SINGULAR_TOL:
        raise SingularCurvature(f"curvature determinant {np.linalg.det(V):.3g}")
    return V
