"""Simulation designs with known ground truth, and evaluation metrics."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.special import expit, ndtri

from .data import Dataset
from .errors import InvalidOptions, LengthMismatch, UnknownDesign

DESIGNS = (
    "quantile_mean_shift",
    "quantile_scale_shift",
    "causal",
    "iv",
    "iv_diagnostic_1",
    "iv_diagnostic_2",
)

# Diagnostic IV designs: W = Z * Q with Z ~ Bern(2/3), Q ~ Bern(3/4) and
# noise eps = c(x) * (Q - 3/4) + eta. The compliance loading c(x) moves the
# correlation between W and eps without touching the instrument.
DIAG_Z_PROB = 2.0 / 3.0
DIAG_Q_PROB = 0.75
DIAG1_LOADING = 2.0  # c(x) for x1 > 1/3 (zero below)
DIAG2_LOADINGS = (1.0, -1.0)  # c(x) for x1 <= 0 and x1 > 0


@dataclass(frozen=True)
class DesignSpec:
    kind: str
    n: int
    p: int
    seed: int = 0
    confounding: bool = False
    heterogeneity: bool = True
    omega: float = 1.0
    kappa_tau: int = 2
    additive: bool = True
    nuisance: bool = True
    nuisance_scale: float = 3.0

    def __post_init__(self):
        if self.kind not in DESIGNS:
            raise UnknownDesign(f"unknown design {self.kind!r}; choose from {', '.join(DESIGNS)}")
        if self.n < 1 or self.p < 1:
            raise InvalidOptions(f"need n >= 1 and p >= 1, got n={self.n}, p={self.p}")
        if self.kind == "causal" and self.p < 3:
            raise InvalidOptions("the causal design needs p >= 3")
        if self.kind == "iv":
            need = max(self.kappa_tau, 6 if self.nuisance else 1)
            if self.p < need or self.kappa_tau < 1:
                raise InvalidOptions(f"the iv design needs p >= {need}")

    def params(self) -> dict:
        d = asdict(self)
        d.pop("n")
        d.pop("p")
        d.pop("seed")
        return d


@dataclass(frozen=True)
class SimulatedData:
    data: Dataset
    truth: Callable  # truth(X) or truth(X, q) for quantile designs
    sample_x: Callable  # sample_x(m, rng) draws fresh feature rows
    info: dict = field(default_factory=dict)


def _uniform_cube(low, high, p):
    def sample(m, rng):
        return rng.uniform(low, high, size=(m, p))

    return sample


def _normal_cube(p):
    def sample(m, rng):
        return rng.standard_normal((m, p))

    return sample


# ---------------------------------------------------------------------------


def gen_quantile(spec: DesignSpec) -> SimulatedData:
    if spec.kind not in ("quantile_mean_shift", "quantile_scale_shift"):
        raise UnknownDesign(f"{spec.kind} is not a quantile design")
    rng = np.random.default_rng(spec.seed)
    sample = _uniform_cube(-1.0, 1.0, spec.p)
    X = sample(spec.n, rng)
    shift = spec.kind == "quantile_mean_shift"

    def loc_scale(X):
        step = (np.asarray(X)[..., 0] > 0).astype(float)
        return (0.8 * step, np.ones_like(step)) if shift else (np.zeros_like(step), 1.0 + step)

    mu, sd = loc_scale(X)
    Y = mu + sd * rng.standard_normal(spec.n)

    def truth(X, q):
        mu, sd = loc_scale(np.atleast_2d(X))
        return mu + sd * ndtri(q)

    return SimulatedData(Dataset(X, Y), truth, sample, {})


def smooth_step(u):
    return 1.0 + 1.0 / (1.0 + np.exp(-20.0 * (np.asarray(u) - 1.0 / 3.0)))


def beta24_density(x):
    x = np.asarray(x, dtype=float)
    return 20.0 * x * (1.0 - x) ** 3


def causal_functions(spec: DesignSpec):
    """``(tau, propensity, main_effect)`` for the causal design."""

    def tau(X):
        X = np.atleast_2d(X)
        if spec.heterogeneity:
            return smooth_step(X[:, 0]) * smooth_step(X[:, 1])
        return np.zeros(X.shape[0])

    def propensity(X):
        X = np.atleast_2d(X)
        if spec.confounding:
            return 0.25 * (1.0 + beta24_density(X[:, 2]))
        return np.full(X.shape[0], 0.5)

    def main_effect(X):
        X = np.atleast_2d(X)
        if spec.confounding:
            return 2.0 * X[:, 2] - 1.0
        return np.zeros(X.shape[0])

    return tau, propensity, main_effect


def gen_causal(spec: DesignSpec) -> SimulatedData:
    if spec.kind != "causal":
        raise UnknownDesign(f"{spec.kind} is not the causal design")
    rng = np.random.default_rng(spec.seed)
    sample = _uniform_cube(0.0, 1.0, spec.p)
    X = sample(spec.n, rng)
    tau, e, m = causal_functions(spec)
    W = (rng.random(spec.n) < e(X)).astype(float)
    Y = m(X) + (W - 0.5) * tau(X) + rng.standard_normal(spec.n)
    return SimulatedData(Dataset(X, Y, W), tau, sample, {})


def iv_functions(spec: DesignSpec):
    """``(tau, mu)`` for the intention-to-treat IV design."""
    k = spec.kappa_tau

    def tau(X):
        X = np.atleast_2d(X)[:, :k]
        if spec.additive:
            return np.maximum(X, 0.0).sum(axis=1)
        return np.maximum(X.sum(axis=1), 0.0)

    def mu(X):
        X = np.atleast_2d(X)
        if not spec.nuisance:
            return np.zeros(X.shape[0])
        c = spec.nuisance_scale
        if spec.additive:
            return c * np.maximum(X[:, 4], 0.0) + c * np.maximum(X[:, 5], 0.0)
        return c * np.maximum(X[:, 4] + X[:, 5], 0.0)

    return tau, mu


def gen_iv(spec: DesignSpec) -> SimulatedData:
    if spec.kind != "iv":
        raise UnknownDesign(f"{spec.kind} is not the iv design")
    rng = np.random.default_rng(spec.seed)
    sample = _normal_cube(spec.p)
    X = sample(spec.n, rng)
    eps = rng.standard_normal(spec.n)
    Z = (rng.random(spec.n) < 1.0 / 3.0).astype(float)
    Q = (rng.random(spec.n) < expit(spec.omega * eps)).astype(float)
    W = Z * Q
    tau, mu = iv_functions(spec)
    Y = mu(X) + (W - 0.5) * tau(X) + eps
    return SimulatedData(Dataset(X, Y, W, Z), tau, sample, {"z_prob": 1.0 / 3.0})


def diagnostic_functions(kind: str):
    """``(tau, loading)``: causal effect and compliance loading ``c(x)``."""
    if kind == "iv_diagnostic_1":

        def tau(X):
            return 2.0 * (np.atleast_2d(X)[:, 0] > -1.0 / 3.0)

        def loading(X):
            return DIAG1_LOADING * (np.atleast_2d(X)[:, 0] > 1.0 / 3.0)

    elif kind == "iv_diagnostic_2":

        def tau(X):
            return 1.0 * (np.atleast_2d(X)[:, 0] > 0.0)

        def loading(X):
            lo, hi = DIAG2_LOADINGS
            return np.where(np.atleast_2d(X)[:, 0] > 0.0, hi, lo)

    else:
        raise UnknownDesign(f"{kind} is not a diagnostic IV design")
    return tau, loading


def gen_iv_diagnostic(spec: DesignSpec) -> SimulatedData:
    """Diagnostic IV designs on ``[-1, 1]^p``.

    Design 1: the effect jumps from 0 to 2 at ``x1 = -1/3`` while the
    compliance loading switches on at ``x1 = +1/3``, so the raw W-Y
    association jumps at both points. Design 2: the effect jumps from 0 to 1
    at ``x1 = 0`` and the loading flips from +1 to -1 there, which leaves the
    joint law of (W, Y) identical on both sides.
    """
    tau, loading = diagnostic_functions(spec.kind)
    rng = np.random.default_rng(spec.seed)
    sample = _uniform_cube(-1.0, 1.0, spec.p)
    X = sample(spec.n, rng)
    Z = (rng.random(spec.n) < DIAG_Z_PROB).astype(float)
    Q = (rng.random(spec.n) < DIAG_Q_PROB).astype(float)
    W = Z * Q
    eps = loading(X) * (Q - DIAG_Q_PROB) + rng.standard_normal(spec.n)
    Y = (W - 0.5) * tau(X) + eps
    info = {
        "z_prob": DIAG_Z_PROB,
        "q_prob": DIAG_Q_PROB,
        "noise": "eps = c(x) * (Q - q_prob) + N(0, 1)",
        "loading": (
            {"x1<=1/3": 0.0, "x1>1/3": DIAG1_LOADING}
            if spec.kind == "iv_diagnostic_1"
            else {"x1<=0": DIAG2_LOADINGS[0], "x1>0": DIAG2_LOADINGS[1]}
        ),
    }
    return SimulatedData(Dataset(X, Y, W, Z), tau, sample, info)


def generate(spec: DesignSpec) -> SimulatedData:
    if spec.kind.startswith("quantile"):
        return gen_quantile(spec)
    if spec.kind == "causal":
        return gen_causal(spec)
    if spec.kind == "iv":
        return gen_iv(spec)
    return gen_iv_diagnostic(spec)


def diagnostic_moment_check(kind: str, n: int = 100_000, seed: int = 0) -> dict:
    """Monte Carlo moments of (W, Y) on either side of the design's thresholds.

    Returns the side-by-side differences of E[W], E[Y], E[WY] and E[Y^2];
    for design 2 these should all vanish, for design 1 E[WY] should jump at
    both thresholds.
    """
    spec = DesignSpec(kind, n=n, p=1, seed=seed)
    sim = gen_iv_diagnostic(spec)
    x1 = sim.data.features[:, 0]
    W, Y = sim.data.treatment, sim.data.outcome
    cuts = (-1.0 / 3.0, 1.0 / 3.0) if kind == "iv_diagnostic_1" else (0.0,)
    edges = (-1.0,) + cuts + (1.0,)
    out = {}
    for k, c in enumerate(cuts):
        lo = (x1 > edges[k]) & (x1 <= c)
        hi = (x1 > c) & (x1 <= edges[k + 2])
        out[f"{c:+.3f}"] = {
            name: float(np.mean(f[hi]) - np.mean(f[lo]))
            for name, f in (("W", W), ("Y", Y), ("WY", W * Y), ("Y2", Y * Y))
        }
    return out


# ---------------------------------------------------------------------------
# metrics


def mse(estimates: Sequence[float], truths: Sequence[float]) -> float:
    a = np.asarray(estimates, dtype=float)
    b = np.asarray(truths, dtype=float)
    if a.shape != b.shape:
        raise LengthMismatch(f"{a.shape} estimates vs {b.shape} truths")
    if a.size == 0:
        raise LengthMismatch("no test points")
    return float(np.mean((a - b) ** 2))


def coverage(intervals, targets) -> float:
    """Fraction of targets inside their (closed) interval."""
    intervals = list(intervals)
    targets = list(targets)
    if len(intervals) != len(targets):
        raise LengthMismatch(f"{len(intervals)} intervals vs {len(targets)} targets")
    if not intervals:
        raise LengthMismatch("no intervals")
    hits = sum(ci.lower <= t <= ci.upper for ci, t in zip(intervals, targets))
    return hits / len(intervals)
