import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from genforest.errors import InvalidOptions, LengthMismatch, UnknownDesign
from genforest.inference import ConfidenceInterval
from genforest.simulation import (
    DESIGNS,
    DIAG_Q_PROB,
    DIAG_Z_PROB,
    DesignSpec,
    beta24_density,
    causal_functions,
    coverage,
    diagnostic_moment_check,
    generate,
    iv_functions,
    mse,
    smooth_step,
)

Z90 = 1.2815515655446004


# -- truth values -------------------------------------------------------------


def test_quantile_truths():
    scale = generate(DesignSpec("quantile_scale_shift", n=10, p=2))
    assert scale.truth([[0.5, 0.0]], 0.9)[0] == pytest.approx(2 * Z90, abs=1e-4)
    shift = generate(DesignSpec("quantile_mean_shift", n=10, p=2))
    assert shift.truth([[-0.5, 0.0]], 0.5)[0] == pytest.approx(0.0, abs=1e-12)
    assert shift.truth([[0.5, 0.0]], 0.5)[0] == pytest.approx(0.8)


def test_causal_functions():
    assert smooth_step(1 / 3) == 1.5
    tau, e, m = causal_functions(DesignSpec("causal", n=1, p=3, confounding=True))
    expect = (1 + 1 / (1 + math.exp(-40 / 3))) ** 2
    assert tau([[1.0, 1.0, 0.5]])[0] == pytest.approx(expect, abs=1e-12)
    assert tau([[1.0, 1.0, 0.5]])[0] == pytest.approx(3.99999, abs=1e-3)
    np.testing.assert_allclose(e([[0.2, 0.2, 0.0], [0.2, 0.2, 1.0]]), [0.25, 0.25])
    assert m([[0, 0, 0.75]])[0] == 0.5


def test_beta_density_integrates_to_one():
    x = np.linspace(0, 1, 200001)
    assert np.trapezoid(beta24_density(x), x) == pytest.approx(1.0, abs=1e-8)


def test_iv_truths():
    add, _ = iv_functions(DesignSpec("iv", n=1, p=6, kappa_tau=2))
    non, _ = iv_functions(DesignSpec("iv", n=1, p=6, kappa_tau=2, additive=False))
    x = [[1.0, -1.0, 0, 0, 0, 0]]
    assert add(x)[0] == 1.0
    assert non(x)[0] == 0.0


def test_diagnostic_truths():
    d1 = generate(DesignSpec("iv_diagnostic_1", n=10, p=3))
    pts = np.zeros((3, 3))
    pts[:, 0] = [-0.6, 0.0, 0.6]
    assert d1.truth(pts).tolist() == [0.0, 2.0, 2.0]
    d2 = generate(DesignSpec("iv_diagnostic_2", n=10, p=3))
    assert d2.truth(pts[[0, 2]] * [5 / 6, 1, 1]).tolist() == [0.0, 1.0]


@pytest.mark.parametrize("kind", [k for k in DESIGNS if not k.startswith("quantile")])
def test_truth_matches_closed_form(kind, rng):
    spec = DesignSpec(kind, n=5, p=8, confounding=True)
    sim = generate(spec)
    X = sim.sample_x(100, rng)
    t = sim.truth(X)
    x1, x2 = X[:, 0], X[:, 1]
    if kind == "causal":
        s = lambda u: 1 + 1 / (1 + np.exp(-20 * (u - 1 / 3)))  # noqa: E731
        ref = s(x1) * s(x2)
    elif kind == "iv":
        ref = np.maximum(x1, 0) + np.maximum(x2, 0)
    elif kind == "iv_diagnostic_1":
        ref = np.where(x1 > -1 / 3, 2.0, 0.0)
    else:
        ref = np.where(x1 > 0, 1.0, 0.0)
    assert np.array_equal(t, ref)


# -- generators ---------------------------------------------------------------


@pytest.mark.parametrize("kind", DESIGNS)
def test_generators_are_seeded(kind):
    a = generate(DesignSpec(kind, n=50, p=6, seed=1)).data
    b = generate(DesignSpec(kind, n=50, p=6, seed=1)).data
    c = generate(DesignSpec(kind, n=50, p=6, seed=2)).data
    assert a.outcome.tobytes() == b.outcome.tobytes()
    assert a.features.tobytes() == b.features.tobytes()
    assert a.outcome.tobytes() != c.outcome.tobytes()


def _within(sample, target, sd, k=4.0):
    assert abs(np.mean(sample) - target) <= k * sd / math.sqrt(len(sample))


def test_iv_marginals():
    n = 100_000
    d = generate(DesignSpec("iv", n=n, p=6, seed=11, omega=0.0)).data
    _within(d.instrument, 1 / 3, math.sqrt(2 / 9))
    # omega = 0: Q ~ Bern(1/2) independent of noise, so E[W] = 1/6
    _within(d.treatment, 1 / 6, math.sqrt(5 / 36))
    _within(d.features[:, 0], 0.0, 1.0)
    _within(d.features[:, 3] ** 2, 1.0, math.sqrt(2))
    assert np.all(d.treatment <= d.instrument)


def test_causal_marginals():
    n = 100_000
    d = generate(DesignSpec("causal", n=n, p=3, seed=5, confounding=True)).data
    _within(d.features[:, 0], 0.5, math.sqrt(1 / 12))
    # E[e(X)] = 1/4 (1 + 1) = 1/2 because the beta density integrates to one
    _within(d.treatment, 0.5, 0.5)


def test_quantile_marginals():
    n = 100_000
    d = generate(DesignSpec("quantile_scale_shift", n=n, p=2, seed=5)).data
    _within(d.features[:, 0], 0.0, math.sqrt(1 / 3))
    # E[Y^2] = (1 + 4) / 2 and E[Y^4] = 3 (1 + 16) / 2
    _within(d.outcome ** 2, 2.5, math.sqrt(25.5 - 2.5 ** 2))


def test_diagnostic_marginals():
    n = 100_000
    d = generate(DesignSpec("iv_diagnostic_2", n=n, p=2, seed=3)).data
    _within(d.instrument, DIAG_Z_PROB, 0.5)
    _within(d.treatment, DIAG_Z_PROB * DIAG_Q_PROB, 0.5)


def test_design_two_hides_the_jump():
    check = diagnostic_moment_check("iv_diagnostic_2", n=100_000, seed=9)
    diffs = check["+0.000"]
    # bounds are about four standard errors of a difference of two 50k-sample means
    assert abs(diffs["W"]) < 0.015
    assert abs(diffs["Y"]) < 0.03
    assert abs(diffs["WY"]) < 0.03
    assert abs(diffs["Y2"]) < 0.06


def test_design_one_moves_wy_at_both_thresholds():
    check = diagnostic_moment_check("iv_diagnostic_1", n=100_000, seed=9)
    # Cov(W, Y | x) = tau / 4 + c / 8 jumps by 1/2 at -1/3 and by 1/4 at +1/3
    assert check["-0.333"]["WY"] > 0.3
    assert check["+0.333"]["WY"] > 0.15


def test_design_two_law_is_constant_across_sides():
    """Exact second-moment algebra for the masking mechanism."""
    from genforest.simulation import DIAG2_LOADINGS

    pz, pq = DIAG_Z_PROB, DIAG_Q_PROB
    for tau, c in ((0.0, DIAG2_LOADINGS[0]), (1.0, DIAG2_LOADINGS[1])):
        # W = ZQ; Y = (W - 1/2) tau + c (Q - pq) + eta
        ew = pz * pq
        ewq = pz * pq * (1 - pq)  # E[W (Q - pq)]
        cov_wy = tau * ew * (1 - ew) + c * ewq
        mean_y = (ew - 0.5) * tau
        assert cov_wy == pytest.approx(0.125)
        assert mean_y == pytest.approx(0.0)


def test_design_validation():
    with pytest.raises(UnknownDesign):
        DesignSpec("nope", n=10, p=3)
    with pytest.raises(InvalidOptions):
        DesignSpec("causal", n=10, p=2)
    with pytest.raises(InvalidOptions):
        DesignSpec("iv", n=10, p=5)
    with pytest.raises(InvalidOptions):
        DesignSpec("iv", n=0, p=6)
    DesignSpec("iv", n=10, p=2, nuisance=False)


# -- metrics ------------------------------------------------------------------


def test_mse_examples():
    assert mse([1, 2], [1, 2]) == 0.0
    assert mse([1, 1], [0, 2]) == 1.0
    with pytest.raises(LengthMismatch):
        mse([1], [1, 2])
    with pytest.raises(LengthMismatch):
        mse([], [])


@settings(max_examples=50, deadline=None)
@given(st.lists(st.tuples(st.floats(-1e6, 1e6), st.floats(-1e6, 1e6)), min_size=1, max_size=30))
def test_mse_matches_recomputation(pairs):
    a, b = zip(*pairs)
    ref = sum((x - y) ** 2 for x, y in pairs) / len(pairs)
    assert mse(a, b) == pytest.approx(ref, rel=1e-12, abs=1e-300)


def test_coverage_examples():
    cis = [ConfidenceInterval(t - 1, t + 1, 0.95) for t in (0.0, 1.0, 2.0)]
    assert coverage(cis, [0.0, 1.0, 2.0]) == 1.0
    flat = [ConfidenceInterval(t, t, 0.95) for t in (0.0, 1.0)]
    assert coverage(flat, [0.5, 1.5]) == 0.0
    mixed = [ConfidenceInterval(0, 1, 0.95)] * 4
    assert coverage(mixed, [0.0, 1.0, 0.5, 1.01]) == 0.75
    with pytest.raises(LengthMismatch):
        coverage(mixed, [0.0])
