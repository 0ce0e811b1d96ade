import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from genforest.data import Dataset
from genforest.errors import FormatError, InvalidOptions, NoContributingTrees
from genforest.forest import (
    Forest,
    ForestOptions,
    compute_weights,
    load_forest,
    predict,
    predict_many,
    predict_oob,
    save_forest,
    train_forest,
)
from genforest.models import MomentModel
from genforest.tree import SplitOptions, Tree

from conftest import make_data
from oracles import forest_weights_by_hand

REG = MomentModel.regression()


def _leaf_tree(X, members):
    """One split on feature 0 at 0.5 with the given J2 members routed down."""
    return Tree.from_leaves(X, [0, -1, -1], [0.5, 0, 0], [1, -1, -1], [2, -1, -1], members)


def _toy_forest(member_sets, X=None):
    X = np.array([[0.0], [0.1], [0.2], [0.9]]) if X is None else X
    d = Dataset(X, np.array([1.0, 2.0, 3.0, 4.0]))
    trees = [_leaf_tree(X, m) for m in member_sets]
    opts = ForestOptions(num_trees=len(trees), ci_group_sampling=False)
    return Forest.from_trees(d, REG, opts, trees, [[]] * len(trees), member_sets)


# -- options ------------------------------------------------------------------


def test_options_guards():
    with pytest.raises(InvalidOptions):
        ForestOptions(num_trees=10, little_bag_size=4)
    with pytest.raises(InvalidOptions):
        ForestOptions(little_bag_size=1)
    with pytest.raises(InvalidOptions):
        ForestOptions(subsample_fraction=0.6).check(10)  # s=6 > n/2
    assert ForestOptions(subsample_exponent=0.5).subsample_size(101) == 11
    assert ForestOptions(subsample_fraction=0.6, ci_group_sampling=False).check(10) == 6


def test_small_n_rejected(rng):
    d = make_data(rng, n=15)
    with pytest.raises(InvalidOptions):
        train_forest(d, REG, ForestOptions(num_trees=4))


# -- weights ------------------------------------------------------------------


def test_single_tree_weights():
    f = _toy_forest([[2, 3]], X=np.array([[0.0], [0.1], [0.2], [0.3]]))
    np.testing.assert_allclose(compute_weights(f, [0.25]), [0, 0, 0.5, 0.5])


def test_two_tree_weights():
    X = np.array([[0.0], [0.1], [0.2], [0.3]])
    f = _toy_forest([[1], [1, 2]], X=X)
    np.testing.assert_allclose(compute_weights(f, [0.0]), [0, 0.75, 0.25, 0])


def test_empty_leaves_are_skipped_and_all_empty_raises():
    f = _toy_forest([[0, 1], [3]])  # tree 1 has nothing on the left
    np.testing.assert_allclose(compute_weights(f, [0.0]), [0.5, 0.5, 0, 0])
    g = _toy_forest([[3], [3]])
    with pytest.raises(NoContributingTrees):
        compute_weights(g, [0.0])


def test_little_bag_layout(rng):
    d = make_data(rng, n=100)
    f = train_forest(d, REG, ForestOptions(num_trees=4, little_bag_size=2,
                                           subsample_fraction=0.5), workers=1)
    assert f.half_samples.shape == (2, 50)
    assert f.groups.tolist() == [0, 0, 1, 1]
    for b in range(4):
        sub = f.subsample(b)
        assert sub.size == 50 and np.unique(sub).size == 50
        assert set(sub.tolist()) <= set(f.half_samples[f.groups[b]].tolist())
        assert f.tree_j1(b).size == 25


@pytest.mark.parametrize("kind", ["regression", "quantile", "partial_effect", "instrumental"])
def test_forest_invariants(kind, rng):
    d = make_data(rng, n=300, p=3, kind=kind)
    model = MomentModel.quantile([0.25, 0.75]) if kind == "quantile" else MomentModel(kind)
    f = train_forest(d, model, ForestOptions(num_trees=40, seed=7))
    for b in range(f.num_trees):
        j1, j2 = set(f.tree_j1(b).tolist()), set(f.tree_j2(b).tolist())
        assert not j1 & j2
        assert set(f.subsample(b).tolist()) <= set(f.half_samples[f.groups[b]].tolist())
        t = f.tree(b)
        stored = np.concatenate([t.leaf_samples(lf) for lf in t.leaves()])
        assert set(stored.tolist()) == j2
    for x in rng.uniform(-1, 1, size=(10, 3)):
        a = compute_weights(f, x)
        assert a.sum() == pytest.approx(1.0, abs=1e-12)
        np.testing.assert_allclose(a, forest_weights_by_hand(f, x), atol=1e-14)
        pos = set(np.flatnonzero(a).tolist())
        assert pos <= set(f.j2.tolist())


def test_regression_prediction_is_average_of_leaf_means(rng):
    d = make_data(rng, n=150, p=2)
    f = train_forest(d, REG, ForestOptions(num_trees=20, seed=3))
    for x in rng.uniform(-1, 1, size=(20, 2)):
        means = []
        for b in range(f.num_trees):
            t = f.tree(b)
            m = t.leaf_samples(t.apply(x)[0])
            if m.size:  # empty leaves carry no weight
                means.append(d.outcome[m].mean())
        assert predict(f, x).theta == pytest.approx(np.mean(means), abs=1e-10)


def test_constant_outcome_quantile_forest(rng):
    d = Dataset(rng.uniform(size=(80, 2)), np.full(80, 7.0))
    f = train_forest(d, MomentModel.quantile([0.1, 0.5, 0.9]), ForestOptions(num_trees=8))
    theta, _ = predict_many(f, rng.uniform(size=(5, 2)))
    assert np.all(theta == 7.0)


@pytest.mark.parametrize("kind", ["regression", "quantile", "partial_effect", "instrumental"])
def test_bit_identical_across_worker_counts(kind, rng):
    d = make_data(rng, n=200, p=3, kind=kind)
    model = MomentModel.quantile([0.5]) if kind == "quantile" else MomentModel(kind)
    opts = ForestOptions(num_trees=24, seed=99)
    a = train_forest(d, model, opts, workers=1)
    b = train_forest(d, model, opts, workers=8)
    for name in ("feature", "threshold", "left", "right", "leaf_start", "leaf_end",
                 "members", "j1", "j2", "half_samples"):
        assert getattr(a, name).tobytes() == getattr(b, name).tobytes()


def test_seeds_differ(rng):
    d = make_data(rng, n=200)
    a = train_forest(d, REG, ForestOptions(num_trees=8, seed=1))
    b = train_forest(d, REG, ForestOptions(num_trees=8, seed=2))
    assert a.j1.tobytes() != b.j1.tobytes()


# -- out-of-bag ---------------------------------------------------------------


def test_oob_uses_only_trees_without_the_sample():
    X = np.array([[0.0], [0.1], [0.2], [0.9]])
    d = Dataset(X, np.array([1.0, 2.0, 3.0, 4.0]))
    trees = [_leaf_tree(X, [0, 1]), _leaf_tree(X, [2])]
    opts = ForestOptions(num_trees=2, ci_group_sampling=False)
    f = Forest.from_trees(d, REG, opts, trees, [[3], [1]], [[0, 1], [2]])
    # sample 0 is in tree 0's subsample, so only tree 1 (leaf {2}) is used
    assert predict_oob(f, 0).theta == 3.0
    # tree 0 contains 1 and tree 1 contains 1 too
    with pytest.raises(NoContributingTrees):
        predict_oob(f, 1)


def test_oob_prediction_ignores_own_outcome(rng):
    d = make_data(rng, n=120)
    opts = ForestOptions(num_trees=40, seed=5)
    f = train_forest(d, REG, opts)
    y = d.outcome.copy()
    for i in (0, 17, 63):
        y2 = y.copy()
        y2[i] += 100.0
        g = train_forest(d.replace(outcome=y2), REG, opts)
        assert predict_oob(g, i).theta == predict_oob(f, i).theta


def test_oob_mean_under_null(rng):
    n = 2000
    d = Dataset(rng.uniform(size=(n, 3)), rng.normal(size=n))
    f = train_forest(d, REG, ForestOptions(num_trees=100, ci_group_sampling=False))
    fit, _ = predict_many(f, None, oob=True)
    se = d.outcome.std() / np.sqrt(n)
    assert abs(fit.mean() - d.outcome.mean()) < 3 * se


def test_predict_many_matches_predict(rng):
    d = make_data(rng, n=200, kind="partial_effect")
    f = train_forest(d, MomentModel.partial_effect(), ForestOptions(num_trees=20))
    Xq = rng.uniform(-1, 1, size=(6, 3))
    theta, nu = predict_many(f, Xq)
    for k, x in enumerate(Xq):
        est = predict(f, x)
        assert est.theta == pytest.approx(theta[k], rel=1e-12)
        assert est.nu[0] == pytest.approx(nu[k, 0], rel=1e-12)
    oob, _ = predict_many(f, None, oob=True, strict=False)
    for i in (0, 5, 99):
        assert predict_oob(f, i).theta == pytest.approx(oob[i], rel=1e-12)


# -- serialization ------------------------------------------------------------


@settings(max_examples=10, deadline=None)
@given(st.sampled_from(["regression", "quantile", "partial_effect", "instrumental"]),
       st.integers(0, 2**32 - 1))
def test_save_load_round_trip(tmp_path_factory, kind, seed):
    r = np.random.default_rng(seed)
    d = make_data(r, n=120, p=2, kind=kind)
    model = MomentModel.quantile([0.3, 0.7]) if kind == "quantile" else MomentModel(kind)
    opts = ForestOptions(num_trees=8, seed=seed, split=SplitOptions(mtry_rate=1.5))
    f = train_forest(d, model, opts)
    path = tmp_path_factory.mktemp("f") / "forest.bin"
    save_forest(f, path, extra={"note": "x"})
    g, extra = load_forest(path)
    assert extra == {"note": "x"}
    assert g.options == f.options and g.model == f.model
    Xq = r.uniform(-1, 1, size=(15, 2))
    a, _ = predict_many(f, Xq, strict=False)
    b, _ = predict_many(g, Xq, strict=False)
    assert a.tobytes() == b.tobytes()
    path2 = path.with_name("again.bin")
    save_forest(g, path2, extra={"note": "x"})
    assert path.read_bytes() == path2.read_bytes()


def test_load_rejects_garbage(tmp_path):
    p = tmp_path / "junk.bin"
    p.write_bytes(b"not a zip")
    with pytest.raises(FormatError):
        load_forest(p)
