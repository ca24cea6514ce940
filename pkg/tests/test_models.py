import dataclasses
import logging
import math

import numpy as np
import pytest

from helpers import best_split_oracle, toy_matrix
from ttcast.models import (
    KIND_AR,
    KIND_GBT,
    KIND_NAIVE,
    GBTParams,
    TargetStandardizer,
    TrainedModel,
    fit_ar_diff,
    fit_gbt,
    fit_naive,
    forecast_ar_diff,
    load_model,
    model_from_dict,
    model_to_dict,
    predict,
    save_model,
)

FULL = dict(feature_fraction=1.0, bagging_fraction=1.0)


# ----------------------------------------------------------- standardizer


def test_standardizer_roundtrip():
    rng = np.random.default_rng(0)
    y = rng.normal(3.0, 2.0, size=100)
    s = TargetStandardizer.fit(y)
    z = s.transform(y)
    assert z.mean() == pytest.approx(0.0, abs=1e-12)
    assert z.std() == pytest.approx(1.0, abs=1e-12)
    np.testing.assert_allclose(s.inverse(z), y, atol=1e-12)


def test_standardizer_floors_zero_spread():
    s = TargetStandardizer.fit(np.full(10, 7.0))
    assert s.std == 1e-12
    assert s.transform(np.array([7.0])).tolist() == [0.0]


# ----------------------------------------------------------------- params


def test_params_validation():
    with pytest.raises(ValueError):
        GBTParams(n_estimators=0)
    with pytest.raises(ValueError):
        GBTParams(learning_rate=0.0)
    with pytest.raises(ValueError):
        GBTParams(max_depth=0)
    with pytest.raises(ValueError):
        GBTParams(feature_fraction=0.0)
    with pytest.raises(ValueError):
        GBTParams(bagging_fraction=1.5)
    with pytest.raises(ValueError):
        GBTParams(min_samples_leaf=0)


def test_params_as_dict_seed_toggle():
    p = GBTParams(seed=9)
    assert p.as_dict()["seed"] == 9
    assert "seed" not in p.as_dict(include_seed=False)


# -------------------------------------------------------------------- gbt


def test_single_tree_splits_between_classes():
    m = toy_matrix([[1.0], [2.0], [3.0], [4.0]], [0.0, 0.0, 1.0, 1.0])
    model = fit_gbt(
        m, GBTParams(n_estimators=1, learning_rate=1.0, max_depth=1, min_samples_leaf=1, **FULL)
    )
    tree = model.trees[0]
    assert tree.feature[0] == 0
    assert tree.threshold[0] == 2.5
    np.testing.assert_allclose(predict(model, m), m.y, atol=1e-12)


def test_constant_target_builds_no_trees():
    m = toy_matrix(np.random.default_rng(1).normal(size=(12, 3)), np.full(12, 3.5))
    model = fit_gbt(m, GBTParams(n_estimators=50, min_samples_leaf=1, **FULL))
    assert model.trees == ()
    assert model.base_score == 0.0
    np.testing.assert_allclose(predict(model, m), 3.5)


def test_fully_grown_tree_interpolates_training_targets():
    for seed in range(10):
        rng = np.random.default_rng(seed)
        m = toy_matrix(rng.normal(size=(40, 3)), rng.normal(size=40))
        model = fit_gbt(
            m,
            GBTParams(
                n_estimators=1, learning_rate=1.0, max_depth=100, min_samples_leaf=1, **FULL
            ),
        )
        np.testing.assert_allclose(predict(model, m), m.y, rtol=1e-9, atol=1e-9)


@pytest.mark.parametrize("seed", range(20))
def test_root_split_matches_exhaustive_oracle(seed):
    rng = np.random.default_rng(seed)
    n = 40
    min_leaf = 1 if seed % 2 == 0 else 3
    m = toy_matrix(rng.normal(size=(n, 3)), rng.normal(size=n))
    model = fit_gbt(
        m,
        GBTParams(
            n_estimators=1, learning_rate=1.0, max_depth=1, min_samples_leaf=min_leaf, **FULL
        ),
    )
    tree = model.trees[0]
    expected = best_split_oracle(m.X, m.y, min_leaf=min_leaf)
    if expected is None:
        assert tree.feature[0] == -1
    else:
        j, thr, _, _ = expected
        assert tree.feature[0] == j
        assert tree.threshold[0] == pytest.approx(thr, abs=1e-12)


def test_training_sse_is_monotone_without_subsampling():
    rng = np.random.default_rng(7)
    m = toy_matrix(rng.normal(size=(50, 3)), rng.normal(size=50))
    model = fit_gbt(
        m, GBTParams(n_estimators=40, learning_rate=0.1, max_depth=3, min_samples_leaf=2, **FULL)
    )
    s = model.standardizer
    z = s.transform(m.y)
    acc = np.full(50, model.base_score)
    prev = float(np.sum((z - acc) ** 2))
    for tree in model.trees:
        acc = acc + 0.1 * tree.predict(m.X)
        sse = float(np.sum((z - acc) ** 2))
        assert sse <= prev + 1e-9
        prev = sse


def test_same_seed_reproduces_same_model():
    rng = np.random.default_rng(3)
    m = toy_matrix(rng.normal(size=(60, 4)), rng.normal(size=60))
    params = GBTParams(n_estimators=15, max_depth=3, min_samples_leaf=2, seed=11)
    a = fit_gbt(m, params)
    b = fit_gbt(m, params)
    assert model_to_dict(a) == model_to_dict(b)


def test_more_rounds_extend_the_same_tree_sequence():
    # per-round generators are seeded by (seed, round), so a longer run
    # must reproduce the shorter run's trees exactly
    rng = np.random.default_rng(4)
    m = toy_matrix(rng.normal(size=(60, 4)), rng.normal(size=60))
    short = fit_gbt(m, GBTParams(n_estimators=10, max_depth=3, min_samples_leaf=2, seed=5))
    long = fit_gbt(m, GBTParams(n_estimators=25, max_depth=3, min_samples_leaf=2, seed=5))
    assert model_to_dict(long)["trees"][:10] == model_to_dict(short)["trees"]


def test_subsampling_uses_strict_subsets():
    rng = np.random.default_rng(8)
    m = toy_matrix(rng.normal(size=(40, 10)), rng.normal(size=40))
    model = fit_gbt(
        m,
        GBTParams(
            n_estimators=30,
            max_depth=2,
            min_samples_leaf=1,
            feature_fraction=0.5,
            bagging_fraction=0.9,
            seed=2,
        ),
    )
    used = {int(f) for tree in model.trees for f in tree.feature if f >= 0}
    assert used <= set(range(10))
    # with half the features per round, more than 5 distinct features can
    # only show up through per-round redraws
    assert len(used) > 5


def test_predict_rejects_mismatched_features():
    rng = np.random.default_rng(5)
    m = toy_matrix(rng.normal(size=(30, 2)), rng.normal(size=30), names=("a", "b"))
    model = fit_gbt(m, GBTParams(n_estimators=2, max_depth=2, min_samples_leaf=2, **FULL))
    reordered = dataclasses.replace(m, feature_names=("b", "a"))
    with pytest.raises(ValueError, match="different order"):
        predict(model, reordered)
    renamed = dataclasses.replace(m, feature_names=("a", "c"))
    with pytest.raises(ValueError, match="feature names"):
        predict(model, renamed)


def test_too_few_rows_raises():
    m = toy_matrix(np.zeros((4, 2)), np.zeros(4))
    with pytest.raises(ValueError, match="min_samples_leaf"):
        fit_gbt(m, GBTParams(min_samples_leaf=5))


# --------------------------------------------------------------------- ar


def _tt_from_diffs(d, start=10.0):
    return np.concatenate([[start], start + np.cumsum(d)])


def test_ar_recovers_noiseless_recurrence(caplog):
    d = np.empty(40)
    d[0] = 1.0
    for t in range(1, 40):
        d[t] = 0.25 + 0.5 * d[t - 1]
    tt = _tt_from_diffs(d)
    with caplog.at_level(logging.WARNING, logger="ttcast.models"):
        model = fit_ar_diff(tt, p_max=5)
    assert model.ar_p == 1
    assert model.ar_coefficients[0] == pytest.approx(0.25, abs=1e-9)
    assert model.ar_coefficients[1] == pytest.approx(0.5, abs=1e-9)
    # higher orders are exactly collinear here, so they must be skipped
    assert any("singular" in r.message for r in caplog.records)
    origins = np.array([20, 30])
    np.testing.assert_allclose(forecast_ar_diff(model, tt, origins), d[origins], atol=1e-9)


def test_ar_constant_drift_falls_back_to_order_zero():
    tt = 10.0 + 0.5 * np.arange(30)  # every diff is exactly 0.5
    model = fit_ar_diff(tt, p_max=5)
    assert model.ar_p == 0
    assert model.ar_coefficients[0] == pytest.approx(0.5, abs=1e-12)
    out = forecast_ar_diff(model, tt, np.array([0, 5, 28]))
    np.testing.assert_allclose(out, 0.5, atol=1e-12)


def test_ar_forecast_indexing_by_hand():
    model = TrainedModel(kind=KIND_AR, ar_p=1, ar_coefficients=(0.0, 1.0))
    tt = np.array([1.0, 2.0, 4.0, 7.0, 11.0])  # diffs 1, 2, 3, 4
    out = forecast_ar_diff(model, tt, np.array([1, 2, 3]))
    # forecast of the next diff equals the diff just observed at the origin
    assert out.tolist() == [1.0, 2.0, 3.0]


def test_ar_forecast_rejects_early_origin():
    model = TrainedModel(kind=KIND_AR, ar_p=2, ar_coefficients=(0.0, 0.5, 0.1))
    with pytest.raises(ValueError, match="fewer than p"):
        forecast_ar_diff(model, np.arange(10.0), np.array([1]))


def test_ar_needs_enough_history():
    with pytest.raises(ValueError, match="observations"):
        fit_ar_diff(np.arange(10.0), p_max=5)


def test_ar_is_deterministic():
    rng = np.random.default_rng(12)
    tt = np.abs(np.cumsum(rng.normal(size=80))) + 5
    a = fit_ar_diff(tt)
    b = fit_ar_diff(tt)
    assert a.ar_p == b.ar_p
    assert a.ar_coefficients == b.ar_coefficients


# ------------------------------------------------------------------ naive


def test_naive_predicts_zero_delta():
    m = toy_matrix(np.ones((6, 2)), np.linspace(-1, 1, 6))
    model = fit_naive()
    assert model.kind == KIND_NAIVE
    assert predict(model, m).tolist() == [0.0] * 6


def test_predict_refuses_ar_models():
    model = TrainedModel(kind=KIND_AR, ar_p=0, ar_coefficients=(0.0,))
    with pytest.raises(ValueError, match="forecast_ar_diff"):
        predict(model, toy_matrix(np.ones((3, 1)), np.zeros(3)))


# ---------------------------------------------------------- serialization


def test_gbt_serialization_roundtrip(tmp_path):
    rng = np.random.default_rng(6)
    m = toy_matrix(rng.normal(size=(50, 4)), rng.normal(size=50))
    model = fit_gbt(m, GBTParams(n_estimators=8, max_depth=3, min_samples_leaf=2, seed=3))
    back = model_from_dict(model_to_dict(model))
    assert back.kind == KIND_GBT
    assert back.feature_names == model.feature_names
    assert back.params == model.params
    np.testing.assert_array_equal(predict(back, m), predict(model, m))

    path = tmp_path / "model.json"
    save_model(model, path)
    loaded = load_model(path)
    np.testing.assert_array_equal(predict(loaded, m), predict(model, m))
    # doubles survive the JSON round trip exactly
    save_model(loaded, tmp_path / "model2.json")
    assert path.read_bytes() == (tmp_path / "model2.json").read_bytes()


def test_ar_and_naive_serialization_roundtrip():
    tt = 10.0 + 0.5 * np.arange(30)
    ar = fit_ar_diff(tt)
    back = model_from_dict(model_to_dict(ar))
    assert back.ar_p == ar.ar_p
    assert back.ar_coefficients == ar.ar_coefficients
    np.testing.assert_array_equal(
        forecast_ar_diff(back, tt, np.array([3, 9])), forecast_ar_diff(ar, tt, np.array([3, 9]))
    )
    naive = model_from_dict(model_to_dict(fit_naive()))
    assert naive.kind == KIND_NAIVE


def test_model_from_dict_rejects_unknown_schema():
    with pytest.raises(ValueError, match="schema"):
        model_from_dict({"schema": "something-else"})


def test_leaf_thresholds_serialize_as_null():
    m = toy_matrix([[1.0], [2.0], [3.0], [4.0]], [0.0, 0.0, 1.0, 1.0])
    model = fit_gbt(
        m, GBTParams(n_estimators=1, learning_rate=1.0, max_depth=1, min_samples_leaf=1, **FULL)
    )
    doc = model_to_dict(model)
    nodes = doc["trees"][0]
    leaves = [nd for nd in nodes if nd["feature"] == -1]
    assert leaves and all(nd["threshold"] is None for nd in leaves)
    assert not math.isnan(nodes[0]["threshold"])
