"""Cross-validation tests: fold assignment, single-pass curve, stopping rule."""

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from lssboost import boost, tuning
from lssboost.baselearners import BaseLearnerSpec, LearnerKind
from lssboost.families import GAUSSIAN_LS, ParamState, nll


def toy_config(mstop=15, covs=("x",)):
    learners = tuple(
        BaseLearnerSpec(LearnerKind.LINEAR, c, df_target=None) for c in covs
    )
    return boost.ModelConfig(
        spec=GAUSSIAN_LS,
        learners=(learners, learners),
        step=boost.StepMode(boost.FIXED, 0.1),
        mstop=mstop,
    )


@pytest.fixture
def toy_data():
    rng = np.random.default_rng(31)
    x = rng.uniform(-1.0, 1.0, 10)
    y = rng.normal(1.0 + 1.5 * x, 0.8)
    return {"x": x}, y


# ---------------------------------------------------------------------------
# Fold assignment


def test_fold_sizes_differ_by_at_most_one():
    plan = tuning.CVPlan(folds=7, seed=3)
    folds = tuning.fold_assignment(plan, 45)
    sizes = np.bincount(folds, minlength=7)
    assert sizes.max() - sizes.min() <= 1
    assert sizes.sum() == 45


def test_fold_assignment_deterministic_in_seed():
    plan = tuning.CVPlan(folds=5, seed=11)
    a = tuning.fold_assignment(plan, 30)
    b = tuning.fold_assignment(plan, 30)
    np.testing.assert_array_equal(a, b)
    c = tuning.fold_assignment(tuning.CVPlan(folds=5, seed=12), 30)
    assert not np.array_equal(a, c)


def test_cvplan_requires_two_folds():
    with pytest.raises(ValueError):
        tuning.CVPlan(folds=1)


# ---------------------------------------------------------------------------
# Risk curve vs brute force


def brute_force_loo_curve(config, data, y, plan, mstop_max):
    """Per-iteration refits from scratch: the independent oracle."""
    n = len(y)
    assignment = tuning.fold_assignment(plan, n)
    per_fold = np.empty((plan.folds, mstop_max + 1))
    for f in range(plan.folds):
        test = assignment == f
        train = ~test
        train_data = {k: v[train] for k, v in data.items()}
        test_data = {k: v[test] for k, v in data.items()}
        for m in range(mstop_max + 1):
            cfg = boost.ModelConfig(
                spec=config.spec,
                learners=config.learners,
                step=config.step,
                mstop=m,
                graph=config.graph,
            )
            fit = boost.run(cfg, train_data, y[train])
            pred = boost.predict(fit, test_data, scale="link")
            state = ParamState.from_eta(
                config.spec, [pred[p] for p in config.spec.param_names]
            )
            per_fold[f, m] = nll(config.spec, state, y[test])
    return per_fold.mean(axis=0)


def test_single_pass_cv_matches_brute_force_loo(toy_data):
    data, y = toy_data
    config = toy_config(mstop=12)
    plan = tuning.CVPlan(folds=len(y), seed=0)  # leave-one-out
    curve = tuning.cv_risk(config, data, y, plan, 12)
    oracle = brute_force_loo_curve(config, data, y, plan, 12)
    np.testing.assert_allclose(curve.mean, oracle, atol=1e-8)


def test_cv_curve_at_zero_is_offsets_only_risk(toy_data):
    data, y = toy_data
    plan = tuning.CVPlan(folds=5, seed=2)
    curve = tuning.cv_risk(toy_config(), data, y, plan, 3)
    assignment = tuning.fold_assignment(plan, len(y))
    for f in range(5):
        train = assignment != f
        off = boost.init_offsets(GAUSSIAN_LS, y[train])
        test = ~train
        state = ParamState(
            spec=GAUSSIAN_LS, eta=[np.full(test.sum(), o) for o in off]
        )
        assert curve.per_fold[f, 0] == pytest.approx(nll(GAUSSIAN_LS, state, y[test]))


def test_duplicated_data_gives_identical_fold_curves():
    rng = np.random.default_rng(8)
    x = rng.uniform(-1.0, 1.0, 12)
    y = rng.normal(x, 1.0)
    data = {"x": np.concatenate([x, x])}
    yy = np.concatenate([y, y])
    # folds = the two identical halves
    plan = tuning.CVPlan(folds=2, seed=0)
    assignment = np.array([0] * 12 + [1] * 12)
    orig = tuning.fold_assignment
    try:
        tuning.fold_assignment = lambda p, n: assignment
        curve = tuning.cv_risk(toy_config(mstop=6), data, yy, plan, 6)
    finally:
        tuning.fold_assignment = orig
    np.testing.assert_allclose(curve.per_fold[0], curve.per_fold[1], atol=1e-10)


def test_cv_curve_length(toy_data):
    data, y = toy_data
    curve = tuning.cv_risk(toy_config(), data, y, tuning.CVPlan(folds=5, seed=1), 9)
    assert curve.mean.shape == (10,)
    assert np.all(np.isfinite(curve.mean))


# ---------------------------------------------------------------------------
# Stopping rule


def test_robust_mstop_rule_examples():
    assert tuning.robust_mstop(np.array([5.0, 4.0, 3.9, 3.95, 4.1])) == 2
    assert tuning.robust_mstop(np.array([10.0, 6.0, 5.05, 5.0])) == 2
    assert tuning.robust_mstop(np.array([3.0, 3.0, 3.0])) == 0


def test_robust_mstop_never_exceeds_argmin():
    rng = np.random.default_rng(44)
    for _ in range(20):
        curve = rng.normal(0.0, 1.0, 30).cumsum() + 10.0
        m = tuning.robust_mstop(curve)
        assert m <= int(np.argmin(curve))


def test_robust_mstop_invariant_to_trailing_high_values():
    curve = np.array([10.0, 6.0, 5.05, 5.0])
    m = tuning.robust_mstop(curve)
    extended = np.concatenate([curve, [9.0, 8.0, 7.5]])
    assert tuning.robust_mstop(extended) == m


def test_robust_mstop_scale_and_shift_invariant():
    curve = np.array([10.0, 8.0, 6.0, 5.2, 5.0, 5.1])
    m = tuning.robust_mstop(curve)
    assert tuning.robust_mstop(curve * 7.0) == m
    assert tuning.robust_mstop(curve - 20.0) == m  # negative values handled


def test_robust_mstop_empty_curve():
    with pytest.raises(ValueError):
        tuning.robust_mstop(np.array([]))


@given(
    st.lists(
        st.floats(min_value=-1e6, max_value=1e6, allow_nan=False),
        min_size=1,
        max_size=40,
    )
)
def test_robust_mstop_properties(values):
    curve = np.asarray(values)
    m = tuning.robust_mstop(curve)
    assert 0 <= m <= int(np.argmin(curve))
    lo = float(curve.min())
    threshold = lo + 0.02 * max(float(curve[0]) - lo, 0.0)
    # the chosen iteration qualifies and every earlier one does not
    assert curve[m] <= threshold + 1e-9 * max(1.0, abs(threshold))
    assert np.all(curve[:m] > threshold)
