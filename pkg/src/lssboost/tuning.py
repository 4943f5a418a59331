"""Cross-validated risk curves and the robust early-stopping rule."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .boost import FitState, ModelConfig, boost_step, build_model, init_offsets
from .errors import DataError
from .families import ParamState, nll
from .steplength import WarmStartTable

__all__ = ["CVPlan", "RiskCurve", "fold_assignment", "cv_risk", "robust_mstop"]


@dataclass(frozen=True)
class CVPlan:
    folds: int = 10
    seed: int = 0

    def __post_init__(self):
        if self.folds < 2:
            raise ValueError("need at least 2 folds")


@dataclass
class RiskCurve:
    """Mean out-of-fold NLL per iteration, m = 0 .. mstop_max."""

    mean: np.ndarray
    per_fold: np.ndarray  # folds x (mstop_max + 1)


def fold_assignment(plan: CVPlan, n: int) -> np.ndarray:
    """Seeded shuffle, then round-robin: fold sizes differ by at most one."""
    rng = np.random.default_rng(plan.seed)
    order = rng.permutation(n)
    folds = np.empty(n, dtype=int)
    folds[order] = np.arange(n) % plan.folds
    return folds


def _subset(data: dict, idx: np.ndarray) -> dict:
    return {key: np.asarray(col)[idx] for key, col in data.items()}


def cv_risk(
    config: ModelConfig,
    data: dict,
    y,
    plan: CVPlan,
    mstop_max: int,
) -> RiskCurve:
    """Single-pass k-fold risk curve.

    Each fold is fitted once up to ``mstop_max`` while the held-out NLL is
    tracked incrementally (the held-out predictor is advanced by the one
    coefficient block that changed).  Early-stopped folds keep their last
    risk for the remaining iterations.
    """
    y = np.asarray(y, dtype=float)
    n = len(y)
    assignment = fold_assignment(plan, n)
    spec = config.spec
    per_fold = np.empty((plan.folds, mstop_max + 1))

    for f in range(plan.folds):
        test = assignment == f
        train = ~test
        try:
            learners = build_model(config, _subset(data, train))
            offsets = init_offsets(spec, y[train])
        except DataError as exc:
            raise DataError(f"fold {f}: {exc}") from exc
        n_train = int(train.sum())
        state = FitState(
            config=config,
            learners=learners,
            y=y[train],
            offsets=offsets,
            eta=[np.full(n_train, o) for o in offsets],
            coef=[[np.zeros(bu.dp.p_orig) for bu in group] for group in learners],
            warm=WarmStartTable(),
        )
        test_data = _subset(data, test)
        y_test = y[test]
        eta_test = [np.full(int(test.sum()), o) for o in offsets]
        rows_cache: dict = {}

        def held_out_nll() -> float:
            with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
                val = nll(spec, ParamState(spec=spec, eta=eta_test), y_test)
            return val if np.isfinite(val) else np.inf

        per_fold[f, 0] = held_out_nll()
        for m in range(1, mstop_max + 1):
            if not boost_step(state):
                per_fold[f, m:] = per_fold[f, m - 1]
                break
            rec = state.trace[-1]
            learner = state.learners[rec.k_star][rec.j_star]
            key = (rec.k_star, rec.j_star)
            if key not in rows_cache:
                rows_cache[key] = learner.dp.design_rows(test_data[learner.covariate])
            eta_test[rec.k_star] = eta_test[rec.k_star] + rows_cache[key] @ rec.coef_increment
            per_fold[f, m] = held_out_nll()

    return RiskCurve(mean=per_fold.mean(axis=0), per_fold=per_fold)


def robust_mstop(curve, tol: float = 0.02) -> int:
    """Earliest iteration whose risk is within ``tol`` of the curve minimum.

    "Within tol of the minimum" is measured relative to the total descent
    of the curve: threshold = min + tol * (curve[0] - min).  This keeps the
    rule invariant to affine rescalings of the risk (the additive constants
    of a log-likelihood would otherwise dominate the tolerance) and stable
    on flat curves.  A constant curve yields 0.
    """
    values = np.asarray(curve.mean if isinstance(curve, RiskCurve) else curve, dtype=float)
    if values.size == 0:
        raise ValueError("empty risk curve")
    lo = float(np.min(values))
    threshold = lo + tol * max(float(values[0]) - lo, 0.0)
    return int(np.argmax(values <= threshold))
