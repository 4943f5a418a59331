"""Non-cyclical component-wise gradient boosting for location-scale(-shape)
models.

Per iteration, the negative gradient of every distribution parameter is
fitted by all of its base-learners, the best-fitting learner per parameter
forms an update candidate (scaled by a fixed or shrunk-optimal step
length), and only the single candidate with the lowest resulting negative
log-likelihood is applied.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import linalg, special

from . import baselearners as bl
from . import steplength as sl
from .errors import ConfigurationError, DataError, UnboundedDirectionError
from .families import Family, FamilySpec, ParamState, loglik, negative_gradient, nll

__all__ = [
    "StepMode",
    "ModelConfig",
    "BuiltLearner",
    "TraceRecord",
    "FitState",
    "init_offsets",
    "build_model",
    "boost_step",
    "run",
    "predict",
    "coefficients_at",
    "coefficient_paths",
    "selected_blocks",
]

FIXED = "fixed"
SHRUNK_OPTIMAL = "shrunk-optimal"


@dataclass(frozen=True)
class StepMode:
    """Step-length policy: Fixed(nu) or ShrunkOptimal(shrinkage lambda)."""

    mode: str
    value: float = 0.1

    def __post_init__(self):
        if self.mode not in (FIXED, SHRUNK_OPTIMAL):
            raise ConfigurationError(f"unknown step mode {self.mode!r}")
        if not 0.0 < self.value <= 1.0:
            raise ConfigurationError("step value must lie in (0, 1]")


@dataclass(frozen=True)
class ModelConfig:
    spec: FamilySpec
    learners: tuple  # per-parameter tuples of BaseLearnerSpec
    step: StepMode
    mstop: int
    graph: bl.Graph | None = None

    def __post_init__(self):
        if len(self.learners) != self.spec.n_params:
            raise ConfigurationError(
                "one base-learner list per distribution parameter required"
            )
        if any(len(group) == 0 for group in self.learners):
            raise ConfigurationError("every parameter needs a base-learner")
        if self.mstop < 0:
            raise ConfigurationError("mstop must be nonnegative")


@dataclass
class BuiltLearner:
    """A realized base-learner with its cached fitting operator."""

    name: str
    covariate: str
    dp: bl.DesignPenalty
    M: np.ndarray  # p x n operator: gamma = M @ u
    coef_names: tuple

    def fit_gradient(self, u: np.ndarray):
        gamma = self.M @ u
        return self.dp.X @ gamma, gamma


@dataclass
class TraceRecord:
    m: int
    k_star: int
    j_star: int
    nu: float
    nu_star: float | None
    inner_risk: float
    fallback_used: bool
    coef_increment: np.ndarray  # original-basis coefficients of the update


@dataclass
class FitState:
    config: ModelConfig
    learners: list  # per parameter: list[BuiltLearner]
    y: np.ndarray
    offsets: np.ndarray
    eta: list
    coef: list  # per parameter: list of original-basis coefficient vectors
    trace: list = field(default_factory=list)
    warm: sl.WarmStartTable = field(default_factory=sl.WarmStartTable)
    stop_reason: str | None = None

    @property
    def mstop_reached(self) -> int:
        return len(self.trace)

    def param_state(self) -> ParamState:
        return ParamState(spec=self.config.spec, eta=self.eta)

    def risk(self) -> float:
        return nll(self.config.spec, self.param_state(), self.y)


def _coef_names(learner_name: str, dp: bl.DesignPenalty) -> tuple:
    rb = dp.row_builder
    if isinstance(rb, bl.LinearRows):
        return ("intercept", "slope")
    if isinstance(rb, bl.DummyRows):
        return tuple(str(lv) for lv in rb.levels)
    if isinstance(rb, bl.SplineRows):
        p = dp.p_orig
        return tuple(f"b{j + 1:02d}" for j in range(p))
    return tuple(f"c{j}" for j in range(dp.p_orig))


def build_model(config: ModelConfig, data: dict) -> list:
    """Build, df-calibrate and factorize all base-learners."""
    out = []
    for group in config.learners:
        built = []
        for spec in group:
            for dp in bl.build(spec, data, graph=config.graph):
                if dp.spec.penalized and dp.spec.df_target is not None:
                    dp.lambda_tilde = bl.solve_lambda_for_df(dp, dp.spec.df_target)
                solver = dp.solver()
                m = linalg.cho_solve(solver.cho, dp.X.T)
                built.append(
                    BuiltLearner(
                        name=dp.name,
                        covariate=spec.covariate,
                        dp=dp,
                        M=m,
                        coef_names=_coef_names(dp.name, dp),
                    )
                )
        out.append(built)
    return out


# ---------------------------------------------------------------------------
# Offsets


def _constant_state(spec: FamilySpec, etas, n: int) -> ParamState:
    return ParamState(spec=spec, eta=[np.full(n, e) for e in etas])


def _zinb_intercept_ml(y: np.ndarray) -> np.ndarray:
    """Intercept-only ML fit by coordinate descent with golden sections."""
    # intercept-only likelihood depends on y only through value counts
    vals, counts = np.unique(y, return_counts=True)
    mean_y = float(np.mean(y))
    frac0 = float(np.mean(y == 0))
    mu0 = max(mean_y, 0.1)
    pi0 = frac0 - 1.0 / (1.0 + mu0)  # subtract an NB zero-mass guess (alpha=1)
    if pi0 < 0.01:
        pi0 = frac0 / 2.0
    pi0 = min(max(pi0, 1e-3), 1.0 - 1e-3)
    etas = np.array([np.log(mu0), 0.0, special.logit(pi0)])

    spec = FamilySpec(Family.ZINB)

    def total(vec) -> float:
        state = _constant_state(spec, vec, len(vals))
        with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
            val = -float(np.dot(counts, loglik(spec, state, vals)))
        return val if np.isfinite(val) else np.inf

    cur = total(etas)
    for _ in range(200):
        prev = cur
        for k in range(3):
            def g(v, k=k):
                trial = etas.copy()
                trial[k] = v
                return total(trial)

            lo, hi = etas[k] - 4.0, etas[k] + 4.0
            while True:
                v = sl.golden_min(g, lo, hi, 1e-9)
                if v - lo < 1e-6:
                    lo -= 4.0
                elif hi - v < 1e-6:
                    hi += 4.0
                else:
                    break
                if hi - lo > 64.0:
                    break
            if g(v) < cur:
                etas[k] = v
                cur = g(v)
        if prev - cur <= 1e-8:
            break
    return etas


def init_offsets(spec: FamilySpec, y: np.ndarray) -> np.ndarray:
    y = np.asarray(y, dtype=float)
    if len(y) == 0:
        raise DataError("empty response")
    if spec.family is Family.GAUSSIAN_LS:
        sd = float(np.std(y))
        if sd <= 0.0:
            raise DataError("response has zero variance; sigma offset undefined")
        return np.array([float(np.mean(y)), np.log(sd)])
    if np.all(y == 0):
        raise DataError("all counts are zero; zero-inflation not identifiable")
    return _zinb_intercept_ml(y)


# ---------------------------------------------------------------------------
# The boosting loop


@dataclass
class _Candidate:
    k: int
    j: int
    nu: float
    nu_star: float | None
    fallback: bool
    h: np.ndarray
    gamma: np.ndarray
    risk: float


def _best_learner(state: FitState, k: int, u: np.ndarray):
    """Least-squares selection among the parameter's base-learners."""
    best_j, best_sse, best = -1, np.inf, None
    for j, learner in enumerate(state.learners[k]):
        h, gamma = learner.fit_gradient(u)
        sse = float(np.dot(u - h, u - h))
        # strict inequality: equal fits keep the lowest learner index
        if sse < best_sse:
            best_j, best_sse, best = j, sse, (h, gamma)
    return best_j, best


def _make_candidate(state: FitState, k: int) -> _Candidate | None:
    spec = state.config.spec
    u = negative_gradient(spec, state.param_state(), state.y, k)
    j_star, fit_result = _best_learner(state, k, u)
    if fit_result is None:
        return None
    h, gamma = fit_result
    if not np.any(h):
        return None  # degenerate direction, skip this parameter

    step = state.config.step
    if step.mode == FIXED:
        nu, nu_star, fallback = step.value, None, False
    else:
        ctx = sl.StepContext(spec=spec, k=k, eta_prev=state.eta, h_star=h, y=state.y)
        try:
            res = sl.optimal_step_newton(ctx, state.warm, key=(k, j_star))
        except UnboundedDirectionError:
            return None
        if not res.improving:
            return None
        nu, nu_star, fallback = sl.shrunk(res.nu_star, step.value), res.nu_star, res.fallback_used

    cand_state = state.param_state().with_shift(k, nu * h)
    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        risk = nll(spec, cand_state, state.y)
    if not np.isfinite(risk):
        return None
    return _Candidate(
        k=k, j=j_star, nu=nu, nu_star=nu_star, fallback=fallback,
        h=h, gamma=gamma, risk=risk,
    )


def boost_step(state: FitState) -> bool:
    """Run one boosting iteration; returns False when the fit stops early."""
    candidates = []
    for k in range(state.config.spec.n_params):
        cand = _make_candidate(state, k)
        if cand is not None:
            candidates.append(cand)
    if not candidates:
        state.stop_reason = "all update candidates non-improving"
        return False

    best = min(candidates, key=lambda c: (c.risk, c.k))
    learner = state.learners[best.k][best.j]
    increment = best.nu * (learner.dp.Z @ best.gamma)
    state.eta[best.k] = state.eta[best.k] + best.nu * best.h
    state.coef[best.k][best.j] = state.coef[best.k][best.j] + increment
    state.trace.append(
        TraceRecord(
            m=len(state.trace) + 1,
            k_star=best.k,
            j_star=best.j,
            nu=best.nu,
            nu_star=best.nu_star,
            inner_risk=best.risk,
            fallback_used=best.fallback,
            coef_increment=increment,
        )
    )
    return True


def run(config: ModelConfig, data: dict, y, callback=None) -> FitState:
    """Fit the model: offsets, then mstop boosting iterations."""
    y = np.asarray(y, dtype=float)
    learners = build_model(config, data)
    offsets = init_offsets(config.spec, y)
    n = len(y)
    state = FitState(
        config=config,
        learners=learners,
        y=y,
        offsets=offsets,
        eta=[np.full(n, o) for o in offsets],
        coef=[[np.zeros(bu.dp.p_orig) for bu in group] for group in learners],
    )
    if callback is not None:
        callback(state)
    for _ in range(config.mstop):
        try:
            ok = boost_step(state)
        except Exception as exc:
            raise type(exc)(f"iteration {len(state.trace) + 1}: {exc}") from exc
        if not ok:
            break
        if callback is not None:
            callback(state)
    return state


# ---------------------------------------------------------------------------
# Post-fit utilities


def coefficients_at(state: FitState, m: int) -> list:
    """Accumulated original-basis coefficients after iteration m."""
    coef = [[np.zeros(bu.dp.p_orig) for bu in group] for group in state.learners]
    for rec in state.trace[:m]:
        coef[rec.k_star][rec.j_star] = coef[rec.k_star][rec.j_star] + rec.coef_increment
    return coef


def predict(state: FitState, newdata: dict, upto: int | None = None, scale: str = "natural"):
    """Per-parameter predictions on new data.

    ``upto`` evaluates the model after that many boosting iterations
    (default: all completed iterations).  ``scale`` selects natural-scale
    parameter values or raw linear predictors.
    """
    spec = state.config.spec
    coef = state.coef if upto is None else coefficients_at(state, upto)
    n_params = spec.n_params
    out = {}
    n_new = None
    for k in range(n_params):
        eta = None
        for j, learner in enumerate(state.learners[k]):
            if learner.covariate not in newdata:
                raise DataError(f"covariate {learner.covariate!r} missing from new data")
            rows = learner.dp.design_rows(newdata[learner.covariate])
            if eta is None:
                n_new = rows.shape[0]
                eta = np.full(n_new, state.offsets[k])
            eta = eta + rows @ coef[k][j]
        name = spec.param_names[k]
        if scale == "link":
            out[name] = eta
        else:
            from .families import link_inverse

            out[name] = link_inverse(spec.links[k], eta)
    return out


def coefficient_paths(state: FitState):
    """Yield (iteration, parameter, base-learner, coefficient, value) rows.

    Cumulative original-basis coefficients after every iteration; a block
    is constant between its selection iterations.
    """
    spec = state.config.spec
    coef = [[np.zeros(bu.dp.p_orig) for bu in group] for group in state.learners]
    for rec in state.trace:
        coef[rec.k_star][rec.j_star] = coef[rec.k_star][rec.j_star] + rec.coef_increment
        for k, group in enumerate(state.learners):
            for j, learner in enumerate(group):
                for c, name in enumerate(learner.coef_names):
                    yield (rec.m, spec.param_names[k], learner.name, name, coef[k][j][c])


def selected_blocks(state: FitState, upto: int | None = None) -> dict:
    """Which (parameter, base-learner) blocks carry a nonzero update."""
    m = len(state.trace) if upto is None else upto
    spec = state.config.spec
    out = {
        spec.param_names[k]: {bu.name: False for bu in group}
        for k, group in enumerate(state.learners)
    }
    for rec in state.trace[:m]:
        name = state.learners[rec.k_star][rec.j_star].name
        out[spec.param_names[rec.k_star]][name] = True
    return out
