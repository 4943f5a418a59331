"""Simulation settings, data generators, metrics and study aggregation.

Settings combine 26 baseline covariates (odd indices continuous uniform
on (-1, 1), even indices Bernoulli(0.5); x7..x26 non-informative) with an
additional categorical, non-linear or discrete spatial effect.  Ground
truth coefficients follow the study designs the defaults were taken from.
"""

from __future__ import annotations

import importlib.resources
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import baselearners as bl
from . import boost
from . import tuning
from .errors import ConfigurationError
from .families import (
    Family,
    FamilySpec,
    ParamState,
    cramer_batch,
    crps_batch,
    nll,
)

__all__ = [
    "SettingSpec",
    "TruthBundle",
    "RunResult",
    "StudyReport",
    "nigeria_graph",
    "generate",
    "default_learners",
    "evaluate",
    "run_study",
    "write_report",
]

VARIANTS = (
    "categorical",
    "nonlinear",
    "spatial-informative",
    "spatial-noninformative",
    "all",
)

DEFAULT_N = {Family.GAUSSIAN_LS: 500, Family.ZINB: 4000}

# Linear ground truth, intercept first.
GAUSSIAN_COEF = (
    (0.0, {"x1": -1.5, "x2": 2.5, "x3": 1.5, "x4": -2.5}),
    (2.0, {"x3": 0.2, "x4": 0.5, "x5": -0.2, "x6": -0.5}),
)
ZINB_COEF = (
    (1.8, {"x1": 0.2, "x2": -0.35, "x3": -0.2, "x4": 0.35}),
    (-1.1, {"x2": 0.6, "x3": 0.5, "x4": -0.6, "x5": -0.5}),
    (-0.8, {"x3": 1.0, "x4": -1.25, "x5": -1.0, "x6": 1.25}),
)

# Five-level categorical effect values (levels 1..5).
GAUSSIAN_CAT = (
    (-2.0, -1.5, 0.0, 1.5, 2.0),
    (-0.4, -0.2, 0.0, 0.2, 0.4),
)
ZINB_CAT = (
    (0.2, 0.1, 0.0, -0.1, -0.2),
    (0.25, 0.15, 0.0, -0.15, -0.25),
    (0.8, 0.6, 0.0, -0.6, -0.8),
)


def _gauss_nl_mu(z):
    return 8.0 * np.sin(np.pi / 2.0 + z) - 6.5


def _gauss_nl_sigma(z):
    return (2.85 * z) ** 3 / 6.0 - 2.85 * z


def _zinb_nl_mu(z):
    return -0.7 * (np.log(z + 1.15) - 0.9 * z) - 0.03


def _zinb_nl_alpha(z):
    return 2.1 * np.sin(np.pi / 2.0 + z) - 1.767


def _zinb_nl_pi(z):
    return (2.0 * z) ** 3 / 3.0 - 2.0 * z


GAUSSIAN_NL = (_gauss_nl_mu, _gauss_nl_sigma)
ZINB_NL = (_zinb_nl_mu, _zinb_nl_alpha, _zinb_nl_pi)

# Region-averaged f(s1, s2) = s1 + s2 on the six-zone graph, centered
# exactly so the uniform-weight sum over regions vanishes.
_SPATIAL_RAW = np.array([-0.001, 0.3, 0.141, -0.103, -0.145, -0.191])
SPATIAL_BASE = _SPATIAL_RAW - _SPATIAL_RAW.mean()
# Effect size per parameter as a multiple of the base pattern.
GAUSSIAN_SPATIAL_SCALE = (10.0, 1.0)
ZINB_SPATIAL_SCALE = (-1.0, 1.0, 1.0)


def nigeria_graph() -> bl.Graph:
    text = (
        importlib.resources.files("lssboost.data")
        .joinpath("nigeria_zones.graph")
        .read_text(encoding="utf-8")
    )
    return bl.parse_graph(text)


@dataclass(frozen=True)
class SettingSpec:
    family: Family
    effect_variant: str
    n: int | None = None
    seed: object = 0

    def __post_init__(self):
        if self.effect_variant not in VARIANTS:
            raise ConfigurationError(
                f"unknown effect variant {self.effect_variant!r}; "
                f"choose from {VARIANTS}"
            )

    @property
    def n_obs(self) -> int:
        return self.n if self.n is not None else DEFAULT_N[self.family]


@dataclass
class TruthBundle:
    setting: SettingSpec
    data: dict  # covariate columns plus the response "y"
    y: np.ndarray
    eta: tuple  # true per-parameter predictors
    theta: tuple  # true natural-scale parameters
    informative: dict  # parameter name -> set of informative covariate names


def _family_tables(spec: FamilySpec):
    if spec.family is Family.GAUSSIAN_LS:
        return GAUSSIAN_COEF, GAUSSIAN_CAT, GAUSSIAN_NL, GAUSSIAN_SPATIAL_SCALE
    return ZINB_COEF, ZINB_CAT, ZINB_NL, ZINB_SPATIAL_SCALE


def _z_columns(variant: str):
    """Extra-effect columns: (name, type, informative)."""
    if variant == "categorical":
        return [("z1", "categorical", True), ("z2", "categorical", False)]
    if variant == "nonlinear":
        return [("z1", "nonlinear", True), ("z2", "nonlinear", False)]
    if variant == "spatial-informative":
        return [("z1", "spatial", True)]
    if variant == "spatial-noninformative":
        return [("z1", "spatial", False)]
    return [
        ("zc1", "categorical", True),
        ("zc2", "categorical", False),
        ("zn1", "nonlinear", True),
        ("zn2", "nonlinear", False),
        ("zs1", "spatial", True),
    ]


def generate(setting: SettingSpec) -> TruthBundle:
    """Draw one data set with ground truth from the chosen setting."""
    rng = np.random.default_rng(setting.seed)
    spec = FamilySpec(setting.family)
    n = setting.n_obs
    coef_table, cat_table, nl_table, spatial_scale = _family_tables(spec)

    data: dict = {}
    for j in range(1, 27):
        if j % 2 == 1:
            data[f"x{j}"] = rng.uniform(-1.0, 1.0, size=n)
        else:
            data[f"x{j}"] = rng.binomial(1, 0.5, size=n).astype(float)

    graph = nigeria_graph()
    zcols = _z_columns(setting.effect_variant)
    z_effects = {k: np.zeros(n) for k in range(spec.n_params)}
    informative = {name: set() for name in spec.param_names}
    for zname, ztype, is_inf in zcols:
        if ztype == "categorical":
            z = rng.integers(1, 6, size=n)
            data[zname] = z
            if is_inf:
                for k, values in enumerate(cat_table):
                    z_effects[k] = z_effects[k] + np.asarray(values)[z - 1]
        elif ztype == "nonlinear":
            z = rng.uniform(-1.0, 1.0, size=n)
            data[zname] = z
            if is_inf:
                for k, f in enumerate(nl_table):
                    z_effects[k] = z_effects[k] + f(z)
        else:
            idx = rng.integers(0, len(graph.regions), size=n)
            data[zname] = np.asarray(graph.regions)[idx]
            if is_inf:
                for k, scale in enumerate(spatial_scale):
                    z_effects[k] = z_effects[k] + scale * SPATIAL_BASE[idx]
        if is_inf:
            for pname in spec.param_names:
                informative[pname].add(zname)

    eta = []
    for k, (intercept, slopes) in enumerate(coef_table):
        e = np.full(n, float(intercept))
        for cov, beta in slopes.items():
            e = e + beta * data[cov]
            informative[spec.param_names[k]].add(cov)
        eta.append(e + z_effects[k])

    state = ParamState(spec=spec, eta=eta)
    theta = tuple(state.theta(k) for k in range(spec.n_params))
    if spec.family is Family.GAUSSIAN_LS:
        y = rng.normal(theta[0], theta[1])
    else:
        mu, alpha, pi = theta
        nb = rng.negative_binomial(1.0 / alpha, 1.0 / (1.0 + alpha * mu))
        zero = rng.random(n) < pi
        y = np.where(zero, 0, nb).astype(float)
    data["y"] = y
    return TruthBundle(
        setting=setting,
        data=data,
        y=y,
        eta=tuple(eta),
        theta=theta,
        informative=informative,
    )


def default_learners(setting: SettingSpec, df_target: float = 2.0):
    """The study's base-learner set, identical for every parameter."""
    specs = [
        bl.BaseLearnerSpec(bl.LearnerKind.LINEAR, f"x{j}", df_target=None)
        for j in range(1, 27)
    ]
    for zname, ztype, _ in _z_columns(setting.effect_variant):
        kind = {
            "categorical": bl.LearnerKind.CATEGORICAL,
            "nonlinear": bl.LearnerKind.PSPLINE,
            "spatial": bl.LearnerKind.MRF,
        }[ztype]
        specs.append(bl.BaseLearnerSpec(kind, zname, df_target=df_target))
    spec = FamilySpec(setting.family)
    return tuple(tuple(specs) for _ in range(spec.n_params))


def make_config(setting: SettingSpec, step: boost.StepMode, mstop: int,
                df_target: float = 2.0) -> boost.ModelConfig:
    return boost.ModelConfig(
        spec=FamilySpec(setting.family),
        learners=default_learners(setting, df_target=df_target),
        step=step,
        mstop=mstop,
        graph=nigeria_graph(),
    )


# ---------------------------------------------------------------------------
# Metrics


def point_mean(spec: FamilySpec, theta: tuple) -> np.ndarray:
    """The distribution mean: mu, or (1 - pi) mu for the zero-inflated family."""
    if spec.family is Family.GAUSSIAN_LS:
        return np.asarray(theta[0])
    return (1.0 - np.asarray(theta[2])) * np.asarray(theta[0])


def evaluate(fit: boost.FitState, test: TruthBundle, upto: int | None = None) -> dict:
    """Predictive metrics of a fitted model on an independent test bundle."""
    spec = fit.config.spec
    eta_hat = boost.predict(fit, test.data, upto=upto, scale="link")
    state_hat = ParamState.from_eta(spec, [eta_hat[p] for p in spec.param_names])
    theta_hat = tuple(state_hat.theta(k) for k in range(spec.n_params))

    crps = np.mean(crps_batch(spec, theta_hat, test.y))
    cramer = np.mean(cramer_batch(spec, theta_hat, test.theta))
    test_nll = nll(spec, state_hat, test.y)
    mse = float(
        np.mean((point_mean(spec, theta_hat) - point_mean(spec, test.theta)) ** 2)
    )
    return {
        "crps": float(crps),
        "cramer_dist": float(cramer),
        "nll": float(test_nll),
        "mse": mse,
    }


# ---------------------------------------------------------------------------
# Multi-run studies


@dataclass
class RunResult:
    run: int
    mode: str
    mstop: int
    metrics: dict
    selected: dict  # parameter -> {learner name: bool} at the stopped iteration
    update_counts: dict  # parameter -> updates within the balance window
    coefficients: list  # (parameter, learner, coefficient, value) at mstop


@dataclass
class StudyReport:
    setting: SettingSpec
    modes: tuple
    runs: list = field(default_factory=list)

    def select_count(self, mode: str, param: str, learner: str) -> int:
        return sum(
            1
            for r in self.runs
            if r.mode == mode and r.selected[param].get(learner, False)
        )


DEFAULT_MSTOP_MAX = {boost.FIXED: 1500, boost.SHRUNK_OPTIMAL: 600}
BALANCE_WINDOW = 200


def _run_one(args):
    (setting, run_idx, modes, cv_folds, mstop_max, balance_window) = args
    master = setting.seed
    train = generate(
        SettingSpec(setting.family, setting.effect_variant, setting.n, (master, run_idx, 0))
    )
    test = generate(
        SettingSpec(setting.family, setting.effect_variant, setting.n, (master, run_idx, 1))
    )
    spec = FamilySpec(setting.family)
    results = []
    for mode in modes:
        cap = mstop_max[mode.mode]
        config = make_config(setting, mode, mstop=cap)
        plan = tuning.CVPlan(folds=cv_folds, seed=abs(hash((master, run_idx, 2))) % (2**32))
        curve = tuning.cv_risk(config, train.data, train.y, plan, cap)
        mstop = tuning.robust_mstop(curve)
        fit_iters = max(mstop, balance_window)
        fit = boost.run(
            boost.ModelConfig(
                spec=spec,
                learners=config.learners,
                step=mode,
                mstop=fit_iters,
                graph=config.graph,
            ),
            train.data,
            train.y,
        )
        metrics = evaluate(fit, test, upto=mstop)
        selected = boost.selected_blocks(fit, upto=mstop)
        counts = {name: 0 for name in spec.param_names}
        for rec in fit.trace[:balance_window]:
            counts[spec.param_names[rec.k_star]] += 1
        coef_at = boost.coefficients_at(fit, mstop)
        coefficients = []
        for k, group in enumerate(fit.learners):
            for j, learner in enumerate(group):
                for c, cname in enumerate(learner.coef_names):
                    coefficients.append(
                        (spec.param_names[k], learner.name, cname, float(coef_at[k][j][c]))
                    )
        results.append(
            RunResult(
                run=run_idx,
                mode=mode.mode,
                mstop=mstop,
                metrics=metrics,
                selected=selected,
                update_counts=counts,
                coefficients=coefficients,
            )
        )
    return results


def run_study(
    setting: SettingSpec,
    runs: int,
    step_modes,
    cv_folds: int = 10,
    mstop_max: dict | None = None,
    workers: int = 1,
    balance_window: int = BALANCE_WINDOW,
) -> StudyReport:
    """Generate, CV-stop, fit and evaluate ``runs`` matched replications.

    Data sets are matched across step modes (one generator stream per run)
    and every run derives its streams from (master seed, run index), so
    reports are reproducible for any worker count.
    """
    if runs < 1:
        raise ConfigurationError("need at least one run")
    mstop_max = dict(DEFAULT_MSTOP_MAX, **(mstop_max or {}))
    modes = tuple(step_modes)
    args = [
        (setting, r, modes, cv_folds, mstop_max, balance_window)
        for r in range(runs)
    ]
    report = StudyReport(setting=setting, modes=modes)
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            for batch in pool.map(_run_one, args):
                report.runs.extend(batch)
    else:
        for a in args:
            report.runs.extend(_run_one(a))
    return report


# ---------------------------------------------------------------------------
# CSV output


def _fmt(value) -> str:
    if isinstance(value, float):
        return format(value, ".17g")
    return str(value)


def _write_csv(path, header, rows) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(v) for v in row) + "\n")


def write_report(report: StudyReport, outdir) -> None:
    """Emit mstop.csv, selection_counts.csv, metrics.csv, coefficients.csv."""
    import os

    os.makedirs(outdir, exist_ok=True)
    param_names = FamilySpec(report.setting.family).param_names

    _write_csv(
        os.path.join(outdir, "mstop.csv"),
        ["run", "mode", "mstop"] + [f"updates_{p}" for p in param_names],
        [
            [r.run, r.mode, r.mstop] + [r.update_counts[p] for p in param_names]
            for r in report.runs
        ],
    )
    learner_names = []
    if report.runs:
        first = report.runs[0]
        learner_names = list(first.selected[param_names[0]])
    n_runs = {m.mode: sum(1 for r in report.runs if r.mode == m.mode) for m in report.modes}
    _write_csv(
        os.path.join(outdir, "selection_counts.csv"),
        ["mode", "parameter", "baselearner", "count", "runs"],
        [
            [m.mode, p, ln, report.select_count(m.mode, p, ln), n_runs[m.mode]]
            for m in report.modes
            for p in param_names
            for ln in learner_names
        ],
    )
    metric_keys = ["crps", "cramer_dist", "nll", "mse"]
    _write_csv(
        os.path.join(outdir, "metrics.csv"),
        ["run", "mode"] + metric_keys,
        [[r.run, r.mode] + [r.metrics[k] for k in metric_keys] for r in report.runs],
    )
    _write_csv(
        os.path.join(outdir, "coefficients.csv"),
        ["run", "mode", "parameter", "baselearner", "coefficient", "value"],
        [
            [r.run, r.mode, p, ln, cname, value]
            for r in report.runs
            for (p, ln, cname, value) in r.coefficients
        ],
    )
