"""Batch command-line front-end: fit, cv, simulate and predict.

All commands consume CSV data plus a JSON run configuration and emit
plot-ready CSV files (long format, 17-significant-digit floats).  Errors
map onto exit codes: configuration 2, data 3, numeric 4; the message is
written as a one-line JSON object to stderr.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys

import numpy as np

from . import baselearners as bl
from . import boost, sim, tuning
from .errors import ConfigurationError, DataError, LssBoostError, NumericError
from .families import Family, FamilySpec, link_inverse

__all__ = ["main", "cmd_fit", "cmd_cv", "cmd_simulate", "cmd_predict"]

EXIT_CODES = [
    (ConfigurationError, 2),
    (DataError, 3),
    (NumericError, 4),
]

NA_STRINGS = {"", "NA", "NaN", "nan", "N/A", "null", "NULL"}

_FAMILY_NAMES = {
    "gaussian-ls": Family.GAUSSIAN_LS,
    "zinb": Family.ZINB,
}
_KIND_NAMES = {
    "linear": bl.LearnerKind.LINEAR,
    "categorical": bl.LearnerKind.CATEGORICAL,
    "pspline": bl.LearnerKind.PSPLINE,
    "mrf": bl.LearnerKind.MRF,
    "decomposition": bl.LearnerKind.DECOMPOSITION,
}


def _fmt(value) -> str:
    if isinstance(value, (float, np.floating)):
        return format(float(value), ".17g")
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    return str(value)


def _write_csv(path, header, rows) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(v) for v in row) + "\n")


# ---------------------------------------------------------------------------
# Run configuration


def _require_keys(obj: dict, allowed: set, context: str) -> None:
    unknown = set(obj) - allowed
    if unknown:
        raise ConfigurationError(
            f"unknown {context} keys: {sorted(unknown)!r}; allowed: {sorted(allowed)!r}"
        )


_TOP_KEYS = {
    "family",
    "response",
    "parameters",
    "categorical_columns",
    "interactions",
    "step",
    "mstop",
    "cv",
    "seed",
    "graph",
}
_LEARNER_KEYS = {"kind", "covariate", "df", "degree", "inner_knots", "diff_order"}
_STEP_KEYS = {"mode", "value"}
_CV_KEYS = {"folds", "seed"}


class RunConfig:
    """Validated run configuration loaded from a JSON document."""

    def __init__(self, doc: dict):
        if not isinstance(doc, dict):
            raise ConfigurationError("configuration must be a JSON object")
        _require_keys(doc, _TOP_KEYS, "configuration")
        family_name = doc.get("family")
        if family_name not in _FAMILY_NAMES:
            raise ConfigurationError(
                f"family must be one of {sorted(_FAMILY_NAMES)!r}, got {family_name!r}"
            )
        self.spec = FamilySpec(_FAMILY_NAMES[family_name])
        self.response = doc.get("response")
        if not isinstance(self.response, str):
            raise ConfigurationError("response column name is required")
        self.categorical_columns = tuple(doc.get("categorical_columns", ()))

        params = doc.get("parameters")
        if not isinstance(params, dict):
            raise ConfigurationError("parameters must map parameter name -> learner list")
        _require_keys(params, set(self.spec.param_names), "parameter")
        self.learners = []
        for pname in self.spec.param_names:
            specs = params.get(pname)
            if not specs:
                raise ConfigurationError(f"parameter {pname!r} needs a base-learner list")
            self.learners.append(tuple(self._parse_learner(s) for s in specs))

        self.interactions = []
        for pair in doc.get("interactions", ()):
            if not (isinstance(pair, list) and len(pair) == 2):
                raise ConfigurationError("each interaction must be a [col_a, col_b] pair")
            self.interactions.append(tuple(pair))

        step = doc.get("step", {})
        _require_keys(step, _STEP_KEYS, "step")
        self.step = boost.StepMode(
            mode=step.get("mode", boost.FIXED), value=float(step.get("value", 0.1))
        )
        self.mstop = int(doc.get("mstop", 100))
        cv = doc.get("cv", {})
        _require_keys(cv, _CV_KEYS, "cv")
        self.cv = tuning.CVPlan(
            folds=int(cv.get("folds", 10)), seed=int(cv.get("seed", 0))
        )
        self.seed = int(doc.get("seed", 0))
        self.graph_path = doc.get("graph")

    @staticmethod
    def _parse_learner(obj: dict) -> bl.BaseLearnerSpec:
        if not isinstance(obj, dict):
            raise ConfigurationError("each base-learner must be a JSON object")
        _require_keys(obj, _LEARNER_KEYS, "base-learner")
        kind_name = obj.get("kind")
        if kind_name not in _KIND_NAMES:
            raise ConfigurationError(
                f"base-learner kind must be one of {sorted(_KIND_NAMES)!r}, "
                f"got {kind_name!r}"
            )
        covariate = obj.get("covariate")
        if not isinstance(covariate, str):
            raise ConfigurationError("base-learner covariate name is required")
        kind = _KIND_NAMES[kind_name]
        df = obj.get("df", 2.0 if kind is not bl.LearnerKind.LINEAR else None)
        options = bl.PSplineOptions(
            degree=int(obj.get("degree", 3)),
            inner_knots=int(obj.get("inner_knots", 20)),
            diff_order=int(obj.get("diff_order", 2)),
        )
        return bl.BaseLearnerSpec(
            kind=kind,
            covariate=covariate,
            df_target=None if df is None else float(df),
            pspline=options,
        )

    def needs_graph(self) -> bool:
        return any(
            spec.kind is bl.LearnerKind.MRF for group in self.learners for spec in group
        )


def load_config(path) -> RunConfig:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    except OSError as exc:
        raise ConfigurationError(f"cannot read configuration: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"configuration is not valid JSON: {exc}") from exc
    return RunConfig(doc)


# ---------------------------------------------------------------------------
# CSV ingestion


def read_csv(path, categorical_columns=()) -> dict:
    """Read a headered CSV into column arrays.

    Declared categorical columns stay as strings; everything else must
    parse as a float.  Missing values are a hard error -- no imputation.
    """
    categorical = set(categorical_columns)
    try:
        with open(path, "r", encoding="utf-8", newline="") as fh:
            reader = csv.reader(fh)
            try:
                header = next(reader)
            except StopIteration:
                raise DataError(f"{path}: empty file") from None
            columns: dict = {name: [] for name in header}
            if len(columns) != len(header):
                raise DataError(f"{path}: duplicate column names in header")
            for lineno, row in enumerate(reader, start=2):
                if len(row) != len(header):
                    raise DataError(
                        f"{path}:{lineno}: expected {len(header)} cells, got {len(row)}"
                    )
                for name, cell in zip(header, row):
                    if cell.strip() in NA_STRINGS:
                        raise DataError(
                            f"{path}:{lineno}: missing value in column {name!r}"
                        )
                    columns[name].append(cell)
    except OSError as exc:
        raise DataError(f"cannot read data: {exc}") from exc

    out = {}
    for name, cells in columns.items():
        if name in categorical:
            out[name] = np.asarray(cells, dtype=object)
            continue
        try:
            out[name] = np.asarray(cells, dtype=float)
        except ValueError:
            raise DataError(
                f"column {name!r} is not numeric; declare it in "
                "categorical_columns if it holds levels"
            ) from None
    return out


def expand_interactions(config: RunConfig, data: dict):
    """Derive 0/1 product-dummy columns for each configured interaction pair.

    Every derived column gets its own unpenalized linear base-learner on
    every distribution parameter.  Returns (augmented data, learner lists).
    """
    data = dict(data)
    extra = []
    for a, b in config.interactions:
        for col in (a, b):
            if col not in data:
                raise DataError(f"interaction column {col!r} not found in data")
        col_a, col_b = np.asarray(data[a]), np.asarray(data[b])
        for la in sorted(set(col_a.tolist())):
            for lb in sorted(set(col_b.tolist())):
                name = f"{a}={la}:{b}={lb}"
                data[name] = ((col_a == la) & (col_b == lb)).astype(float)
                extra.append(
                    bl.BaseLearnerSpec(bl.LearnerKind.LINEAR, name, df_target=None)
                )
    learners = tuple(tuple(group) + tuple(extra) for group in config.learners)
    return data, learners


def _model_config(config: RunConfig, graph_path=None) -> tuple:
    path = graph_path or config.graph_path
    graph = None
    if path is not None:
        graph = bl.load_graph(path)
    elif config.needs_graph():
        raise ConfigurationError(
            "an MRF base-learner is configured but no graph file was given"
        )
    return graph


def _prepare(config: RunConfig, data_path, graph_path=None):
    graph = _model_config(config, graph_path)
    data = read_csv(data_path, config.categorical_columns)
    if config.response not in data:
        raise DataError(f"response column {config.response!r} not found in data")
    y = data[config.response]
    if y.dtype == object:
        raise DataError("response column must be numeric")
    data, learners = expand_interactions(config, data)
    model = boost.ModelConfig(
        spec=config.spec,
        learners=learners,
        step=config.step,
        mstop=config.mstop,
        graph=graph,
    )
    return model, data, y


# ---------------------------------------------------------------------------
# Model serialization


def _row_builder_doc(rb) -> dict:
    if isinstance(rb, bl.LinearRows):
        return {"type": "linear"}
    if isinstance(rb, bl.DummyRows):
        return {"type": "dummy", "levels": list(rb.levels), "what": rb.what}
    if isinstance(rb, bl.SplineRows):
        return {
            "type": "spline",
            "knots": list(rb.knots),
            "degree": rb.degree,
            "lo": rb.lo,
            "hi": rb.hi,
        }
    raise ConfigurationError(f"unsupported row builder {type(rb).__name__}")


def _row_builder_from_doc(doc: dict):
    kind = doc.get("type")
    if kind == "linear":
        return bl.LinearRows()
    if kind == "dummy":
        return bl.DummyRows(levels=tuple(doc["levels"]), what=doc["what"])
    if kind == "spline":
        return bl.SplineRows(
            knots=tuple(doc["knots"]),
            degree=int(doc["degree"]),
            lo=float(doc["lo"]),
            hi=float(doc["hi"]),
        )
    raise DataError(f"model file: unknown row builder type {kind!r}")


def model_to_doc(fit: boost.FitState, config: RunConfig) -> dict:
    spec = fit.config.spec
    doc = {
        "family": spec.family.value,
        "categorical_columns": list(config.categorical_columns),
        "offsets": [float(o) for o in fit.offsets],
        "mstop": fit.mstop_reached,
        "parameters": [],
    }
    for k, group in enumerate(fit.learners):
        doc["parameters"].append(
            {
                "name": spec.param_names[k],
                "learners": [
                    {
                        "name": learner.name,
                        "covariate": learner.covariate,
                        "rows": _row_builder_doc(learner.dp.row_builder),
                        "coef": [float(c) for c in fit.coef[k][j]],
                    }
                    for j, learner in enumerate(group)
                ],
            }
        )
    return doc


def predict_from_doc(doc: dict, data: dict) -> dict:
    """Per-parameter link-scale predictions from a serialized model."""
    family = _FAMILY_NAMES.get(doc.get("family"))
    if family is None:
        raise DataError(f"model file: unknown family {doc.get('family')!r}")
    spec = FamilySpec(family)
    offsets = doc["offsets"]
    out = {}
    for k, pdoc in enumerate(doc["parameters"]):
        eta = None
        for ldoc in pdoc["learners"]:
            cov = ldoc["covariate"]
            if cov not in data:
                raise DataError(f"covariate {cov!r} missing from data")
            rb = _row_builder_from_doc(ldoc["rows"])
            rows = rb.rows(data[cov])
            if eta is None:
                eta = np.full(rows.shape[0], float(offsets[k]))
            eta = eta + rows @ np.asarray(ldoc["coef"], dtype=float)
        out[pdoc["name"]] = (spec.links[k], eta)
    return out


# ---------------------------------------------------------------------------
# Commands


def cmd_fit(args) -> int:
    config = load_config(args.config)
    model, data, y = _prepare(config, args.data, args.graph)
    fit = boost.run(model, data, y)
    os.makedirs(args.out, exist_ok=True)
    spec = model.spec

    _write_csv(
        os.path.join(args.out, "coefficients.csv"),
        ["parameter", "baselearner", "coefficient", "value"],
        [
            (spec.param_names[k], learner.name, cname, fit.coef[k][j][c])
            for k, group in enumerate(fit.learners)
            for j, learner in enumerate(group)
            for c, cname in enumerate(learner.coef_names)
        ],
    )
    _write_csv(
        os.path.join(args.out, "paths.csv"),
        ["iteration", "parameter", "baselearner", "coefficient", "value"],
        boost.coefficient_paths(fit),
    )
    _write_csv(
        os.path.join(args.out, "steplengths.csv"),
        ["iteration", "parameter", "baselearner", "nu", "nu_star", "fallback"],
        [
            (
                rec.m,
                spec.param_names[rec.k_star],
                fit.learners[rec.k_star][rec.j_star].name,
                rec.nu,
                "" if rec.nu_star is None else _fmt(rec.nu_star),
                rec.fallback_used,
            )
            for rec in fit.trace
        ],
    )
    _write_csv(
        os.path.join(args.out, "trace.csv"),
        ["iteration", "parameter", "baselearner", "nu", "risk"],
        [
            (
                rec.m,
                spec.param_names[rec.k_star],
                fit.learners[rec.k_star][rec.j_star].name,
                rec.nu,
                rec.inner_risk,
            )
            for rec in fit.trace
        ],
    )
    with open(os.path.join(args.out, "model.json"), "w", encoding="utf-8") as fh:
        json.dump(model_to_doc(fit, config), fh, indent=1, sort_keys=True)
        fh.write("\n")
    return 0


def cmd_cv(args) -> int:
    config = load_config(args.config)
    model, data, y = _prepare(config, args.data, args.graph)
    curve = tuning.cv_risk(model, data, y, config.cv, config.mstop)
    mstop = tuning.robust_mstop(curve)
    os.makedirs(args.out, exist_ok=True)
    folds = curve.per_fold.shape[0]
    _write_csv(
        os.path.join(args.out, "risk_curve.csv"),
        ["iteration", "mean"] + [f"fold{f}" for f in range(folds)],
        [
            [m, curve.mean[m]] + list(curve.per_fold[:, m])
            for m in range(len(curve.mean))
        ],
    )
    with open(os.path.join(args.out, "mstop.txt"), "w", encoding="utf-8") as fh:
        fh.write(f"{mstop}\n")
    return 0


def _parse_setting(name: str, n, seed) -> sim.SettingSpec:
    for fam_name, family in _FAMILY_NAMES.items():
        short = fam_name.split("-")[0]  # gaussian-ls -> "gaussian"
        for prefix in (fam_name, short):
            if name.startswith(prefix + "-"):
                variant = name[len(prefix) + 1 :].replace("_", "-")
                return sim.SettingSpec(
                    family=family, effect_variant=variant, n=n, seed=seed
                )
    raise ConfigurationError(
        f"unknown setting {name!r}; use <family>-<variant>, e.g. "
        "gaussian-categorical or zinb-nonlinear"
    )


def cmd_simulate(args) -> int:
    setting = _parse_setting(args.setting, args.n, args.seed)
    runs = 100 if args.full_scale else args.runs
    mode_names = args.modes.split(",")
    modes = []
    for m in mode_names:
        m = m.strip()
        if m not in (boost.FIXED, boost.SHRUNK_OPTIMAL):
            raise ConfigurationError(f"unknown step mode {m!r}")
        modes.append(boost.StepMode(mode=m, value=args.step_value))
    mstop_max = None
    if args.mstop_max is not None:
        mstop_max = {m.mode: args.mstop_max for m in modes}
    report = sim.run_study(
        setting,
        runs=runs,
        step_modes=modes,
        mstop_max=mstop_max,
        workers=args.workers,
    )
    sim.write_report(report, args.out)
    return 0


def cmd_predict(args) -> int:
    try:
        with open(args.model, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    except OSError as exc:
        raise DataError(f"cannot read model: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise DataError(f"model file is not valid JSON: {exc}") from exc
    data = read_csv(args.data, doc.get("categorical_columns", ()))
    preds = predict_from_doc(doc, data)
    names = list(preds)
    n = len(next(iter(preds.values()))[1])
    os.makedirs(args.out, exist_ok=True)
    header = ["row"]
    for name in names:
        header += [f"eta_{name}", name]
    rows = []
    for i in range(n):
        row = [i]
        for name in names:
            link, eta = preds[name]
            row += [eta[i], float(link_inverse(link, eta[i]))]
        rows.append(row)
    _write_csv(os.path.join(args.out, "predictions.csv"), header, rows)
    return 0


# ---------------------------------------------------------------------------
# Entry point


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="lssboost",
        description="Component-wise gradient boosting for distributional regression",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_fit = sub.add_parser("fit", help="fit a model and write coefficient reports")
    p_fit.add_argument("--config", required=True)
    p_fit.add_argument("--data", required=True)
    p_fit.add_argument("--graph", default=None)
    p_fit.add_argument("--out", required=True)
    p_fit.set_defaults(func=cmd_fit)

    p_cv = sub.add_parser("cv", help="cross-validated risk curve and stopping iteration")
    p_cv.add_argument("--config", required=True)
    p_cv.add_argument("--data", required=True)
    p_cv.add_argument("--graph", default=None)
    p_cv.add_argument("--out", required=True)
    p_cv.set_defaults(func=cmd_cv)

    p_sim = sub.add_parser("simulate", help="run a multi-run simulation study")
    p_sim.add_argument("--setting", required=True)
    p_sim.add_argument("--runs", type=int, default=20)
    p_sim.add_argument("--full-scale", action="store_true", help="run 100 replications")
    p_sim.add_argument("--modes", default="fixed,shrunk-optimal")
    p_sim.add_argument("--step-value", type=float, default=0.1)
    p_sim.add_argument("--n", type=int, default=None)
    p_sim.add_argument(
        "--mstop-max", type=int, default=None, help="cap on boosting iterations per fit"
    )
    p_sim.add_argument("--seed", type=int, default=0)
    p_sim.add_argument("--workers", type=int, default=os.cpu_count() or 1)
    p_sim.add_argument("--out", required=True)
    p_sim.set_defaults(func=cmd_simulate)

    p_pred = sub.add_parser("predict", help="predictions from a serialized model")
    p_pred.add_argument("--model", required=True)
    p_pred.add_argument("--data", required=True)
    p_pred.add_argument("--out", required=True)
    p_pred.set_defaults(func=cmd_predict)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except LssBoostError as exc:
        code = 1
        for klass, c in EXIT_CODES:
            if isinstance(exc, klass):
                code = c
                break
        print(
            json.dumps({"error": type(exc).__name__, "message": str(exc)}),
            file=sys.stderr,
        )
        return code


if __name__ == "__main__":
    sys.exit(main())
