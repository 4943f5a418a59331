"""Design/penalty construction and penalized least-squares fitting.

Each base-learner is a penalized linear model fitted to the negative
gradient: coef = (X'X + lambda K)^{-1} X'u.  Builders produce the design
matrix X, the penalty K and (for smooth and spatial effects) a centering
transform Z such that the fitted design is X_orig @ Z; accumulated
coefficients are stored in the original basis via beta = Z @ gamma.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import interpolate, linalg, optimize

from .errors import ConfigurationError, DataError, NumericError

__all__ = [
    "LearnerKind",
    "PSplineOptions",
    "BaseLearnerSpec",
    "DesignPenalty",
    "Graph",
    "load_graph",
    "parse_graph",
    "build",
    "effective_df",
    "solve_lambda_for_df",
    "fit",
]


class LearnerKind(enum.Enum):
    LINEAR = "linear"
    CATEGORICAL = "categorical"
    PSPLINE = "pspline"
    MRF = "mrf"
    DECOMPOSITION = "decomposition"


@dataclass(frozen=True)
class PSplineOptions:
    degree: int = 3
    inner_knots: int = 20
    diff_order: int = 2


@dataclass(frozen=True)
class BaseLearnerSpec:
    """Declarative base-learner: effect type, covariate and flexibility."""

    kind: LearnerKind
    covariate: str
    df_target: float | None = 2.0  # None means unpenalized
    pspline: PSplineOptions = PSplineOptions()

    @property
    def penalized(self) -> bool:
        return self.kind in (
            LearnerKind.CATEGORICAL,
            LearnerKind.PSPLINE,
            LearnerKind.MRF,
        )


# ---------------------------------------------------------------------------
# MRF graphs


@dataclass(frozen=True)
class Graph:
    regions: tuple[str, ...]
    edges: frozenset  # frozenset of frozensets {a, b}

    def neighbors(self, region: str):
        return sorted(
            other
            for e in self.edges
            if region in e
            for other in e
            if other != region
        )

    def laplacian(self) -> np.ndarray:
        idx = {r: i for i, r in enumerate(self.regions)}
        k = np.zeros((len(self.regions), len(self.regions)))
        for e in self.edges:
            a, b = sorted(e)
            k[idx[a], idx[b]] = k[idx[b], idx[a]] = -1.0
        np.fill_diagonal(k, -k.sum(axis=1))
        return k

    def is_connected(self) -> bool:
        if not self.regions:
            return False
        seen = {self.regions[0]}
        stack = [self.regions[0]]
        while stack:
            for nb in self.neighbors(stack.pop()):
                if nb not in seen:
                    seen.add(nb)
                    stack.append(nb)
        return len(seen) == len(self.regions)


def parse_graph(text: str) -> Graph:
    """Parse the ``region: neighbor neighbor ...`` graph format."""
    adjacency: dict[str, set] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if ":" not in line:
            raise DataError(f"graph line {lineno}: expected 'region: neighbors'")
        region, _, rest = line.partition(":")
        region = region.strip()
        if region in adjacency:
            raise DataError(f"graph line {lineno}: duplicate region {region!r}")
        adjacency[region] = set(rest.split())
    for region, nbs in adjacency.items():
        for nb in nbs:
            if nb not in adjacency:
                raise DataError(f"region {region!r} lists unknown neighbor {nb!r}")
            if region not in adjacency[nb]:
                raise DataError(
                    f"asymmetric adjacency: {region!r} -> {nb!r} but not back"
                )
    regions = tuple(sorted(adjacency))
    edges = frozenset(
        frozenset((a, b)) for a, nbs in adjacency.items() for b in nbs
    )
    return Graph(regions=regions, edges=edges)


def load_graph(path) -> Graph:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_graph(fh.read())


# ---------------------------------------------------------------------------
# Row builders: map new covariate values to uncentered design rows


@dataclass(frozen=True)
class LinearRows:
    def rows(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return np.column_stack([np.ones_like(x), x])


@dataclass(frozen=True)
class DummyRows:
    levels: tuple
    what: str = "level"

    def rows(self, x) -> np.ndarray:
        index = {lv: j for j, lv in enumerate(self.levels)}
        out = np.zeros((len(x), len(self.levels)))
        for i, v in enumerate(np.asarray(x).tolist()):
            j = index.get(v)
            if j is None:
                raise DataError(f"unseen {self.what} {v!r} at row {i}")
            out[i, j] = 1.0
        return out


@dataclass(frozen=True)
class SplineRows:
    knots: tuple
    degree: int
    lo: float
    hi: float

    def rows(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        t = np.asarray(self.knots)
        p = len(t) - self.degree - 1
        spl = interpolate.BSpline(t, np.eye(p), self.degree)
        xc = np.clip(x, self.lo, self.hi)
        out = spl(xc)
        # linear extrapolation beyond the training range
        outside = (x < self.lo) | (x > self.hi)
        if np.any(outside):
            d1 = spl.derivative(1)
            out[outside] += (x[outside] - xc[outside])[:, None] * d1(xc[outside])
        return out


@dataclass
class DesignPenalty:
    """Realized base-learner: design, penalty, penalty scalar, centering."""

    name: str
    spec: BaseLearnerSpec
    X: np.ndarray  # n x p design used for fitting (already centered)
    K: np.ndarray  # p x p symmetric PSD penalty
    lambda_tilde: float
    Z: np.ndarray  # p_orig x p back-transform of coefficients
    row_builder: object
    _solver: object = field(default=None, repr=False, compare=False)

    @property
    def p_orig(self) -> int:
        return self.Z.shape[0]

    def design_rows(self, x) -> np.ndarray:
        """Uncentered design rows for new covariate values."""
        return self.row_builder.rows(x)

    def solver(self) -> "PenalizedSolver":
        if self._solver is None or self._solver.lam != self.lambda_tilde:
            self._solver = PenalizedSolver(self)
        return self._solver


class PenalizedSolver:
    """Cached factorization of X'X + lambda K for repeated gradient fits."""

    def __init__(self, dp: DesignPenalty):
        self.lam = dp.lambda_tilde
        self.X = dp.X
        a = dp.X.T @ dp.X + dp.lambda_tilde * dp.K
        try:
            self.cho = linalg.cho_factor(a, lower=True)
        except linalg.LinAlgError as exc:
            raise NumericError(
                f"singular penalized system for base-learner {dp.name!r}"
            ) from exc

    def fit(self, u: np.ndarray):
        gamma = linalg.cho_solve(self.cho, self.X.T @ u)
        return self.X @ gamma, gamma


def fit(dp: DesignPenalty, u: np.ndarray):
    """Penalized least-squares fit of the negative gradient.

    Returns (fitted n-vector, coefficient increment in the centered basis).
    """
    u = np.asarray(u, dtype=float)
    if u.shape[0] != dp.X.shape[0]:
        raise ValueError("gradient length does not match design")
    return dp.solver().fit(u)


def _centering_transform(X: np.ndarray, constraints: np.ndarray):
    """Orthonormal basis Z of {beta : constraints' X... C'beta = 0}."""
    z = linalg.null_space(constraints.T)
    return z


def _check_psd(k: np.ndarray, name: str) -> None:
    w = np.linalg.eigvalsh((k + k.T) / 2.0)
    norm = max(abs(w[0]), abs(w[-1]), 1e-300)
    if w[0] < -1e-10 * norm:
        raise NumericError(f"penalty of {name!r} is not PSD (min eig {w[0]:g})")


def build(
    spec: BaseLearnerSpec,
    data: dict,
    graph: Graph | None = None,
) -> list[DesignPenalty]:
    """Construct the design/penalty object(s) for one base-learner spec.

    Returns a single-element list for plain effects; the linear-plus-smooth
    decomposition yields two sibling entries (unpenalized linear part and
    a penalized smooth deviation orthogonal to it).
    """
    if spec.covariate not in data:
        raise DataError(f"covariate {spec.covariate!r} not found in data")
    col = data[spec.covariate]
    name = spec.covariate

    if spec.kind is LearnerKind.LINEAR:
        x = np.asarray(col, dtype=float)
        rb = LinearRows()
        X = rb.rows(x)
        return [
            DesignPenalty(
                name=name,
                spec=spec,
                X=X,
                K=np.zeros((2, 2)),
                lambda_tilde=0.0,
                Z=np.eye(2),
                row_builder=rb,
            )
        ]

    if spec.kind is LearnerKind.CATEGORICAL:
        levels = tuple(sorted(set(np.asarray(col).tolist())))
        rb = DummyRows(levels=levels)
        X = rb.rows(col)
        return [
            DesignPenalty(
                name=name,
                spec=spec,
                X=X,
                K=np.eye(len(levels)),
                lambda_tilde=0.0,
                Z=np.eye(len(levels)),
                row_builder=rb,
            )
        ]

    if spec.kind is LearnerKind.MRF:
        if graph is None:
            raise ConfigurationError(
                f"base-learner {name!r} needs an adjacency graph"
            )
        if not graph.is_connected():
            raise DataError("MRF graph is disconnected")
        observed = set(np.asarray(col).tolist())
        unknown = observed - set(graph.regions)
        if unknown:
            raise DataError(f"regions not in graph: {sorted(unknown)!r}")
        rb = DummyRows(levels=graph.regions, what="region")
        X0 = rb.rows(col)
        K0 = graph.laplacian()
        z = _centering_transform(X0, X0.T @ np.ones(X0.shape[0])[:, None])
        Kc = z.T @ K0 @ z
        _check_psd(Kc, name)
        return [
            DesignPenalty(
                name=name,
                spec=spec,
                X=X0 @ z,
                K=(Kc + Kc.T) / 2.0,
                lambda_tilde=0.0,
                Z=z,
                row_builder=rb,
            )
        ]

    if spec.kind in (LearnerKind.PSPLINE, LearnerKind.DECOMPOSITION):
        x = np.asarray(col, dtype=float)
        lo, hi = float(np.min(x)), float(np.max(x))
        if hi - lo <= 0.0:
            raise DataError(f"covariate {name!r} is constant; cannot place knots")
        opts = spec.pspline
        step = (hi - lo) / (opts.inner_knots + 1)
        grid = np.linspace(lo, hi, opts.inner_knots + 2)
        t = np.concatenate(
            [
                lo - step * np.arange(opts.degree, 0, -1),
                grid,
                hi + step * np.arange(1, opts.degree + 1),
            ]
        )
        rb = SplineRows(knots=tuple(t), degree=opts.degree, lo=lo, hi=hi)
        X0 = rb.rows(x)
        p = X0.shape[1]
        d = np.diff(np.eye(p), n=opts.diff_order, axis=0)
        K0 = d.T @ d

        if spec.kind is LearnerKind.PSPLINE:
            constraints = X0.T @ np.ones(len(x))[:, None]
            part_names = [name]
        else:
            constraints = X0.T @ np.column_stack([np.ones_like(x), x])
            part_names = [f"{name}(linear)", f"{name}(smooth)"]
        z = _centering_transform(X0, constraints)
        Kc = z.T @ K0 @ z
        _check_psd(Kc, name)
        smooth = DesignPenalty(
            name=part_names[-1],
            spec=spec,
            X=X0 @ z,
            K=(Kc + Kc.T) / 2.0,
            lambda_tilde=0.0,
            Z=z,
            row_builder=rb,
        )
        if spec.kind is LearnerKind.PSPLINE:
            return [smooth]
        lin_rb = LinearRows()
        lin = DesignPenalty(
            name=part_names[0],
            spec=replace(spec, df_target=None),
            X=lin_rb.rows(x),
            K=np.zeros((2, 2)),
            lambda_tilde=0.0,
            Z=np.eye(2),
            row_builder=lin_rb,
        )
        return [lin, smooth]

    raise ConfigurationError(f"unknown base-learner kind {spec.kind!r}")


def effective_df(dp: DesignPenalty, lambda_tilde: float) -> float:
    """trace(X (X'X + lambda K)^{-1} X') via a Cholesky factorization."""
    if lambda_tilde < 0:
        raise ValueError("lambda_tilde must be nonnegative")
    xtx = dp.X.T @ dp.X
    a = xtx + lambda_tilde * dp.K
    try:
        cho = linalg.cho_factor(a, lower=True)
    except linalg.LinAlgError as exc:
        raise NumericError(
            f"singular system for base-learner {dp.name!r} at lambda="
            f"{lambda_tilde:g}; the design is rank deficient -- center the "
            "design or adjust the base-learner specification"
        ) from exc
    return float(np.trace(linalg.cho_solve(cho, xtx)))


_LAMBDA_LO = 1e-10
_LAMBDA_HI = 1e10


def solve_lambda_for_df(dp: DesignPenalty, df_target: float) -> float:
    """Penalty scalar hitting the requested equivalent degrees of freedom.

    Bisection (Brent) on log lambda over [1e-10, 1e10], exploiting that the
    trace is nonincreasing in lambda.  Unpenalized learners short-circuit
    to lambda = 0.
    """
    if not np.any(dp.K):
        return 0.0
    df0 = effective_df(dp, 0.0)
    if abs(df0 - df_target) <= 1e-8:
        return 0.0
    df_inf = effective_df(dp, _LAMBDA_HI)
    if not (df_inf < df_target < df0):
        raise ConfigurationError(
            f"df target {df_target:g} for base-learner {dp.name!r} outside "
            f"the attainable range ({df_inf:.6g}, {df0:.6g})"
        )

    def gap(log_lam: float) -> float:
        return effective_df(dp, 10.0**log_lam) - df_target

    log_lam = optimize.brentq(
        gap, np.log10(_LAMBDA_LO), np.log10(_LAMBDA_HI), xtol=1e-13, rtol=8.9e-16
    )
    lam = 10.0**log_lam
    if abs(effective_df(dp, lam) - df_target) > 1e-8:
        raise NumericError(
            f"df calibration for {dp.name!r} did not reach tolerance"
        )
    return lam
