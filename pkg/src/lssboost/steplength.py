"""Optimal step lengths along a fitted base-learner direction.

The optimal step nu* minimizes the negative log-likelihood along
eta_k + nu * h.  It is found by Newton's method on the first-order
condition d/d nu NLL = -sum u_k(eta_k + nu h) * h, with a golden-section
line search as fallback oracle, and finally shrunk by a factor lambda.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateDirectionError, UnboundedDirectionError
from .families import FamilySpec, ParamState, negative_gradient, nll

__all__ = [
    "StepContext",
    "StepResult",
    "WarmStartTable",
    "foc",
    "nll_along",
    "optimal_step_newton",
    "line_search",
    "shrunk",
    "golden_min",
]

NEWTON_MAX_ITER = 100
NEWTON_FOC_TOL = 1e-13
NEWTON_STEP_TOL = 1e-11
NEWTON_PLATEAU_TOL = 1e-6
NEWTON_DIVERGE = 1e6
LINE_SEARCH_BOUNDS = (1e-8, 1e4)
LINE_SEARCH_MAX_UPPER = 1e6
LINE_SEARCH_WIDTH = 1e-6


@dataclass
class StepContext:
    """Frozen inputs of one step-length solve."""

    spec: FamilySpec
    k: int
    eta_prev: list  # per-parameter predictor vectors from the last iteration
    h_star: np.ndarray  # fitted base-learner values, per observation
    y: np.ndarray

    def __post_init__(self):
        self.h_star = np.asarray(self.h_star, dtype=float)
        self.y = np.asarray(self.y, dtype=float)
        if not np.any(self.h_star):
            raise DegenerateDirectionError(
                "fitted base-learner direction is identically zero"
            )

    def state_at(self, nu: float) -> ParamState:
        eta = list(self.eta_prev)
        eta[self.k] = eta[self.k] + nu * self.h_star
        return ParamState(spec=self.spec, eta=eta)


def nll_along(ctx: StepContext, nu: float) -> float:
    """Negative log-likelihood along the direction; +inf outside the domain."""
    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        val = nll(ctx.spec, ctx.state_at(nu), ctx.y)
    return val if np.isfinite(val) else np.inf


def foc(ctx: StepContext, nu: float) -> float:
    """d/d nu of the NLL along the direction (first-order condition)."""
    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        u = negative_gradient(ctx.spec, ctx.state_at(nu), ctx.y, ctx.k)
        val = -float(np.dot(u, ctx.h_star))
    return val


@dataclass
class WarmStartTable:
    """Last successful nu* per (parameter index, base-learner id)."""

    values: dict = field(default_factory=dict)
    default: float = 1.0

    def get(self, key) -> float:
        return self.values.get(key, self.default)

    def update(self, key, nu_star: float) -> None:
        if np.isfinite(nu_star) and nu_star > 0:
            self.values[key] = float(nu_star)


@dataclass(frozen=True)
class StepResult:
    nu_star: float
    fallback_used: bool
    improving: bool


def golden_min(f, lo: float, hi: float, width: float) -> float:
    """Golden-section minimizer of a unimodal f on [lo, hi]."""
    invphi = (np.sqrt(5.0) - 1.0) / 2.0
    a, b = lo, hi
    c = b - invphi * (b - a)
    d = a + invphi * (b - a)
    fc, fd = f(c), f(d)
    while b - a > width:
        if fc < fd:
            b, d, fd = d, c, fc
            c = b - invphi * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + invphi * (b - a)
            fd = f(d)
    return (a + b) / 2.0


def line_search(ctx: StepContext, bounds=LINE_SEARCH_BOUNDS) -> float:
    """Golden-section search for the first local minimum along the direction.

    A coarse geometric grid brackets the minimum before the golden section
    refines it; the likelihood along the direction need not be unimodal over
    twelve decades (it can saturate into a plateau, overflow to +inf, or
    develop a second, distant basin once the step leaves the neighbourhood
    where the fitted direction is meaningful), so the scan stops at the
    first clear rise after a descent rather than taking the global argmin.
    """
    lo, hi = bounds
    f = lambda nu: nll_along(ctx, nu)
    while True:
        grid = np.geomspace(lo, hi, 200)
        vals = np.array([f(v) for v in grid])
        if not np.any(np.isfinite(vals)):
            raise UnboundedDirectionError(
                "likelihood not finite anywhere along the direction"
            )
        vals = np.where(np.isfinite(vals), vals, np.inf)
        best = 0
        bracketed = False
        for i in range(1, len(grid)):
            if vals[i] < vals[best]:
                best = i
            elif vals[i] > vals[best] + 1e-9 * (1.0 + abs(vals[best])):
                bracketed = True
                break
        if bracketed or best < len(grid) - 1:
            a = grid[max(best - 1, 0)]
            b = grid[min(best + 1, len(grid) - 1)]
            return golden_min(f, a, b, LINE_SEARCH_WIDTH * max(1.0, a))
        # still descending at the upper bound: expand the bracket
        hi *= 10.0
        if hi > LINE_SEARCH_MAX_UPPER:
            raise UnboundedDirectionError(
                "no interior minimum along the direction up to nu=1e6"
            )


def _fd_step(nu: float) -> float:
    return max(1e-6, 1e-6 * abs(nu))


def optimal_step_newton(
    ctx: StepContext,
    warm: WarmStartTable | None = None,
    key=None,
) -> StepResult:
    """Newton iteration on the first-order condition with line-search fallback.

    The Newton derivative uses a central finite difference of the analytic
    FOC.  Divergence, non-convergence, domain exit or a non-positive root
    all fall back to :func:`line_search`; a fallback that ends up at the
    search lower bound marks the direction as non-improving.
    """
    if warm is None:
        warm = WarmStartTable()
    nu = warm.get(key) if key is not None else warm.default

    converged = False
    slope = np.nan
    prev_step = np.inf
    for _ in range(NEWTON_MAX_ITER):
        f = foc(ctx, nu)
        if not np.isfinite(f):
            break
        h = _fd_step(nu)
        f_hi, f_lo = foc(ctx, nu + h), foc(ctx, nu - h)
        if not (np.isfinite(f_hi) and np.isfinite(f_lo)):
            break
        slope = (f_hi - f_lo) / (2.0 * h)
        if abs(f) <= NEWTON_FOC_TOL:
            converged = True
            break
        if slope == 0.0 or not np.isfinite(slope):
            break
        nu_new = nu - f / slope
        if abs(nu_new) > NEWTON_DIVERGE or not np.isfinite(nu_new):
            break
        step = abs(nu_new - nu)
        scale = max(1.0, abs(nu_new))
        nu = nu_new
        if step <= NEWTON_STEP_TOL * scale:
            converged = True
            break
        # rounding noise keeps the iterates jittering below this scale;
        # a non-shrinking tiny step means the root is resolved
        if step <= NEWTON_PLATEAU_TOL * scale and step >= 0.5 * prev_step:
            converged = True
            break
        prev_step = step

    # require a positive root that is a local minimum (positive curvature)
    if converged and nu > 0 and np.isfinite(slope) and slope > 0:
        if warm is not None and key is not None:
            warm.update(key, nu)
        return StepResult(nu_star=float(nu), fallback_used=False, improving=True)

    nu_ls = line_search(ctx)
    improving = nu_ls > LINE_SEARCH_BOUNDS[0] * 2.0
    if improving and key is not None:
        warm.update(key, nu_ls)
    return StepResult(nu_star=float(nu_ls), fallback_used=True, improving=improving)


def shrunk(nu_star: float, shrinkage: float) -> float:
    """Shrunk optimal step length: nu = shrinkage * nu*."""
    if not 0.0 < shrinkage <= 1.0:
        raise ValueError("shrinkage must lie in (0, 1]")
    return shrinkage * nu_star
