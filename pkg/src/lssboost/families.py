"""Response families: likelihoods, links, gradients and scoring rules.

Two families are supported: a Gaussian location-scale model (parameters
mu, sigma) and a zero-inflated negative binomial model (mu, alpha, pi).
Everything operates on the linear-predictor (link) scale internally; the
zero-inflation probability pi in particular is only ever materialized
from its logit, so the boundaries 0 and 1 are never evaluated exactly.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np
from scipy import special, stats

from .errors import ParameterDomainError

__all__ = [
    "Family",
    "FamilySpec",
    "ParamState",
    "GAUSSIAN_LS",
    "ZINB",
    "nll",
    "loglik",
    "negative_gradient",
    "prob_mass_or_density",
    "cdf",
    "support_truncation",
    "crps_obs",
    "cramer_dist",
    "crps_batch",
    "cramer_batch",
]

_HALF_LOG_2PI = 0.5 * np.log(2.0 * np.pi)

# Truncated support of a count distribution keeps all mass up to this tail.
TAIL_MASS = 1e-12


class Family(enum.Enum):
    GAUSSIAN_LS = "gaussian-ls"
    ZINB = "zinb"


_PARAMS = {
    Family.GAUSSIAN_LS: ("mu", "sigma"),
    Family.ZINB: ("mu", "alpha", "pi"),
}

_LINKS = {
    Family.GAUSSIAN_LS: ("identity", "log"),
    Family.ZINB: ("log", "log", "logit"),
}


@dataclass(frozen=True)
class FamilySpec:
    """Response family plus its per-parameter link functions."""

    family: Family

    @property
    def param_names(self) -> tuple[str, ...]:
        return _PARAMS[self.family]

    @property
    def links(self) -> tuple[str, ...]:
        return _LINKS[self.family]

    @property
    def n_params(self) -> int:
        return len(_PARAMS[self.family])


GAUSSIAN_LS = FamilySpec(Family.GAUSSIAN_LS)
ZINB = FamilySpec(Family.ZINB)


def link_apply(name: str, theta):
    theta = np.asarray(theta, dtype=float)
    if name == "identity":
        return theta
    if name == "log":
        return np.log(theta)
    if name == "logit":
        return special.logit(theta)
    raise ValueError(f"unknown link {name!r}")


def link_inverse(name: str, eta):
    eta = np.asarray(eta, dtype=float)
    if name == "identity":
        return eta
    if name == "log":
        return np.exp(eta)
    if name == "logit":
        return special.expit(eta)
    raise ValueError(f"unknown link {name!r}")


@dataclass
class ParamState:
    """Per-parameter linear predictors of one model state.

    ``eta[k]`` holds the predictor of the k-th distribution parameter on
    its link scale, one entry per observation.  Natural-scale values are
    materialized on demand via :meth:`theta`.
    """

    spec: FamilySpec
    eta: list = field(default_factory=list)

    @classmethod
    def from_eta(cls, spec: FamilySpec, eta_vectors) -> "ParamState":
        eta = [np.asarray(e, dtype=float) for e in eta_vectors]
        if len(eta) != spec.n_params:
            raise ValueError(
                f"{spec.family.value} has {spec.n_params} parameters, "
                f"got {len(eta)} predictors"
            )
        n = eta[0].shape[0]
        if any(e.shape != (n,) for e in eta):
            raise ValueError("predictor vectors must share one length")
        return cls(spec=spec, eta=eta)

    @classmethod
    def from_theta(cls, spec: FamilySpec, theta_vectors) -> "ParamState":
        _check_theta_domain(spec, theta_vectors)
        eta = [
            link_apply(link, th)
            for link, th in zip(spec.links, theta_vectors)
        ]
        return cls.from_eta(spec, eta)

    @property
    def n_obs(self) -> int:
        return self.eta[0].shape[0]

    def theta(self, k: int) -> np.ndarray:
        return link_inverse(self.spec.links[k], self.eta[k])

    def with_shift(self, k: int, delta: np.ndarray) -> "ParamState":
        eta = list(self.eta)
        eta[k] = eta[k] + delta
        return ParamState(spec=self.spec, eta=eta)


def _check_theta_domain(spec: FamilySpec, theta_vectors) -> None:
    names = spec.param_names
    for name, th in zip(names, theta_vectors):
        th = np.asarray(th, dtype=float)
        if name in ("sigma", "alpha") or (name == "mu" and spec.family is Family.ZINB):
            bad = ~(th > 0.0)
        elif name == "pi":
            bad = ~((th > 0.0) & (th < 1.0))
        else:
            bad = ~np.isfinite(th)
        if np.any(bad):
            i = int(np.flatnonzero(bad)[0])
            raise ParameterDomainError(
                f"parameter {name!r} out of domain at index {i}: {th.flat[i]}"
            )


def _check_response(spec: FamilySpec, y: np.ndarray) -> None:
    if spec.family is Family.ZINB:
        bad = ~(np.isfinite(y) & (y >= 0) & (y == np.floor(y)))
        if np.any(bad):
            i = int(np.flatnonzero(bad)[0])
            raise ParameterDomainError(
                f"ZINB response must be a nonnegative integer; index {i}: {y[i]}"
            )
    else:
        if not np.all(np.isfinite(y)):
            i = int(np.flatnonzero(~np.isfinite(y))[0])
            raise ParameterDomainError(f"non-finite response at index {i}")


def loglik(spec: FamilySpec, state: ParamState, y) -> np.ndarray:
    """Per-observation log-likelihood at the given state."""
    y = np.asarray(y, dtype=float)
    if y.shape != (state.n_obs,):
        raise ValueError("response length does not match state")
    _check_response(spec, y)

    if spec.family is Family.GAUSSIAN_LS:
        mu = state.eta[0]
        log_sigma = state.eta[1]
        z = (y - mu) * np.exp(-log_sigma)
        return -_HALF_LOG_2PI - log_sigma - 0.5 * z * z

    # ZINB; everything on the eta scale for stability
    eta_mu, eta_alpha, eta_pi = state.eta
    mu = np.exp(eta_mu)
    alpha = np.exp(eta_alpha)
    log1p_am = np.log1p(alpha * mu)
    log_c = -log1p_am / alpha  # log of the NB zero probability
    out = np.empty_like(y)

    zero = y == 0
    if np.any(zero):
        # ln(pi + (1 - pi) * c) written as a stable logaddexp on the logit scale
        out[zero] = np.logaddexp(
            special.log_expit(eta_pi[zero]),
            special.log_expit(-eta_pi[zero]) + log_c[zero],
        )
    pos = ~zero
    if np.any(pos):
        yp = y[pos]
        inv_alpha = np.exp(-eta_alpha[pos])
        out[pos] = (
            special.log_expit(-eta_pi[pos])
            + yp * (eta_alpha[pos] + eta_mu[pos] - log1p_am[pos])
            - inv_alpha * log1p_am[pos]
            + special.gammaln(yp + inv_alpha)
            - special.gammaln(yp + 1.0)
            - special.gammaln(inv_alpha)
        )
    return out


def nll(spec: FamilySpec, state: ParamState, y) -> float:
    """Total negative log-likelihood (the boosting loss)."""
    return -float(np.sum(loglik(spec, state, y)))


def negative_gradient(spec: FamilySpec, state: ParamState, y, k: int) -> np.ndarray:
    """Analytic negative gradient d loglik / d eta_k, per observation."""
    y = np.asarray(y, dtype=float)
    _check_response(spec, y)

    if spec.family is Family.GAUSSIAN_LS:
        mu = state.eta[0]
        inv_var = np.exp(-2.0 * state.eta[1])
        r = y - mu
        if k == 0:
            return r * inv_var
        if k == 1:
            return -1.0 + r * r * inv_var
        raise IndexError(k)

    eta_mu, eta_alpha, eta_pi = state.eta
    mu = np.exp(eta_mu)
    alpha = np.exp(eta_alpha)
    am = alpha * mu
    log1p_am = np.log1p(am)
    zero = y == 0
    pos = ~zero
    u = np.empty_like(y)

    if k == 0:
        # d l / d eta_mu
        if np.any(zero):
            # -mu / (pi/(1-pi) * (1+am)^(1/alpha+1) + (1+am))
            log_den = np.logaddexp(
                eta_pi[zero] + (1.0 / alpha[zero] + 1.0) * log1p_am[zero],
                log1p_am[zero],
            )
            u[zero] = -np.exp(eta_mu[zero] - log_den)
        u[pos] = (y[pos] - mu[pos]) / (1.0 + am[pos])
        return u
    if k == 1:
        # d l / d eta_alpha
        if np.any(zero):
            inv_a = 1.0 / alpha[zero]
            num = inv_a * log1p_am[zero] - mu[zero] / (1.0 + am[zero])
            log_den = np.logaddexp(eta_pi[zero] + inv_a * log1p_am[zero], 0.0)
            u[zero] = num * np.exp(-log_den)
        if np.any(pos):
            inv_a = 1.0 / alpha[pos]
            u[pos] = (y[pos] - mu[pos]) / (1.0 + am[pos]) + inv_a * (
                log1p_am[pos]
                - special.digamma(y[pos] + inv_a)
                + special.digamma(inv_a)
            )
        return u
    if k == 2:
        # d l / d eta_pi
        if np.any(zero):
            log_c = -log1p_am[zero] / alpha[zero]
            ep = eta_pi[zero]
            # pi (1-pi) (1-c) / (pi + (1-pi) c), assembled in log space
            log_mix = np.logaddexp(special.log_expit(ep), special.log_expit(-ep) + log_c)
            with np.errstate(divide="ignore"):
                log_1mc = np.log(-np.expm1(log_c))
            u[zero] = np.exp(
                special.log_expit(ep) + special.log_expit(-ep) + log_1mc - log_mix
            )
        u[pos] = -special.expit(eta_pi[pos])
        return u
    raise IndexError(k)


# ---------------------------------------------------------------------------
# Density / mass, CDF and scoring rules (scalar parameter sets)


def _zinb_parts(theta):
    mu, alpha, pi = (float(t) for t in theta)
    _check_theta_domain(ZINB, ([mu], [alpha], [pi]))
    r = 1.0 / alpha
    p = 1.0 / (1.0 + alpha * mu)  # NB success probability in scipy convention
    return mu, alpha, pi, r, p


def prob_mass_or_density(spec: FamilySpec, theta, y) -> float:
    """pdf (Gaussian) or pmf (ZINB) of a single parameter set at y."""
    if spec.family is Family.GAUSSIAN_LS:
        mu, sigma = (float(t) for t in theta)
        _check_theta_domain(spec, ([mu], [sigma]))
        return float(stats.norm.pdf(y, loc=mu, scale=sigma))
    mu, alpha, pi, r, p = _zinb_parts(theta)
    y = np.asarray(y)
    base = (1.0 - pi) * stats.nbinom.pmf(y, r, p)
    out = np.where(y == 0, pi + base, base)
    return float(out) if out.ndim == 0 else out


def cdf(spec: FamilySpec, theta, y) -> float:
    if spec.family is Family.GAUSSIAN_LS:
        mu, sigma = (float(t) for t in theta)
        _check_theta_domain(spec, ([mu], [sigma]))
        return stats.norm.cdf(y, loc=mu, scale=sigma)
    mu, alpha, pi, r, p = _zinb_parts(theta)
    y = np.asarray(y)
    out = np.where(y < 0, 0.0, pi + (1.0 - pi) * stats.nbinom.cdf(y, r, p))
    return float(out) if out.ndim == 0 else out


def support_truncation(spec: FamilySpec, theta) -> int:
    """Smallest T (doubling search) with upper-tail mass below TAIL_MASS."""
    if spec.family is not Family.ZINB:
        raise ValueError("support truncation only applies to count families")
    mu, alpha, pi, r, p = _zinb_parts(theta)
    t = 16
    while (1.0 - pi) * stats.nbinom.sf(t, r, p) >= TAIL_MASS:
        t *= 2
        if t > 1 << 40:
            raise OverflowError("support truncation did not converge")
    return t


def crps_obs(spec: FamilySpec, theta, y: float) -> float:
    """Continuous ranked probability score of one forecast/observation pair."""
    if spec.family is Family.GAUSSIAN_LS:
        mu, sigma = (float(t) for t in theta)
        _check_theta_domain(spec, ([mu], [sigma]))
        z = (y - mu) / sigma
        return float(
            sigma
            * (
                z * (2.0 * stats.norm.cdf(z) - 1.0)
                + 2.0 * stats.norm.pdf(z)
                - 1.0 / np.sqrt(np.pi)
            )
        )
    mu, alpha, pi, r, p = _zinb_parts(theta)
    t = max(support_truncation(spec, theta), int(y))
    ks = np.arange(t + 1)
    f = pi + (1.0 - pi) * stats.nbinom.cdf(ks, r, p)
    ind = (y <= ks).astype(float)
    return float(np.sum((f - ind) ** 2))


def _gaussian_mean_abs(m, s):
    """E|Z| for Z ~ N(m, s^2), vectorized."""
    z = m / s
    return m * (2.0 * special.ndtr(z) - 1.0) + 2.0 * s * np.exp(
        -0.5 * z * z
    ) / np.sqrt(2.0 * np.pi)


def cramer_dist(spec: FamilySpec, theta_hat, theta_true) -> float:
    """Squared-CDF distance between two members of the same family.

    For two Gaussians the integral has a closed form through the energy
    distance identity  int (F-G)^2 = E|X-Y| - E|X-X'|/2 - E|Y-Y'|/2.
    """
    if spec.family is Family.GAUSSIAN_LS:
        m1, s1 = (float(t) for t in theta_hat)
        m2, s2 = (float(t) for t in theta_true)
        _check_theta_domain(spec, ([m1], [s1]))
        _check_theta_domain(spec, ([m2], [s2]))
        cross = _gaussian_mean_abs(m1 - m2, np.hypot(s1, s2))
        return float(cross - (s1 + s2) / np.sqrt(np.pi))

    t = max(
        support_truncation(spec, theta_hat),
        support_truncation(spec, theta_true),
    )
    ks = np.arange(t + 1)
    f1 = cdf(spec, theta_hat, ks)
    f2 = cdf(spec, theta_true, ks)
    return float(np.sum((f1 - f2) ** 2))


# ---------------------------------------------------------------------------
# Vectorized scoring over whole samples


def _zinb_grid_cdf(theta, ks):
    """Mixture CDF on a shared integer grid; theta holds parameter vectors."""
    mu, alpha, pi = (np.asarray(t, dtype=float) for t in theta)
    r = 1.0 / alpha
    p = 1.0 / (1.0 + alpha * mu)
    return pi[:, None] + (1.0 - pi[:, None]) * stats.nbinom.cdf(
        ks[None, :], r[:, None], p[:, None]
    )


def _zinb_shared_truncation(thetas, extra=0.0) -> int:
    t = 16
    while True:
        tails = [
            (1.0 - np.asarray(th[2])) * stats.nbinom.sf(
                t, 1.0 / np.asarray(th[1]), 1.0 / (1.0 + np.asarray(th[1]) * np.asarray(th[0]))
            )
            for th in thetas
        ]
        if all(np.all(tl < TAIL_MASS) for tl in tails):
            break
        t *= 2
        if t > 1 << 40:
            raise OverflowError("support truncation did not converge")
    return max(t, int(extra))


def crps_batch(spec: FamilySpec, theta, y) -> np.ndarray:
    """Per-observation CRPS for vectors of parameters and responses."""
    y = np.asarray(y, dtype=float)
    if spec.family is Family.GAUSSIAN_LS:
        mu, sigma = (np.asarray(t, dtype=float) for t in theta)
        z = (y - mu) / sigma
        return sigma * (
            z * (2.0 * stats.norm.cdf(z) - 1.0)
            + 2.0 * stats.norm.pdf(z)
            - 1.0 / np.sqrt(np.pi)
        )
    t = _zinb_shared_truncation([theta], extra=np.max(y))
    out = np.empty(len(y))
    for start in range(0, len(y), 512):  # chunked: the grid can be long
        sl = slice(start, start + 512)
        ks = np.arange(t + 1)
        f = _zinb_grid_cdf([th[sl] for th in theta], ks)
        ind = (y[sl, None] <= ks[None, :]).astype(float)
        out[sl] = np.sum((f - ind) ** 2, axis=1)
    return out


def cramer_batch(spec: FamilySpec, theta_hat, theta_true) -> np.ndarray:
    """Per-observation squared-CDF distances between fitted and true laws."""
    if spec.family is Family.GAUSSIAN_LS:
        m1, s1 = (np.asarray(t, dtype=float) for t in theta_hat)
        m2, s2 = (np.asarray(t, dtype=float) for t in theta_true)
        cross = _gaussian_mean_abs(m1 - m2, np.hypot(s1, s2))
        return cross - (s1 + s2) / np.sqrt(np.pi)
    t = _zinb_shared_truncation([theta_hat, theta_true])
    n = len(np.asarray(theta_hat[0]))
    out = np.empty(n)
    ks = np.arange(t + 1)
    for start in range(0, n, 512):
        sl = slice(start, start + 512)
        f1 = _zinb_grid_cdf([th[sl] for th in theta_hat], ks)
        f2 = _zinb_grid_cdf([th[sl] for th in theta_true], ks)
        out[sl] = np.sum((f1 - f2) ** 2, axis=1)
    return out
