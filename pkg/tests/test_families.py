"""Likelihood, gradient and scoring-rule tests for the response families."""

import mpmath
import numpy as np
import pytest
from scipy import special, stats

from lssboost.errors import ParameterDomainError
from lssboost.families import (
    GAUSSIAN_LS,
    ZINB,
    Family,
    FamilySpec,
    ParamState,
    cdf,
    cramer_dist,
    crps_obs,
    loglik,
    negative_gradient,
    nll,
    prob_mass_or_density,
    support_truncation,
)


def random_state(spec, rng, n=40):
    """A random valid ParamState with moderate predictor values."""
    if spec.family is Family.GAUSSIAN_LS:
        eta = [rng.normal(0.0, 2.0, n), rng.normal(0.0, 0.7, n)]
    else:
        eta = [rng.normal(0.7, 0.6, n), rng.normal(-0.5, 0.5, n), rng.normal(0.0, 1.0, n)]
    return ParamState.from_eta(spec, eta)


def random_response(spec, state, rng):
    if spec.family is Family.GAUSSIAN_LS:
        return rng.normal(state.theta(0), state.theta(1))
    mu, alpha, pi = (state.theta(k) for k in range(3))
    nb = rng.negative_binomial(1.0 / alpha, 1.0 / (1.0 + alpha * mu))
    return np.where(rng.random(len(mu)) < pi, 0, nb).astype(float)


# ---------------------------------------------------------------------------
# Likelihood values against an independent high-precision oracle


def zinb_loglik_mpmath(y, mu, alpha, pi):
    """ZINB log-likelihood from its textbook definition, 50-digit arithmetic."""
    mu, alpha, pi = mpmath.mpf(mu), mpmath.mpf(alpha), mpmath.mpf(pi)
    inv_a = 1 / alpha
    c = (1 + alpha * mu) ** (-inv_a)
    if y == 0:
        return float(mpmath.log(pi + (1 - pi) * c))
    y = mpmath.mpf(int(y))
    term = (
        mpmath.log(1 - pi)
        + y * mpmath.log(alpha * mu / (1 + alpha * mu))
        - inv_a * mpmath.log(1 + alpha * mu)
        + mpmath.loggamma(y + inv_a)
        - mpmath.loggamma(y + 1)
        - mpmath.loggamma(inv_a)
    )
    return float(term)


def test_zinb_loglik_matches_high_precision_definition():
    mpmath.mp.dps = 50
    rng = np.random.default_rng(7)
    state = random_state(ZINB, rng, n=30)
    y = random_response(ZINB, state, rng)
    ours = loglik(ZINB, state, y)
    for i in range(len(y)):
        ref = zinb_loglik_mpmath(
            y[i], state.theta(0)[i], state.theta(1)[i], state.theta(2)[i]
        )
        assert ours[i] == pytest.approx(ref, rel=1e-12, abs=1e-12)


def test_gaussian_loglik_matches_scipy():
    rng = np.random.default_rng(3)
    state = random_state(GAUSSIAN_LS, rng)
    y = random_response(GAUSSIAN_LS, state, rng)
    ref = stats.norm.logpdf(y, loc=state.theta(0), scale=state.theta(1))
    np.testing.assert_allclose(loglik(GAUSSIAN_LS, state, y), ref, rtol=1e-12)


def test_zinb_loglik_stable_at_extreme_predictors():
    # large |eta| must not overflow into nan; -inf is acceptable only never
    eta = [np.array([30.0, -30.0]), np.array([8.0, -8.0]), np.array([35.0, -35.0])]
    state = ParamState.from_eta(ZINB, eta)
    vals = loglik(ZINB, state, np.array([0.0, 4.0]))
    assert np.all(np.isfinite(vals))


def test_special_function_backend_matches_mpmath():
    # the likelihood leans on log-gamma and digamma; spot-check the backend
    mpmath.mp.dps = 40
    for x in (0.07, 0.9, 3.5, 17.2, 240.0):
        assert special.gammaln(x) == pytest.approx(float(mpmath.loggamma(x)), rel=1e-12)
        assert special.digamma(x) == pytest.approx(float(mpmath.digamma(x)), rel=1e-12)


# ---------------------------------------------------------------------------
# Gradients against central finite differences


def fd_gradient(spec, state, y, k, i, h=1e-6):
    """Central finite difference of the total log-likelihood in eta_k[i]."""
    shift = np.zeros(state.n_obs)
    shift[i] = h
    up = nll(spec, state.with_shift(k, shift), y)
    dn = nll(spec, state.with_shift(k, -shift), y)
    return -(up - dn) / (2.0 * h)


@pytest.mark.parametrize("spec", [GAUSSIAN_LS, ZINB], ids=["gaussian", "zinb"])
def test_negative_gradient_matches_finite_differences(spec):
    rng = np.random.default_rng(11)
    for _ in range(10):
        state = random_state(spec, rng, n=8)
        y = random_response(spec, state, rng)
        for k in range(spec.n_params):
            u = negative_gradient(spec, state, y, k)
            for i in range(0, 8, 3):
                ref = fd_gradient(spec, state, y, k, i)
                assert u[i] == pytest.approx(ref, rel=5e-6, abs=5e-7)


def test_zinb_gradient_zero_branch_extremes():
    # y = 0 with extreme logit(pi): gradient stays finite and bounded
    eta = [np.full(3, 1.0), np.full(3, -0.5), np.array([-25.0, 0.0, 25.0])]
    state = ParamState.from_eta(ZINB, eta)
    y = np.zeros(3)
    for k in range(3):
        u = negative_gradient(ZINB, state, y, k)
        assert np.all(np.isfinite(u))
    # pi near 1: almost all mass on the spike, mu gradient ~ 0
    assert abs(negative_gradient(ZINB, state, y, 0)[2]) < 1e-8


def test_gaussian_gradient_closed_forms():
    state = ParamState.from_eta(GAUSSIAN_LS, [np.array([1.0]), np.array([np.log(2.0)])])
    y = np.array([3.0])
    assert negative_gradient(GAUSSIAN_LS, state, y, 0)[0] == pytest.approx(2.0 / 4.0)
    assert negative_gradient(GAUSSIAN_LS, state, y, 1)[0] == pytest.approx(-1.0 + 4.0 / 4.0)


# ---------------------------------------------------------------------------
# Domain and response validation


def test_zinb_response_must_be_nonnegative_integer():
    state = random_state(ZINB, np.random.default_rng(0), n=3)
    with pytest.raises(ParameterDomainError):
        nll(ZINB, state, np.array([0.0, 1.5, 2.0]))
    with pytest.raises(ParameterDomainError):
        nll(ZINB, state, np.array([0.0, -1.0, 2.0]))


def test_from_theta_rejects_boundary_parameters():
    with pytest.raises(ParameterDomainError, match="sigma"):
        ParamState.from_theta(GAUSSIAN_LS, [np.array([0.0]), np.array([0.0])])
    with pytest.raises(ParameterDomainError, match="pi"):
        ParamState.from_theta(
            ZINB, [np.array([1.0]), np.array([1.0]), np.array([1.0])]
        )


def test_link_roundtrip():
    rng = np.random.default_rng(5)
    state = random_state(ZINB, rng)
    back = ParamState.from_theta(ZINB, [state.theta(k) for k in range(3)])
    for k in range(3):
        np.testing.assert_allclose(back.eta[k], state.eta[k], rtol=1e-10)


# ---------------------------------------------------------------------------
# pmf / cdf / truncation


def test_zinb_pmf_zero_inflation():
    theta = (2.0, 0.5, 0.3)
    p0 = prob_mass_or_density(ZINB, theta, 0)
    assert p0 == pytest.approx(0.3 + 0.7 * (1 + 0.5 * 2.0) ** (-2.0), rel=1e-12)


def test_zinb_truncated_pmf_sums_to_one():
    theta = (3.0, 0.8, 0.25)
    t = support_truncation(ZINB, theta)
    total = prob_mass_or_density(ZINB, theta, np.arange(t + 1)).sum()
    assert total == pytest.approx(1.0, abs=1e-8)


def test_cdf_monotone_and_saturating():
    theta = (4.0, 0.4, 0.1)
    ks = np.arange(0, 200)
    f = cdf(ZINB, theta, ks)
    assert np.all(np.diff(f) >= -1e-15)
    assert f[-1] == pytest.approx(1.0, abs=1e-9)
    assert cdf(ZINB, theta, -1) == 0.0


# ---------------------------------------------------------------------------
# Scoring rules


def crps_monte_carlo(draws, y):
    x = np.sort(draws)
    n = len(x)
    e_abs = np.mean(np.abs(x - y))
    # E|X - X'| from the sorted-sample identity
    spread = 2.0 * np.sum((2.0 * np.arange(1, n + 1) - n - 1) * x) / (n * n)
    return e_abs - 0.5 * spread


def test_gaussian_crps_closed_form_vs_monte_carlo():
    rng = np.random.default_rng(2024)
    mu, sigma, y = 0.7, 1.3, 1.9
    draws = rng.normal(mu, sigma, 2_000_000)
    mc = crps_monte_carlo(draws, y)
    assert crps_obs(GAUSSIAN_LS, (mu, sigma), y) == pytest.approx(mc, abs=2e-3)


def test_zinb_crps_vs_monte_carlo():
    rng = np.random.default_rng(99)
    theta = (3.0, 0.6, 0.3)
    mu, alpha, pi = theta
    nb = rng.negative_binomial(1 / alpha, 1 / (1 + alpha * mu), 400_000)
    draws = np.where(rng.random(400_000) < pi, 0, nb).astype(float)
    y = 2.0
    assert crps_obs(ZINB, theta, y) == pytest.approx(
        crps_monte_carlo(draws, y), abs=5e-3
    )


def test_crps_positive_and_zero_for_point_mass_limit():
    # tight Gaussian centered on y: score collapses towards 0
    assert crps_obs(GAUSSIAN_LS, (2.0, 1e-6), 2.0) < 1e-5
    assert crps_obs(GAUSSIAN_LS, (0.0, 1.0), 0.5) > 0.0


def test_cramer_dist_identity_is_zero():
    assert cramer_dist(GAUSSIAN_LS, (1.0, 2.0), (1.0, 2.0)) == pytest.approx(0.0, abs=1e-12)
    assert cramer_dist(ZINB, (3.0, 0.5, 0.2), (3.0, 0.5, 0.2)) == 0.0


def test_gaussian_cramer_closed_form_vs_quadrature():
    from scipy import integrate

    m1, s1, m2, s2 = 0.4, 1.2, -0.7, 2.1

    def integrand(x):
        return (
            stats.norm.cdf(x, loc=m1, scale=s1) - stats.norm.cdf(x, loc=m2, scale=s2)
        ) ** 2

    ref, _ = integrate.quad(integrand, -25.0, 25.0, limit=200)
    assert cramer_dist(GAUSSIAN_LS, (m1, s1), (m2, s2)) == pytest.approx(ref, rel=1e-9)


def test_batch_scores_match_scalar_versions():
    from lssboost.families import cramer_batch, crps_batch

    rng = np.random.default_rng(15)
    state = random_state(ZINB, rng, n=12)
    truth = random_state(ZINB, rng, n=12)
    y = random_response(ZINB, state, rng)
    theta = tuple(state.theta(k) for k in range(3))
    theta_true = tuple(truth.theta(k) for k in range(3))
    batch = crps_batch(ZINB, theta, y)
    for i in range(12):
        scalar = crps_obs(ZINB, tuple(t[i] for t in theta), y[i])
        assert batch[i] == pytest.approx(scalar, rel=1e-10, abs=1e-12)
    dists = cramer_batch(ZINB, theta, theta_true)
    for i in range(12):
        scalar = cramer_dist(
            ZINB, tuple(t[i] for t in theta), tuple(t[i] for t in theta_true)
        )
        assert dists[i] == pytest.approx(scalar, rel=1e-10, abs=1e-12)

    gstate = random_state(GAUSSIAN_LS, rng, n=9)
    gtruth = random_state(GAUSSIAN_LS, rng, n=9)
    gy = random_response(GAUSSIAN_LS, gstate, rng)
    gt = (gstate.theta(0), gstate.theta(1))
    gtt = (gtruth.theta(0), gtruth.theta(1))
    b = crps_batch(GAUSSIAN_LS, gt, gy)
    d = cramer_batch(GAUSSIAN_LS, gt, gtt)
    for i in range(9):
        assert b[i] == pytest.approx(
            crps_obs(GAUSSIAN_LS, (gt[0][i], gt[1][i]), gy[i]), rel=1e-10
        )
        assert d[i] == pytest.approx(
            cramer_dist(GAUSSIAN_LS, (gt[0][i], gt[1][i]), (gtt[0][i], gtt[1][i])),
            rel=1e-10,
        )


def test_cramer_dist_symmetric_and_positive():
    a, b = (1.0, 1.0), (2.0, 1.5)
    d1 = cramer_dist(GAUSSIAN_LS, a, b)
    d2 = cramer_dist(GAUSSIAN_LS, b, a)
    assert d1 == pytest.approx(d2, rel=1e-9)
    assert d1 > 0.0
