import math

import numpy as np
import pytest

from nbbr import adjust
from nbbr.fit import (
    FitOptions,
    fisher_phi_step,
    fit,
    iwls_beta_step,
    moment_kappa,
    starting_values,
    wald_intervals,
)
from nbbr.model import ModelSpec, ParameterPoint, log_likelihood

from conftest import random_spec

GOLDEN = {
    "ml": 0.04877,
    "mean_bc": 0.06264,
    "mean_br": 0.06473,
    "median_br": 0.06922,
}
GOLDEN_SE = {"ml": 0.02815, "mean_bc": 0.03276, "mean_br": 0.03345, "median_br": 0.03501}


@pytest.fixture(scope="module")
def salmonella_fits(salmonella):
    return {m: fit(salmonella, method=m) for m in GOLDEN}


def test_salmonella_ml_golden(salmonella_fits):
    res = salmonella_fits["ml"]
    assert res.converged
    assert np.allclose(res.estimates, [2.19763, -0.00098, 0.31251, 0.04877], atol=1e-4)
    assert np.allclose(res.se, [0.32459, 0.00039, 0.08790, 0.02815], atol=1e-4)


@pytest.mark.parametrize("method", list(GOLDEN))
def test_salmonella_kappa_golden(salmonella_fits, method):
    res = salmonella_fits[method]
    assert res.converged
    assert res.kappa == pytest.approx(GOLDEN[method], abs=1e-4)
    assert res.se[-1] == pytest.approx(GOLDEN_SE[method], abs=1e-4)


@pytest.mark.parametrize("method", ["ml", "mean_br", "median_br"])
def test_fixed_point(salmonella, salmonella_fits, method):
    res = salmonella_fits[method]
    theta = res.theta
    beta_next = iwls_beta_step(salmonella, theta, method)
    assert np.max(np.abs(beta_next - theta.beta)) <= 1e-7
    phi_next = fisher_phi_step(salmonella, theta, method)
    assert abs(phi_next - theta.phi) <= 1e-7
    u_beta, u_phi = adjust.score(salmonella, theta)
    if method == "mean_br":
        a_beta, a_phi = adjust.mean_adjustment(salmonella, theta)
    elif method == "median_br":
        a_beta, a_phi = adjust.median_adjustment(salmonella, theta)
    else:
        a_beta, a_phi = np.zeros(3), 0.0
    i_bb, i_pp = adjust.expected_information(salmonella, theta)
    scale = np.append(np.diag(i_bb), i_pp)
    resid = np.abs(np.append(u_beta + a_beta, u_phi + a_phi))
    assert np.all(resid <= 10 * 1e-8 * scale)


def test_ml_score_matches_loglik_gradient(salmonella, salmonella_fits):
    theta = salmonella_fits["ml"].theta
    vec = theta.as_vector()
    # steps of 1e-4 on the linear-predictor scale for each column
    scales = np.append(np.max(np.abs(salmonella.X), axis=0), 1.0)
    grad = []
    for k in range(vec.size):
        step = 1e-4 / scales[k]
        vals = []
        for c in (-2, -1, 1, 2):
            shifted = vec.copy()
            shifted[k] += c * step
            vals.append(log_likelihood(salmonella, ParameterPoint.from_vector(shifted)))
        grad.append((vals[0] - 8 * vals[1] + 8 * vals[2] - vals[3]) / (12 * step))
    assert np.max(np.abs(grad)) <= 1e-5


def test_mean_bc_is_ml_minus_bias(salmonella, salmonella_fits):
    ml = salmonella_fits["ml"]
    bc = salmonella_fits["mean_bc"]
    bias = adjust.first_order_bias(salmonella, ml.theta)
    assert np.allclose(bc.estimates, ml.estimates - bias, rtol=1e-14, atol=0)
    # standard errors belong to the corrected point, not the ML one
    assert bc.se[-1] != pytest.approx(ml.se[-1], abs=1e-4)


@pytest.mark.parametrize("transform", ["log", "inverse", "sqrt"])
def test_ml_equivariance(salmonella, salmonella_fits, transform):
    res = fit(salmonella.with_transform(transform), method="ml")
    assert res.converged
    assert res.kappa == pytest.approx(salmonella_fits["ml"].kappa, abs=1e-6)
    assert np.allclose(res.theta.beta, salmonella_fits["ml"].theta.beta, atol=1e-6)


@pytest.mark.parametrize("transform", ["log", "inverse"])
def test_median_equivariance_salmonella(salmonella, salmonella_fits, transform):
    res = fit(salmonella.with_transform(transform), method="median_br")
    assert res.converged
    assert res.kappa == pytest.approx(salmonella_fits["median_br"].kappa, abs=1e-6)


def test_mean_br_not_equivariant_for_kappa(salmonella, salmonella_fits):
    # mean BR is tied to the parameterization; a log-scale fit lands elsewhere
    res = fit(salmonella.with_transform("log"), method="mean_br")
    assert abs(res.kappa - salmonella_fits["mean_br"].kappa) > 1e-4


@pytest.mark.parametrize("case", range(20))
def test_median_equivariance_random(case):
    rng = np.random.default_rng(500 + case)
    spec, _, _ = random_spec(rng, "log", "identity", n=int(rng.integers(15, 40)), p=2)
    a = fit(spec, method="median_br")
    b = fit(spec.with_transform("log"), method="median_br")
    if not (a.converged and b.converged):
        # both parameterizations must agree on failure too
        assert a.converged == b.converged
        return
    assert a.kappa == pytest.approx(b.kappa, abs=1e-6)
    assert np.allclose(a.theta.beta, b.theta.beta, atol=1e-6)


@pytest.mark.parametrize("c", [0.01, 5.0])
def test_mean_br_column_scaling(salmonella, salmonella_fits, c):
    spec = salmonella
    X2 = spec.X.copy()
    X2[:, 1] *= c
    scaled = ModelSpec(spec.y, X2)
    a, b = salmonella_fits["mean_br"], fit(scaled, method="mean_br")
    assert a.converged and b.converged
    assert b.theta.beta[1] == pytest.approx(a.theta.beta[1] / c, rel=1e-7)
    mu_a = np.exp(spec.X @ a.theta.beta)
    mu_b = np.exp(X2 @ b.theta.beta)
    assert np.allclose(mu_a, mu_b, rtol=1e-8)


def test_deterministic(salmonella):
    a = fit(salmonella, method="median_br")
    b = fit(salmonella, method="median_br")
    assert np.array_equal(a.estimates, b.estimates)
    assert np.array_equal(a.se, b.se)
    assert a.report == b.report


def test_moment_kappa():
    assert moment_kappa(2.0, 4.0) == 0.5
    assert moment_kappa(3.0, 0.0) == 0.01


def test_starting_values_constant_response():
    spec = ModelSpec(np.full(8, 4), np.ones((8, 1)))
    start = starting_values(spec)
    assert start.phi == pytest.approx(0.01)
    assert start.beta[0] == pytest.approx(math.log(4.0))


def test_starting_values_salmonella(salmonella):
    start = starting_values(salmonella)
    assert np.all(np.isfinite(start.beta))
    assert start.phi > 0


def test_identity_link_exact_step():
    X = np.column_stack([np.ones(6), np.arange(6.0)])
    beta = np.array([2.0, 3.0])
    y = (X @ beta).astype(np.int64)
    assert np.array_equal(y, X @ beta)
    spec = ModelSpec(y, X, link="identity")
    start = ParameterPoint(np.array([3.0, 0.5]), 0.3)
    assert np.allclose(iwls_beta_step(spec, start, "ml"), beta, rtol=0, atol=1e-12)


def test_saturated_identity_fit():
    X = np.array([[1.0, 0.0], [1.0, 1.0]])
    spec = ModelSpec(np.array([3, 8]), X, link="identity")
    res = fit(spec, method="ml")
    # the mean fit is saturated whatever happens to kappa
    assert np.allclose(X @ res.theta.beta, [3.0, 8.0], rtol=1e-6)
    assert res.report.failure_kind in ("none", "domain", "max_iter")


def test_phi_halving_keeps_kappa_positive():
    # underdispersed data push kappa toward zero; the step must halve, not raise
    spec = ModelSpec(np.array([5, 5, 6, 4, 5, 5, 6, 4]), np.ones((8, 1)))
    theta = ParameterPoint([math.log(5.0)], 0.5)
    phi_next = fisher_phi_step(spec, theta, "ml")
    assert phi_next > 0
    res = fit(spec, method="ml")
    assert not res.converged
    assert res.report.boundary_flag
    assert res.report.failure_kind == "domain"


def test_mean_bc_fails_with_ml():
    spec = ModelSpec(np.array([5, 5, 6, 4, 5, 5, 6, 4]), np.ones((8, 1)))
    res = fit(spec, method="mean_bc")
    assert res.method == "mean_bc"
    assert not res.converged


def test_convergence_report_invariant(salmonella_fits):
    for res in salmonella_fits.values():
        rep = res.report
        assert rep.converged and not rep.boundary_flag and rep.failure_kind == "none"
        assert rep.final_step_norm <= 1e-8


def test_vcov_symmetric_positive_definite(salmonella_fits):
    for res in salmonella_fits.values():
        v = res.vcov_beta
        assert np.allclose(v, v.T, rtol=0, atol=0)
        assert np.all(np.linalg.eigvalsh(v) > 0)
        assert np.allclose(np.sqrt(np.diag(v)), res.se[:-1])


def test_wald_intervals_example(salmonella_fits):
    ci = wald_intervals(salmonella_fits["ml"])
    assert ci[0] == pytest.approx([1.56144, 2.83381], abs=1e-4)
    assert np.all(ci[:, 0] < salmonella_fits["ml"].estimates)


def test_wald_level_zero(salmonella_fits):
    res = salmonella_fits["ml"]
    ci = wald_intervals(res, level=0.0)
    assert np.array_equal(ci[:, 0], res.estimates)
    assert np.array_equal(ci[:, 1], res.estimates)


def test_wald_kappa_scale(salmonella):
    res = fit(salmonella.with_transform("log"), method="ml")
    ci = wald_intervals(res, kappa_scale=True)
    assert ci[-1, 0] < res.kappa < ci[-1, 1]
    assert ci[-1, 0] > 0


def test_wald_rejects_unconverged():
    spec = ModelSpec(np.array([5, 5, 6, 4, 5, 5, 6, 4]), np.ones((8, 1)))
    with pytest.raises(ValueError):
        wald_intervals(fit(spec, method="ml"))


def test_fit_options_validation():
    with pytest.raises(ValueError):
        FitOptions(method="bogus")
    with pytest.raises(ValueError):
        FitOptions(tol=0.0)
    with pytest.raises(ValueError):
        FitOptions(max_outer=0)
    assert FitOptions(method="median-br").method == "median_br"
