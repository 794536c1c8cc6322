import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from nbbr.errors import DomainError
from nbbr.model import (
    DispersionTransform,
    LinkFunction,
    ModelSpec,
    ParameterPoint,
    disp_eval,
    link_eval,
    log_likelihood,
    nb_log_pmf,
)
from nbbr.moments import brute_force_expectation, tail_probabilities


@pytest.mark.parametrize(
    "kind, eta, expected",
    [("log", 0.0, (1.0, 1.0, 1.0)), ("identity", 2.0, (2.0, 1.0, 0.0)), ("sqrt", 3.0, (9.0, 6.0, 2.0))],
)
def test_link_eval_examples(kind, eta, expected):
    assert np.allclose(link_eval(LinkFunction(kind), eta), expected, rtol=0, atol=1e-15)


@pytest.mark.parametrize(
    "kind, phi, expected",
    [
        ("identity", 0.5, (0.5, 1.0, 0.0)),
        ("log", 0.0, (1.0, 1.0, 1.0)),
        ("inverse", 2.0, (0.5, -0.25, 0.25)),
        ("sqrt", 0.5, (0.25, 1.0, 2.0)),
    ],
)
def test_disp_eval_examples(kind, phi, expected):
    assert np.allclose(disp_eval(DispersionTransform(kind), phi), expected, rtol=0, atol=1e-15)


@pytest.mark.parametrize("kind", ["identity", "sqrt"])
def test_link_domain_error(kind):
    with pytest.raises(DomainError):
        link_eval(LinkFunction(kind), np.array([1.0, -0.5]))


@pytest.mark.parametrize("kind, phi", [("identity", -0.1), ("inverse", 0.0), ("sqrt", -1.0)])
def test_disp_domain_error(kind, phi):
    with pytest.raises(DomainError):
        disp_eval(DispersionTransform(kind), phi)


@given(st.floats(min_value=1e-6, max_value=1e6), st.sampled_from(["log", "identity", "sqrt"]))
def test_link_round_trip(mu, kind):
    link = LinkFunction(kind)
    back, d, _ = link.evaluate(link.link(np.array([mu])))
    assert back[0] == pytest.approx(mu, rel=1e-12)
    assert d[0] > 0


@given(st.floats(min_value=1e-6, max_value=1e6), st.sampled_from(["identity", "log", "inverse", "sqrt"]))
def test_transform_round_trip(kappa, kind):
    tr = DispersionTransform(kind)
    k, kp, _ = tr.evaluate(tr.phi(kappa))
    assert k == pytest.approx(kappa, rel=1e-12)
    assert kp != 0


@pytest.mark.parametrize("kind", ["identity", "log", "inverse", "sqrt"])
def test_transform_derivatives_match_differences(kind):
    tr = DispersionTransform(kind)
    phi = tr.phi(0.7)
    k, kp, kpp = tr.evaluate(phi)
    step = 1e-5
    up, down = tr.evaluate(phi + step), tr.evaluate(phi - step)
    assert kp == pytest.approx((up[0] - down[0]) / (2 * step), rel=1e-8)
    assert kpp == pytest.approx((up[1] - down[1]) / (2 * step), abs=1e-7)


def test_pmf_closed_forms():
    assert nb_log_pmf(0, 2.0, 1.0) == pytest.approx(-math.log(3.0), abs=1e-12)
    assert nb_log_pmf(1, 2.0, 1.0) == pytest.approx(math.log(2.0 / 9.0), abs=1e-12)


@pytest.mark.parametrize("mu, kappa", [(0.5, 0.25), (2.0, 1.0), (10.0, 3.0), (40.0, 0.05)])
def test_pmf_normalises(mu, kappa):
    cutoff = tail_probabilities(mu, kappa).shape[0] + 200
    total = math.fsum(np.exp(nb_log_pmf(np.arange(cutoff), mu, kappa)))
    assert total == pytest.approx(1.0, abs=1e-10)


@pytest.mark.parametrize("mu", [0.5, 1.0, 5.0])
def test_geometric_case(mu):
    y = np.arange(51)
    geometric = y * np.log(mu) - (y + 1) * np.log1p(mu)
    assert np.allclose(nb_log_pmf(y, mu, 1.0), geometric, rtol=1e-12, atol=0)


@pytest.mark.parametrize("mu, kappa", [(0.7, 0.4), (3.0, 2.0), (12.0, 0.1)])
def test_pmf_matches_scipy(mu, kappa):
    y = np.arange(60)
    ref = stats.nbinom.logpmf(y, 1.0 / kappa, 1.0 / (1.0 + kappa * mu))
    assert np.allclose(nb_log_pmf(y, mu, kappa), ref, rtol=1e-10, atol=1e-10)


@pytest.mark.parametrize("mu, kappa", [(0.5, 0.25), (2.0, 1.0), (10.0, 3.0)])
def test_mean_and_variance(mu, kappa):
    cutoff = tail_probabilities(mu, kappa, ).shape[0] + 400
    y = np.arange(cutoff)
    pmf = np.exp(nb_log_pmf(y, mu, kappa))
    mean = math.fsum(y * pmf)
    var = math.fsum((y - mean) ** 2 * pmf)
    assert mean == pytest.approx(mu, rel=1e-8)
    assert var == pytest.approx(mu + kappa * mu**2, rel=1e-8)
    assert brute_force_expectation(lambda v: v, mu, kappa) == pytest.approx(mu, rel=1e-10)


def _two_obs():
    return ModelSpec(np.array([3, 7]), np.array([[1.0, 0.2], [1.0, 1.4]]))


def test_loglik_additive_and_linear_in_weights():
    spec = _two_obs()
    theta = ParameterPoint([0.5, 0.9], 0.6)
    mu = np.exp(spec.X @ theta.beta)
    parts = [nb_log_pmf(int(y), float(m), 0.6) for y, m in zip(spec.y, mu)]
    assert log_likelihood(spec, theta) == pytest.approx(sum(parts), rel=1e-14)
    doubled = ModelSpec(spec.y, spec.X, 2.0 * np.ones(2))
    assert log_likelihood(doubled, theta) == pytest.approx(2 * log_likelihood(spec, theta), rel=1e-14)


def test_loglik_invariant_under_dispersion_transform():
    spec = _two_obs()
    beta = [0.5, 0.9]
    a = log_likelihood(spec, ParameterPoint(beta, 0.6))
    b = log_likelihood(spec.with_transform("log"), ParameterPoint(beta, math.log(0.6)))
    assert a == b


def test_spec_validation():
    with pytest.raises(ValueError):
        ModelSpec(np.array([1.5, 2.0]), np.ones((2, 1)))
    with pytest.raises(ValueError):
        ModelSpec(np.array([1, -2]), np.ones((2, 1)))
    with pytest.raises(ValueError):
        ModelSpec(np.array([1, 2]), np.ones((2, 3)))
    with pytest.raises(ValueError):
        ModelSpec(np.array([1, 2]), np.ones((2, 1)), m=np.array([1.0, 0.0]))


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 40), st.floats(0.05, 50.0), st.floats(0.01, 5.0))
def test_pmf_against_scipy_property(y, mu, kappa):
    ref = stats.nbinom.logpmf(y, 1.0 / kappa, 1.0 / (1.0 + kappa * mu))
    assert nb_log_pmf(y, mu, kappa) == pytest.approx(ref, rel=1e-9, abs=1e-9)
