import numpy as np
import pytest

from proximh.densities import BimodalPrior, GaussianDensity
from proximh.errors import DimensionError, UnsupportedModelError
from proximh.linalg import build_k, make_test_operator
from proximh.posteriors import (
    LinearInverseProblem,
    gaussian_posterior_form,
    log_posterior,
    sample_gaussian_posterior,
)

KINDS = ("exact", "approx", "latent", "proximal")


def _problem(rng, d=6, d_y=3, eps=0.1, prior=None):
    ops = make_test_operator("multiplicative", (d, d_y), {"rel_error": eps}, int(rng.integers(1 << 30)))
    a, at = ops.o @ ops.f, ops.o @ ops.f_tilde
    prior = prior or GaussianDensity.standard(d)
    return LinearInverseProblem(a, at, 0.1, prior, rng.standard_normal(d_y), ops.o, ops.f, ops.f_tilde)


def test_all_coincide_without_error(rng):
    prob = _problem(rng, eps=0.0)
    k = build_k(prob.a, prob.a_tilde, prob.sigma**2)
    x = rng.standard_normal(prob.d_x)
    vals = [log_posterior(kind, prob, k, x) for kind in KINDS]
    assert np.allclose(vals, vals[0], atol=1e-10)
    forms = [gaussian_posterior_form(kind, prob, k) for kind in KINDS]
    for f in forms[1:]:
        assert np.allclose(f.covariance, forms[0].covariance, atol=1e-10)
        assert np.allclose(f.mean_map, forms[0].mean_map, atol=1e-10)


def test_exact_matches_closed_form(rng):
    prob = _problem(rng)
    form = gaussian_posterior_form("exact", prob)
    xs = rng.standard_normal((100, prob.d_x))
    diff = log_posterior("exact", prob, None, xs) - form.logpdf(xs, prob.y)
    assert np.var(diff) <= 1e-16 * max(1.0, np.mean(diff) ** 2)


def test_scalar_covariance():
    s, sigma = 2.0, 0.5
    prob = LinearInverseProblem(np.array([[s]]), np.array([[s]]), sigma, GaussianDensity.standard(1), np.zeros(1))
    form = gaussian_posterior_form("exact", prob)
    assert form.covariance[0, 0] == pytest.approx(sigma**2 / (s**2 + sigma**2))


def test_proximal_is_pushforward(rng):
    prob = _problem(rng)
    k = build_k(prob.a, prob.a_tilde, prob.sigma**2)
    xt = rng.standard_normal(prob.d_x)
    # density of x = K x_tilde, before the constant Jacobian
    lhs = log_posterior("proximal", prob, k, k.apply(xt))
    rhs = log_posterior("approx", prob, k, xt)
    assert lhs == pytest.approx(rhs, abs=1e-9)
    approx = gaussian_posterior_form("approx", prob)
    prox = gaussian_posterior_form("proximal", prob, k)
    draws = sample_gaussian_posterior(approx, prob.y, 100_000, 1) @ k.matrix.T
    cov = np.cov(draws.T)
    assert np.linalg.norm(cov - prox.covariance) <= 0.03 * np.linalg.norm(prox.covariance)


def test_latent_is_pushforward(rng):
    prob = _problem(rng)
    t = np.linalg.solve(prob.f, prob.f_tilde)
    approx = gaussian_posterior_form("approx", prob)
    latent = gaussian_posterior_form("latent", prob)
    assert np.allclose(latent.mean(prob.y), t @ approx.mean(prob.y))
    # log_posterior("latent") is pi_a evaluated at F_tilde^{-1} F x
    x = rng.standard_normal(prob.d_x)
    z = prob.latent_matrix() @ x
    assert log_posterior("latent", prob, None, x) == pytest.approx(log_posterior("approx", prob, None, z), abs=1e-9)


def test_sampler_statistics(rng):
    prob = _problem(rng)
    form = gaussian_posterior_form("exact", prob)
    xs = sample_gaussian_posterior(form, prob.y, 100_000, 7)
    se = np.sqrt(np.diag(form.covariance) / xs.shape[0])
    assert np.all(np.abs(xs.mean(0) - form.mean(prob.y)) <= 4 * se + 1e-15)
    assert np.linalg.norm(np.cov(xs.T) - form.covariance) <= 0.03 * np.linalg.norm(form.covariance)


def test_zero_covariance_samples_equal_mean():
    from proximh.posteriors import GaussianPosteriorForm

    form = GaussianPosteriorForm("exact", np.eye(2), np.zeros((2, 2)))
    xs = sample_gaussian_posterior(form, np.array([1.0, 2.0]), 5, 0)
    assert np.array_equal(xs, np.tile([1.0, 2.0], (5, 1)))


def test_errors(rng):
    prob = _problem(rng, prior=BimodalPrior.random(6))
    with pytest.raises(UnsupportedModelError):
        gaussian_posterior_form("exact", prob)
    with pytest.raises(DimensionError):
        LinearInverseProblem(np.eye(2), np.eye(2), 1.0, GaussianDensity.standard(2), np.zeros(3))
    bare = LinearInverseProblem(np.eye(2), np.eye(2), 1.0, GaussianDensity.standard(2), np.zeros(2))
    with pytest.raises(UnsupportedModelError):
        bare.latent_matrix()
