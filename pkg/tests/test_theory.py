import numpy as np
import pytest

from proximh.densities import GaussianDensity
from proximh.linalg import build_k
from proximh.oracles import random_dense_problem, random_diagonal_spec
from proximh.posteriors import LinearInverseProblem
from proximh.theory import (
    DiagonalSpec,
    kl_diagonal,
    kl_gaussian_general,
    kl_leading_order,
    kl_monte_carlo,
    mixing_quantities,
)


def test_diagonal_matches_general():
    rng = np.random.default_rng(0)
    for _ in range(50):
        spec = random_diagonal_spec(rng)
        prob = spec.problem()
        general = kl_gaussian_general(prob, build_k(prob.a, prob.a_tilde, spec.sigma**2))
        assert np.allclose(kl_diagonal(spec).as_tuple(), general.as_tuple(), atol=1e-8, rtol=0)


def test_published_proximal_variant():
    # d = d_y = 1, s = 1, alpha = 2, sigma = 1: rho = 2.5 in the printed form
    spec = DiagonalSpec(np.array([1.0]), np.array([2.0]), 1.0)
    pub = kl_diagonal(spec, published=True)
    assert pub.d_p == pytest.approx(1.5 - np.log(2.5) + 0.04)
    assert kl_diagonal(spec).d_p < pub.d_p


def test_zero_iff_exact(rng):
    prob = random_dense_problem(rng)
    same = LinearInverseProblem(prob.a, prob.a, prob.sigma, prob.prior, prob.y, prob.o, prob.f, prob.f)
    rep = kl_gaussian_general(same, build_k(same.a, same.a, same.sigma**2))
    assert np.allclose(rep.as_tuple(), 0.0, atol=1e-10)
    rep = kl_gaussian_general(prob, build_k(prob.a, prob.a_tilde, prob.sigma**2))
    assert min(rep.as_tuple()) > 1e-6
    for variant, (cov, mean) in rep.decomposition.items():
        assert cov + mean == pytest.approx(getattr(rep, "d_" + variant[0]))


def test_leading_order_asymptotics():
    s = np.array([0.5, 1.0, 2.0])
    ratios = []
    for eps in (1e-2, 5e-3, 2.5e-3, 1e-4):
        spec = DiagonalSpec(s, 1 + eps * np.array([1, -1, 1, -1.0]), 0.3)
        ratios.append(np.array(kl_diagonal(spec).as_tuple()) / np.array(kl_leading_order(spec, eps)))
    for r0, r1 in zip(ratios, ratios[1:]):
        assert np.all(np.abs(r1 / r0 - 1) <= 0.1)
    assert kl_leading_order(DiagonalSpec(s, np.ones(3), 0.3), 0.0) == (0.0, 0.0, 0.0)
    big = DiagonalSpec(np.full(4, 10.0), np.ones(4), 1.0)
    d_a, _, d_p = kl_leading_order(big, 1e-3)
    assert d_a >= 10 * d_p


def test_monte_carlo_agrees_with_diagonal():
    spec = DiagonalSpec(np.array([0.5, 1.0, 1.5]), np.array([1.2, 0.9, 1.1, 0.8, 1.3]), 0.4)
    prob = spec.problem()
    k = build_k(prob.a, prob.a_tilde, spec.sigma**2)
    est, err = kl_monte_carlo(prob, k, 10_000, 1)
    for c, m, e in zip(kl_diagonal(spec).as_tuple(), est, err):
        assert abs(c - m) <= 3 * e


def test_monte_carlo_error_scaling(rng):
    prob = random_dense_problem(rng)
    k = build_k(prob.a, prob.a_tilde, prob.sigma**2)
    _, e1 = kl_monte_carlo(prob, k, 5_000, 0)
    _, e2 = kl_monte_carlo(prob, k, 20_000, 0)
    assert np.allclose(np.array(e1) / np.array(e2), 2.0, rtol=0.2)


def test_monte_carlo_z_scores_calibrated():
    # z-scores of closed form vs estimate should look standard normal
    rng = np.random.default_rng(11)
    z = []
    for i in range(30):
        prob = random_dense_problem(rng)
        k = build_k(prob.a, prob.a_tilde, prob.sigma**2)
        closed = kl_gaussian_general(prob, k).as_tuple()
        est, err = kl_monte_carlo(prob, k, 4_000, 100 + i)
        z.extend((c - m) / e for c, m, e in zip(closed, est, err))
    z = np.array(z)
    assert abs(z.mean()) < 0.4 and 0.75 < z.std() < 1.25


def test_mixing_scalar_example():
    prob = LinearInverseProblem(
        np.array([[1.0]]), np.array([[1.5]]), 1.0, GaussianDensity.standard(1), np.zeros(1),
        np.eye(1), np.eye(1), np.array([[1.5]]),
    )
    a_q, l_q, p_q = mixing_quantities(prob, build_k(prob.a, prob.a_tilde, 1.0))
    assert a_q == pytest.approx(0.5) and l_q == pytest.approx(1 / 3)
    assert 0 < p_q <= l_q


def test_mixing_zero_and_inequality():
    rng = np.random.default_rng(4)
    for _ in range(100):
        spec = random_diagonal_spec(rng)
        prob = spec.problem()
        _, l_q, p_q = mixing_quantities(prob, build_k(prob.a, prob.a_tilde, spec.sigma**2))
        assert p_q <= l_q + 1e-12
    spec = DiagonalSpec(np.ones(2), np.ones(3), 0.5)
    prob = spec.problem()
    assert np.allclose(mixing_quantities(prob, build_k(prob.a, prob.a_tilde, 0.25)), 0.0)


def test_mean_term_equals_trace_form(rng):
    from proximh.posteriors import gaussian_posterior_form

    prob = random_dense_problem(rng)
    k = build_k(prob.a, prob.a_tilde, prob.sigma**2)
    rep = kl_gaussian_general(prob, k)
    a, s2 = prob.a, prob.sigma**2
    exact = gaussian_posterior_form("exact", prob)
    prec = np.eye(prob.d_x) + a.T @ a / s2
    cov_y = a @ a.T + s2 * np.eye(prob.d_y)
    for variant in ("approx", "latent", "proximal"):
        delta = gaussian_posterior_form(variant, prob, k).mean_map - exact.mean_map
        assert rep.decomposition[variant][1] == pytest.approx(np.trace(delta.T @ prec @ delta @ cov_y), rel=1e-10)
