import numpy as np
import pytest

from proximh.densities import GaussianDensity
from proximh.errors import ParameterError, StateError
from proximh.io import read_csv
from proximh.posteriors import LinearInverseProblem
from proximh.samplers import (
    ChainRecord,
    Draws,
    GaussianProposal,
    PoolProposal,
    build_proposal_pool,
    default_step_size,
    imh_run,
    log_weight_linear,
    mala_run,
)
from proximh.posteriors import gaussian_posterior_form


def _pool(x):
    x = np.asarray(x, dtype=float)
    return PoolProposal(Draws(x, x, np.zeros(len(x))))


def std_normal(x):
    x = np.atleast_2d(x)
    return -0.5 * np.sum(x * x, axis=1), -x


def test_constant_weight_always_accepts(rng):
    rec = imh_run(_pool(rng.standard_normal((50, 2))), lambda d: np.full(len(d), 3.0), 200, seed=1)
    assert rec.acceptance_rate == 1.0 and rec.states.shape == (201, 2)


def test_weight_shift_invariance(rng):
    pool = _pool(rng.standard_normal((40, 2)))
    w = rng.standard_normal(40)
    r1 = imh_run(pool, lambda d: w, 300, seed=5)
    r2 = imh_run(pool, lambda d: w + 17.0, 300, seed=5)
    assert np.array_equal(r1.states, r2.states) and np.array_equal(r1.accepted, r2.accepted)


def test_pool_of_one():
    rec = imh_run(_pool([[1.5]]), lambda d: np.zeros(len(d)), 10, seed=0)
    assert np.all(rec.states == 1.5) and rec.acceptance_rate == 1.0


def test_rejection_keeps_state(rng):
    pool = _pool(rng.standard_normal((20, 1)))
    w = rng.standard_normal(20) * 3
    rec = imh_run(pool, lambda d: w, 500, seed=2)
    moved = np.any(rec.states[1:] != rec.states[:-1], axis=1)
    assert np.all(moved <= rec.accepted)
    assert np.all(rec.log_accept_probs <= 0)


def test_nonfinite_weight_raises():
    with pytest.raises(StateError):
        imh_run(_pool([[0.0], [1.0]]), lambda d: np.array([0.0, np.nan]), 20, seed=0)
    with pytest.raises(ParameterError):
        imh_run(_pool([[0.0]]), None, 5)


def test_latent_weight_scalar_example():
    prob = LinearInverseProblem(
        np.array([[1.0]]), np.array([[2.0]]), 1.0, GaussianDensity.standard(1), np.zeros(1),
        np.eye(1), np.eye(1), np.array([[2.0]]),
    )
    x = np.array([[2.0]])
    w = log_weight_linear("latent", prob, None, Draws(x, x, np.zeros(1)))
    assert w[0] == pytest.approx(-1.5)


def test_imh_with_gaussian_proposal_targets_exact(rng):
    a = rng.standard_normal((3, 4))
    prob = LinearInverseProblem(a, 1.05 * a, 0.5, GaussianDensity.standard(4), rng.standard_normal(3))
    prop = GaussianProposal(gaussian_posterior_form("approx", prob), prob.y)
    rec = imh_run(prop, lambda d: log_weight_linear("approx", prob, None, d), 40_000, seed=3)
    exact = gaussian_posterior_form("exact", prob)
    assert rec.acceptance_rate > 0.3
    assert np.allclose(rec.states.mean(0), exact.mean(prob.y), atol=0.05)


def test_mala_standard_normal():
    rec = mala_run(std_normal, 0.9, 4000, 0, np.zeros((20, 1)))
    xs = rec.states[:, 500:, 0]
    assert abs(xs.mean()) < 0.05 and abs(xs.var() - 1.0) < 0.05


def test_mala_tiny_step_accepts():
    rec = mala_run(std_normal, 1e-4, 1000, 0, np.ones(3))
    assert rec.acceptance_rate >= 0.999


def test_mala_preconditioned_and_errors(rng):
    c = np.diag([4.0, 0.25])
    rec = mala_run(lambda x: (-0.5 * np.sum(x * x / np.diag(c), 1), -x / np.diag(c)), 0.8, 3000, 1, np.zeros((10, 2)), precond=c)
    assert np.allclose(rec.states[:, 300:].reshape(-1, 2).var(0), np.diag(c), rtol=0.15)
    with pytest.raises(ParameterError):
        mala_run(std_normal, -1.0, 10, 0, np.zeros(1))
    with pytest.raises(StateError):
        mala_run(lambda x: (np.zeros(len(x)), np.full_like(x, np.nan)), 0.1, 10, 0, np.zeros(1))


def test_default_step_size_formula():
    # curvature 1 in d = 1: h = 0.5
    assert default_step_size(std_normal, np.zeros(1)) == pytest.approx(0.5, rel=1e-4)
    scaled = lambda x: (-50 * np.sum(np.atleast_2d(x) ** 2, 1), -100 * np.atleast_2d(x))  # noqa: E731
    assert default_step_size(scaled, np.zeros(64)) == pytest.approx(0.5 * 0.1 * 64 ** (-1 / 6), rel=1e-3)


def test_pool_moments():
    pool = build_proposal_pool(std_normal, 4000, 200, 5, 0, np.zeros((4, 2)))
    xt = pool.atoms.x_tilde
    assert xt.shape == (4000, 2)
    assert np.all(np.abs(xt.mean(0)) < 0.1) and np.allclose(xt.var(0), 1.0, atol=0.12)
    assert np.allclose(pool.atoms.log_g, std_normal(xt)[0])
    assert pool.metadata()["pool_size"] == 4000


def test_pool_validation():
    with pytest.raises(ParameterError):
        PoolProposal(Draws(np.zeros((2, 1)), np.zeros((2, 1)), np.zeros(2)), probs=[0.7, 0.7])
    with pytest.raises(ParameterError):
        PoolProposal(Draws(np.zeros((0, 1)), np.zeros((0, 1)), np.zeros(0)))


def test_chain_record_write(tmp_path):
    rec = mala_run(std_normal, 0.5, 10, 4, np.zeros(2), thin=2)
    rec.write(tmp_path / "chain")
    header, rows = read_csv(tmp_path / "chain.csv")
    assert header == ["step", "accepted", "log_accept_prob", "x0", "x1"]
    assert [r[0] for r in rows] == ["0", "2", "4", "6", "8", "10"]
    assert (tmp_path / "chain.json").exists()
    with pytest.raises(StateError):
        ChainRecord(rec.states, rec.accepted, rec.log_accept_probs, 0.123, 0)
