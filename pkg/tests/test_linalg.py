import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from proximh import io
from proximh.errors import ConditioningError, DimensionError, ParameterError
from proximh.linalg import (
    SpectralFactorization,
    build_k,
    discrepancy_norms,
    make_test_operator,
    random_observation,
    regularized_pseudoinverse,
    relative_operator_error,
    spectral_norm,
)


def test_k_scalar():
    k = build_k(np.array([[2.0]]), np.array([[3.0]]), 1.0)
    assert k.matrix[0, 0] == pytest.approx(1.4, abs=1e-14)
    assert k.apply(np.array([1.0]))[0] == pytest.approx(1.4)


def test_k_identity_when_exact(rng):
    a = rng.standard_normal((6, 4))
    k = build_k(a, a, 1.0)
    assert np.allclose(k.matrix, np.eye(4), atol=1e-12)


def test_k_two_forms_agree(rng):
    a = rng.standard_normal((8, 5))
    beta = 0.01
    k = build_k(a, 1.1 * a, beta)
    alt = np.eye(5) + regularized_pseudoinverse(a, beta) @ (0.1 * a)
    assert np.allclose(k.matrix, alt, atol=1e-10)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000), st.integers(2, 12), st.floats(1e-3, 10.0))
def test_k_inverse_roundtrip(seed, d, beta):
    r = np.random.default_rng(seed)
    a = r.standard_normal((d + 2, d))
    at = a + 0.1 * r.standard_normal(a.shape)
    k = build_k(a, at, beta)
    assert np.allclose(k.matrix @ k.inverse, np.eye(d), atol=1e-8)
    x = r.standard_normal(d)
    assert np.allclose(k.apply_inverse(k.apply(x)), x, atol=1e-8)


def test_build_k_errors():
    with pytest.raises(DimensionError):
        build_k(np.ones((2, 3)), np.ones((3, 3)), 1.0)
    with pytest.raises(ParameterError):
        build_k(np.eye(2), np.eye(2), 0.0)
    # A^T A_tilde + beta I singular: A_tilde = -beta A^+-ish choice in 1x1
    with pytest.raises(ConditioningError):
        build_k(np.array([[1.0]]), np.array([[-1.0]]), 1.0)


def test_pseudoinverse_examples(rng):
    assert np.allclose(regularized_pseudoinverse(np.eye(3), 0.5), np.eye(3) / 1.5)
    assert regularized_pseudoinverse(np.array([[2.0]]), 1.0)[0, 0] == pytest.approx(0.4)
    a = rng.standard_normal((6, 4))
    p = regularized_pseudoinverse(a, 1e-8)
    assert np.linalg.norm(a @ p @ a - a) <= 1e-5 * np.linalg.norm(a)
    p1 = regularized_pseudoinverse(a, 0.3)
    assert np.allclose((a.T @ a + 0.3 * np.eye(4)) @ p1, a.T, atol=1e-10)


def test_spectral_norm_matches_svd(rng):
    m = rng.standard_normal((7, 5))
    assert spectral_norm(m) == pytest.approx(np.linalg.svd(m, compute_uv=False)[0], rel=1e-7)


def test_spectral_factorization_checks(rng):
    q, _ = np.linalg.qr(rng.standard_normal((4, 4)))
    SpectralFactorization(q, np.array([3.0, 2.0, 1.0, 0.5]))
    with pytest.raises(ParameterError):
        SpectralFactorization(q, np.array([1.0, 2.0, 1.0, 0.5]))
    with pytest.raises(ParameterError):
        SpectralFactorization(2 * q, np.array([3.0, 2.0, 1.0, 0.5]))


def test_test_operators_trivial_cases():
    ops = make_test_operator("multiplicative", (12, 5), {"alpha_minus": 1.0, "alpha_plus": 1.0}, 3)
    assert np.array_equal(ops.f, ops.f_tilde)
    ops = make_test_operator("truncation", (12, 5), {"threshold": 1e-3}, 3)
    assert np.array_equal(ops.f, ops.f_tilde)


def test_additive_lowrank_rank():
    ops = make_test_operator("additive_lowrank", (200, 40), {"epsilon": 0.02, "rank": 5}, 0)
    assert np.linalg.matrix_rank(ops.f_tilde - ops.f, tol=1e-10) == 5


def test_rel_error_is_exact():
    ops = make_test_operator("multiplicative", (30, 10), {"rel_error": 0.06}, 1, decay=2.0)
    assert relative_operator_error(ops.f, ops.f_tilde) == pytest.approx(0.06, rel=1e-6)


def test_test_operator_deterministic():
    a = make_test_operator("additive_lowrank", (15, 6), {"epsilon": 0.1}, 9)
    b = make_test_operator("additive_lowrank", (15, 6), {"epsilon": 0.1}, 9)
    assert io.operator_to_bytes(a.f_tilde) == io.operator_to_bytes(b.f_tilde)
    assert io.operator_to_bytes(a.o) == io.operator_to_bytes(b.o)


def test_observation_conditioning(rng):
    o = random_observation(20, 50, rng)
    assert np.linalg.cond(o) <= 10


def test_discrepancy_norms_examples():
    f, ft = np.array([[1.0]]), np.array([[2.0]])
    k = build_k(f, ft, 1.0)
    latent, proximal = discrepancy_norms(f, ft, k)
    assert latent == pytest.approx(0.5)
    assert proximal == pytest.approx(abs(1 - 1 / k.matrix[0, 0]), rel=1e-7)
    latent, proximal = discrepancy_norms(np.eye(3), np.eye(3), build_k(np.eye(3), np.eye(3), 1.0))
    assert latent == 0.0 and proximal == 0.0


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_diagonal_mixing_inequality(seed):
    r = np.random.default_rng(seed)
    d = int(r.integers(1, 8))
    s = r.uniform(0.1, 3.0, d)
    alpha = r.uniform(0.5, 1.5, d)
    sigma = float(r.uniform(0.05, 1.0))
    f, ft = np.diag(s), np.diag(alpha * s)
    k = build_k(f, ft, sigma**2)
    latent, proximal = discrepancy_norms(f, ft, k)
    assert proximal <= latent + 1e-9


def test_io_roundtrip(tmp_path, rng):
    m = rng.standard_normal((3, 4))
    io.save_operator(tmp_path / "m.bin", m)
    assert np.array_equal(io.load_operator(tmp_path / "m.bin"), m)
    arrs = [rng.standard_normal((2, 2)), rng.standard_normal((1, 5))]
    io.save_arrays(tmp_path / "a.bin", arrs)
    assert all(np.array_equal(x, y) for x, y in zip(io.load_arrays(tmp_path / "a.bin"), arrs))
    io.write_csv(tmp_path / "t.csv", ["a", "b"], [[1, 0.1], ["x", float("nan")]])
    header, rows = io.read_csv(tmp_path / "t.csv")
    assert header == ["a", "b"] and rows[0] == ["1", "0.1"]
    with pytest.raises(Exception):
        io.operator_from_bytes(b"XXXX" + bytes(20))
