"""Dense operators, regularized pseudoinverses and the proximal correction operator.

Operators are plain 2-D ``float64`` numpy arrays. The correction operator

    K = (A^T A + beta I)^{-1} (A^T A_tilde + beta I)

maps a draw of the approximate posterior onto the minimizer of
``||A x - A_tilde x_tilde||^2 + beta ||x - x_tilde||^2``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
import scipy.linalg

from .errors import ConditioningError, DimensionError, ParameterError

IDENTITY_TOL = 1e-10
# "well conditioned" observation operators are regenerated until cond <= this
OBSERVATION_MAX_COND = 10.0


def as_operator(m, name="operator") -> np.ndarray:
    """Validate and return ``m`` as a finite 2-D float64 array."""
    arr = np.asarray(m, dtype=np.float64)
    if arr.ndim != 2:
        raise DimensionError(f"{name} must be 2-D, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ParameterError(f"{name} has non-finite entries")
    return arr


def _check_beta(beta):
    if not beta > 0:
        raise ParameterError(f"beta must be positive, got {beta}")


def condition_estimate(m) -> float:
    """1-norm condition number (``inf`` for singular matrices)."""
    try:
        with np.errstate(all="ignore"):
            c = float(np.linalg.cond(m, 1))
    except np.linalg.LinAlgError:
        return float("inf")
    return c if np.isfinite(c) else float("inf")


@dataclass(frozen=True)
class CorrectionOperator:
    """The linear proximal correction ``K`` together with its inverse."""

    beta: float
    matrix: np.ndarray
    inverse: np.ndarray

    def apply(self, x_tilde):
        """``K x_tilde`` for a vector or a batch of row vectors."""
        return np.asarray(x_tilde) @ self.matrix.T

    def apply_inverse(self, x):
        return np.asarray(x) @ self.inverse.T

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]


@dataclass(frozen=True)
class SpectralFactorization:
    """``V diag(s) V^T`` with orthogonal ``V`` and non-increasing ``s``."""

    v: np.ndarray
    s: np.ndarray

    def __post_init__(self):
        d = self.v.shape[0]
        if self.v.shape != (d, d) or self.s.shape != (d,):
            raise DimensionError("v must be d x d and s length d")
        if np.max(np.abs(self.v.T @ self.v - np.eye(d))) > 1e-10:
            raise ParameterError("v is not orthogonal")
        if np.any(np.diff(self.s) > 0) or np.any(self.s < 0):
            raise ParameterError("s must be nonnegative and non-increasing")

    def assemble(self, scale=None) -> np.ndarray:
        s = self.s if scale is None else self.s * scale
        return (self.v * s) @ self.v.T


def regularized_pseudoinverse(a, beta) -> np.ndarray:
    """Return ``(A^T A + beta I)^{-1} A^T`` (shape d_x x d_y)."""
    a = as_operator(a, "a")
    _check_beta(beta)
    gram = a.T @ a + beta * np.eye(a.shape[1])
    return scipy.linalg.solve(gram, a.T, assume_a="pos")


def build_k(a, a_tilde, beta) -> CorrectionOperator:
    """Assemble the correction operator ``K`` and its inverse.

    Raises:
        DimensionError: ``a`` and ``a_tilde`` differ in shape.
        ParameterError: ``beta <= 0``.
        ConditioningError: ``K`` is numerically singular.
    """
    a = as_operator(a, "a")
    a_tilde = as_operator(a_tilde, "a_tilde")
    if a.shape != a_tilde.shape:
        raise DimensionError(f"shape mismatch: A {a.shape} vs A_tilde {a_tilde.shape}")
    _check_beta(beta)
    d = a.shape[1]
    eye = np.eye(d)
    lhs = a.T @ a + beta * eye
    rhs = a.T @ a_tilde + beta * eye
    k = scipy.linalg.lu_solve(scipy.linalg.lu_factor(lhs), rhs)
    cond = condition_estimate(rhs)
    if not np.isfinite(cond) or cond > 1.0 / np.finfo(float).eps:
        raise ConditioningError("correction operator K is singular", cond)
    k_inv = scipy.linalg.lu_solve(scipy.linalg.lu_factor(rhs), lhs)
    resid = np.max(np.abs(k @ k_inv - eye))
    if resid > IDENTITY_TOL * max(1.0, cond):
        raise ConditioningError(f"K K^-1 deviates from identity by {resid:.2e}", cond)
    return CorrectionOperator(beta=float(beta), matrix=k, inverse=k_inv)


def spectral_norm(m, tol=1e-8, max_iter=20000, seed=0) -> float:
    """Largest singular value of ``m`` by power iteration on ``m^T m``."""
    m = np.asarray(m, dtype=np.float64)
    if m.size == 0:
        return 0.0
    rng = np.random.default_rng(seed)
    v = rng.standard_normal(m.shape[1])
    v /= np.linalg.norm(v)
    est = 0.0
    for _ in range(max_iter):
        w = m.T @ (m @ v)
        nw = np.linalg.norm(w)
        if nw == 0.0:
            return 0.0
        new = np.sqrt(nw)
        v = w / nw
        if abs(new - est) <= tol * new:
            est = new
            break
        est = new
    return float(np.linalg.norm(m @ v))


def invert_checked(m, name="matrix") -> np.ndarray:
    """Inverse via LU with a conditioning guard."""
    m = as_operator(m, name)
    cond = condition_estimate(m)
    if not np.isfinite(cond) or cond > 1e13:
        raise ConditioningError(f"{name} is singular", cond)
    return scipy.linalg.lu_solve(scipy.linalg.lu_factor(m), np.eye(m.shape[0]))


def latent_map(f, f_tilde) -> np.ndarray:
    """``F_tilde^{-1} F``; raises ConditioningError when F_tilde is singular."""
    f = as_operator(f, "f")
    f_tilde = as_operator(f_tilde, "f_tilde")
    if f.shape != f_tilde.shape or f.shape[0] != f.shape[1]:
        raise DimensionError("latent map needs square F and F_tilde of equal shape")
    cond = condition_estimate(f_tilde)
    if not np.isfinite(cond) or cond > 1e13:
        raise ConditioningError("F_tilde is singular; latent map undefined", cond)
    return scipy.linalg.lu_solve(scipy.linalg.lu_factor(f_tilde), f)


def discrepancy_norms(f, f_tilde, k: CorrectionOperator):
    """Return ``(||I - F_tilde^{-1} F||_2, ||I - K^{-1}||_2)``.

    The first term requires an invertible ``F_tilde`` (the matrix that is
    actually inverted); a singular one raises ConditioningError.
    """
    m = latent_map(f, f_tilde)
    eye = np.eye(m.shape[0])
    latent = spectral_norm(eye - m)
    proximal = spectral_norm(np.eye(k.dim) - k.inverse)
    return latent, proximal


def random_orthogonal(d, rng) -> np.ndarray:
    """Haar-distributed orthogonal matrix from a sign-fixed QR factorization."""
    q, r = np.linalg.qr(rng.standard_normal((d, d)))
    return q * np.sign(np.diag(r))


def random_observation(d_y, d_x, rng, max_cond=OBSERVATION_MAX_COND, max_tries=200):
    """Gaussian ``d_y x d_x`` matrix with entries N(0, 1/d_x), regenerated
    until its 2-norm condition number is at most ``max_cond``."""
    for _ in range(max_tries):
        o = rng.standard_normal((d_y, d_x)) / np.sqrt(d_x)
        if np.linalg.cond(o) <= max_cond:
            return o
    raise ParameterError(
        f"could not draw a {d_y}x{d_x} observation operator with cond <= {max_cond}"
    )


class TestOperators(NamedTuple):
    f: np.ndarray
    f_tilde: np.ndarray
    o: np.ndarray
    spectrum: SpectralFactorization
    scale: np.ndarray  # per-mode multiplier of S (None for additive perturbations)


TestOperators.__test__ = False  # keep pytest from collecting the tuple


def _multiplicative_alpha(params, d, rng):
    if "rel_error" in params:
        eps = float(params["rel_error"])
        if not 0 <= eps < 1:
            raise ParameterError("rel_error must lie in [0, 1)")
        xi = rng.uniform(0.0, 1.0, d) * rng.choice([-1.0, 1.0], d)
        xi[0] = np.sign(xi[0]) or 1.0
        return 1.0 + eps * xi
    lo = float(params.get("alpha_minus", 1.0))
    hi = float(params.get("alpha_plus", 1.0))
    if not (0 < lo <= 1 <= hi):
        raise ParameterError("need 0 < alpha_minus <= 1 <= alpha_plus")
    return rng.uniform(lo, hi, d)


def make_test_operator(kind, dims, params=None, seed=0, decay=1.0) -> TestOperators:
    """Spectral test operators ``F = V S V^T``, ``F_tilde`` and ``O``.

    Args:
        kind: ``"multiplicative"`` (S_tilde = alpha * S with alpha uniform on
            ``[alpha_minus, alpha_plus]``, or alpha = 1 + rel_error * xi with
            ``|xi| <= 1`` and ``|xi_1| = 1`` so that ``||F - F_tilde|| / ||F||``
            equals ``rel_error`` exactly), ``"additive_lowrank"``
            (F + eps U1 U2^T with ``rank`` columns) or ``"truncation"``
            (modes with S_ii <= threshold zeroed).
        dims: ``(d_x, d_y)`` with ``d_y <= d_x``.
        params: perturbation parameters for ``kind``.
        seed: RNG seed; identical seeds give bit-identical operators.
        decay: exponent p of the spectrum ``S_ii = 1 / i**p``.
    """
    params = dict(params or {})
    d_x, d_y = (int(v) for v in dims)
    if not 0 < d_y <= d_x:
        raise ParameterError(f"need 0 < d_y <= d_x, got {dims}")
    rng = np.random.default_rng(seed)
    v = random_orthogonal(d_x, rng)
    s = 1.0 / np.arange(1, d_x + 1, dtype=np.float64) ** decay
    spec = SpectralFactorization(v, s)
    f = spec.assemble()
    scale = None
    if kind == "multiplicative":
        scale = _multiplicative_alpha(params, d_x, rng)
        f_tilde = spec.assemble(scale)
    elif kind == "additive_lowrank":
        eps = float(params.get("epsilon", 0.0))
        rank = int(params.get("rank", 5))
        if not eps > 0 or rank < 1:
            raise ParameterError("additive_lowrank needs epsilon > 0 and rank >= 1")
        u1 = rng.standard_normal((d_x, rank))
        u2 = rng.standard_normal((d_x, rank))
        f_tilde = f + eps * (u1 @ u2.T)
    elif kind == "truncation":
        thr = float(params.get("threshold", 0.0))
        if not thr > 0:
            raise ParameterError("truncation needs threshold > 0")
        scale = (s > thr).astype(np.float64)
        f_tilde = spec.assemble(scale)
    else:
        raise ParameterError(f"unknown test operator kind {kind!r}")
    o = random_observation(d_y, d_x, rng)
    return TestOperators(f, f_tilde, o, spec, scale)


def relative_operator_error(a, a_tilde) -> float:
    """``||A - A_tilde||_2 / ||A||_2``."""
    return spectral_norm(np.asarray(a_tilde) - np.asarray(a)) / spectral_norm(a)
