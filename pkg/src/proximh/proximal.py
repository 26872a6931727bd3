"""Proximal correction maps: linear closed form, one Gauss-Newton step, log-dets.

A forward model is any object with ``apply(x)``, ``jvp(x, v)`` and
``vjp(x, w)``. The Gauss-Newton step solves

    (J^T J + beta I) dx = -J^T r,   r = A(x_tilde) - A_tilde(x_tilde)

matrix-free with conjugate gradients and returns ``x_tilde + dx``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Any, Optional

import numpy as np
import scipy.linalg
import scipy.sparse.linalg as spla

from .errors import CapacityError, DimensionError, ParameterError, SolverError
from .linalg import CorrectionOperator

EXACT_SMALL_MAX_DIM = 512


class LinearModel:
    """``x -> M x`` exposed through the forward-model protocol."""

    def __init__(self, m):
        self.m = np.asarray(m, dtype=np.float64)

    @property
    def d_in(self):
        return self.m.shape[1]

    def apply(self, x):
        return self.m @ x

    def jvp(self, x, v):
        return self.m @ v

    def vjp(self, x, w):
        return self.m.T @ w


class GeneratorModel:
    """``z -> A G(z)`` for a linear observation map ``A`` and generator ``G``."""

    def __init__(self, a, generator):
        self.a = np.asarray(a, dtype=np.float64)
        self.generator = generator
        if self.a.shape[1] != generator.d_x:
            raise DimensionError("A and the generator output disagree")

    @property
    def d_in(self):
        return self.generator.d_z

    def apply(self, z):
        return self.generator(z) @ self.a.T

    def jvp(self, z, v):
        return self.a @ self.generator.jvp(z, v)

    def vjp(self, z, w):
        return self.generator.vjp(z, self.a.T @ w)


@dataclass(frozen=True)
class GaussNewtonStep:
    """Settings and model handles for one damped Gauss-Newton correction.

    ``delta`` is only consulted by the ``eigen_delta`` log-det mode, where the
    approximate model is assumed to be ``(1 - delta) A``.
    """

    beta: float
    forward: Any
    forward_tilde: Any
    tol: float = 1e-10
    max_iter: int = 500
    delta: Optional[float] = None

    def __post_init__(self):
        if not self.beta > 0:
            raise ParameterError("beta must be positive")
        if self.delta is not None and not 0 <= self.delta < 1:
            raise ParameterError("delta must lie in [0, 1)")


def proximal_correct_linear(k: CorrectionOperator, x_tilde):
    """``x = K x_tilde`` for one vector or a batch of rows."""
    x_tilde = np.asarray(x_tilde, dtype=np.float64)
    if x_tilde.shape[-1] != k.dim:
        raise DimensionError(f"x_tilde has dimension {x_tilde.shape[-1]}, K has {k.dim}")
    return k.apply(x_tilde)


def _solve_normal(jtj_apply, rhs, beta, tol, max_iter):
    n = rhs.shape[0]
    op = spla.LinearOperator((n, n), matvec=lambda v: jtj_apply(v) + beta * v, dtype=np.float64)
    if not np.any(rhs):
        return np.zeros(n)
    sol, info = spla.cg(op, rhs, rtol=tol, atol=0.0, maxiter=max_iter)
    if info != 0:
        resid = np.linalg.norm(op.matvec(sol) - rhs) / np.linalg.norm(rhs)
        raise SolverError(f"CG did not reach rtol {tol} in {max_iter} iterations", residual=resid)
    return sol


def _sum_normal(gns, x_tilde):
    """Right-hand side ``-sum J_i^T r_i`` and the matvec ``v -> sum J_i^T J_i v``."""
    rhs = np.zeros_like(x_tilde)
    for gn in gns:
        r = gn.forward.apply(x_tilde) - gn.forward_tilde.apply(x_tilde)
        rhs -= gn.forward.vjp(x_tilde, r)

    def jtj(v):
        out = np.zeros_like(v)
        for gn in gns:
            out += gn.forward.vjp(x_tilde, gn.forward.jvp(x_tilde, v))
        return out

    return rhs, jtj


def gauss_newton_step(gn: GaussNewtonStep, x_tilde):
    """One damped Gauss-Newton update of the proximal objective at ``x_tilde``."""
    return gauss_newton_step_multisource([gn], gn.beta, x_tilde)


def gauss_newton_step_multisource(gn_list, beta, x_tilde):
    """Solve ``(sum J_i^T J_i + beta I) dx = -sum J_i^T r_i`` and return ``x_tilde + dx``."""
    x_tilde = np.asarray(x_tilde, dtype=np.float64)
    if not gn_list:
        raise ParameterError("need at least one source")
    if not beta > 0:
        raise ParameterError("beta must be positive")
    rhs, jtj = _sum_normal(gn_list, x_tilde)
    settings = gn_list[0]
    dx = _solve_normal(jtj, rhs, beta, settings.tol, settings.max_iter)
    return x_tilde + dx


def model_jacobian(model, x):
    """Dense Jacobian assembled column by column from ``jvp``."""
    x = np.asarray(x, dtype=np.float64)
    eye = np.eye(x.shape[0])
    return np.stack([model.jvp(x, e) for e in eye], axis=1)


def gn_log_jacobian_det(gn: GaussNewtonStep, x_tilde, mode="exact_small"):
    """``log |det J_GN(x_tilde)|`` under the small-residual approximation.

    ``exact_small`` assembles ``I - (J^T J + beta I)^{-1} J^T (J - J_tilde)``
    densely from both models' Jacobians. ``eigen_delta`` assumes
    ``A_tilde = (1 - delta) A`` and returns
    ``sum_i log(1 - delta lam_i / (lam_i + beta))`` over eigenvalues of ``J^T J``.
    """
    x_tilde = np.asarray(x_tilde, dtype=np.float64)
    d = x_tilde.shape[0]
    if mode == "exact_small":
        if d > EXACT_SMALL_MAX_DIM:
            raise CapacityError(f"exact_small needs d_x <= {EXACT_SMALL_MAX_DIM}, got {d}")
        j = model_jacobian(gn.forward, x_tilde)
        j_tilde = model_jacobian(gn.forward_tilde, x_tilde)
        h = j.T @ j + gn.beta * np.eye(d)
        jac = np.eye(d) - scipy.linalg.solve(h, j.T @ (j - j_tilde), assume_a="pos")
        sign, logdet = np.linalg.slogdet(jac)
        if sign == 0:
            return float("-inf")
        return float(logdet)
    if mode == "eigen_delta":
        if gn.delta is None:
            raise ParameterError("eigen_delta mode needs gn.delta")
        j = model_jacobian(gn.forward, x_tilde)
        lam = np.clip(np.linalg.eigvalsh(j.T @ j), 0.0, None)
        return float(np.sum(np.log1p(-gn.delta * lam / (lam + gn.beta))))
    raise ParameterError(f"unknown log-det mode {mode!r}")


@dataclass(frozen=True)
class LogDetDiagnostics:
    sorted_logdets: np.ndarray
    pair_ratios: np.ndarray
    quantiles: tuple

    def __post_init__(self):
        if np.any(np.diff(self.sorted_logdets) < 0):
            raise ParameterError("sorted_logdets must be non-decreasing")
        q05, q50, q95 = self.quantiles
        if not q05 <= q50 <= q95:
            raise ParameterError("quantiles out of order")


def logdet_diagnostics(gn: GaussNewtonStep, samples, pairs=2000, seed=0, mode="exact_small"):
    """Sorted per-sample log-dets and determinant ratios over random sample pairs."""
    samples = np.asarray(samples, dtype=np.float64)
    if samples.ndim != 2 or samples.shape[0] < 2:
        raise DimensionError("need at least two samples")
    logdets = np.array([gn_log_jacobian_det(gn, s, mode) for s in samples])
    rng = np.random.default_rng(seed)
    n = samples.shape[0]
    i = rng.integers(0, n, int(pairs))
    j = (i + rng.integers(1, n, int(pairs))) % n
    ratios = np.exp(logdets[i] - logdets[j])
    q = np.quantile(ratios, [0.05, 0.5, 0.95])
    return LogDetDiagnostics(np.sort(logdets), ratios, (float(q[0]), float(q[1]), float(q[2])))
