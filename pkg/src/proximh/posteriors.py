"""Exact, approximate, latent and proximal posteriors of a linear inverse problem.

With Gaussian noise ``N(0, sigma^2 I)`` and prior ``p``::

    exact     log q(y - A x)              + log p(x)
    approx    log q(y - A_tilde x)        + log p(x)
    latent    log q(y - A x)              + log p(F_tilde^{-1} F x)
    proximal  log q(y - A_tilde K^{-1} x) + log p(K^{-1} x)
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Any, Optional

import numpy as np
import scipy.linalg

from .densities import GaussianDensity
from .errors import DimensionError, ParameterError, UnsupportedModelError
from .linalg import CorrectionOperator, as_operator, latent_map

KINDS = ("exact", "approx", "latent", "proximal")
PSD_FLOOR = -1e-10


@dataclass(frozen=True)
class LinearInverseProblem:
    """``y = O F x + e`` with an approximate operator ``A_tilde = O F_tilde``.

    ``o``, ``f`` and ``f_tilde`` may be omitted when only ``a``/``a_tilde``
    are known; the latent posterior is then unavailable.
    """

    a: np.ndarray
    a_tilde: np.ndarray
    sigma: float
    prior: Any
    y: np.ndarray
    o: Optional[np.ndarray] = None
    f: Optional[np.ndarray] = None
    f_tilde: Optional[np.ndarray] = None

    def __post_init__(self):
        a = as_operator(self.a, "a")
        a_tilde = as_operator(self.a_tilde, "a_tilde")
        if a.shape != a_tilde.shape:
            raise DimensionError("A and A_tilde must share a shape")
        if not self.sigma > 0:
            raise ParameterError("sigma must be positive")
        y = np.asarray(self.y, dtype=np.float64)
        if y.shape != (a.shape[0],):
            raise DimensionError(f"y has shape {y.shape}, expected ({a.shape[0]},)")
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "a_tilde", a_tilde)
        object.__setattr__(self, "y", y)
        if self.o is not None and self.f is not None:
            if np.max(np.abs(self.o @ self.f - a)) > 1e-10 * max(1.0, np.abs(a).max()):
                raise ParameterError("A != O F")
            if self.f_tilde is not None and np.max(np.abs(self.o @ self.f_tilde - a_tilde)) > 1e-10 * max(
                1.0, np.abs(a_tilde).max()
            ):
                raise ParameterError("A_tilde != O F_tilde")

    @property
    def d_x(self):
        return self.a.shape[1]

    @property
    def d_y(self):
        return self.a.shape[0]

    def with_y(self, y):
        return LinearInverseProblem(self.a, self.a_tilde, self.sigma, self.prior, y, self.o, self.f, self.f_tilde)

    def log_noise(self, resid):
        """``log q(resid)`` up to a constant, vectorized over leading axes."""
        return -0.5 * np.sum(resid * resid, axis=-1) / self.sigma**2

    def latent_matrix(self):
        if self.f is None or self.f_tilde is None:
            raise UnsupportedModelError("latent posterior needs F and F_tilde")
        m = latent_map(self.f, self.f_tilde)
        f_inv_check = self.f @ scipy.linalg.inv(self.f)
        if np.max(np.abs(f_inv_check - np.eye(self.f.shape[0]))) > 1e-8:
            raise UnsupportedModelError("F is not reliably invertible")
        return m


def log_posterior(kind, prob: LinearInverseProblem, k: Optional[CorrectionOperator], x):
    """Unnormalized log-density of one of the four posterior families."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != prob.d_x:
        raise DimensionError("x has the wrong dimension")
    y = prob.y
    if kind == "exact":
        return prob.log_noise(y - x @ prob.a.T) + prob.prior.logpdf_grad(x)[0]
    if kind == "approx":
        return prob.log_noise(y - x @ prob.a_tilde.T) + prob.prior.logpdf_grad(x)[0]
    if kind == "latent":
        z = x @ prob.latent_matrix().T
        return prob.log_noise(y - x @ prob.a.T) + prob.prior.logpdf_grad(z)[0]
    if kind == "proximal":
        if k is None:
            raise ParameterError("proximal posterior needs the correction operator K")
        xt = k.apply_inverse(x)
        return prob.log_noise(y - xt @ prob.a_tilde.T) + prob.prior.logpdf_grad(xt)[0]
    raise ParameterError(f"unknown posterior kind {kind!r}")


@dataclass(frozen=True)
class GaussianPosteriorForm:
    """``N(mean_map @ y, covariance)``."""

    variant: str
    mean_map: np.ndarray
    covariance: np.ndarray

    def __post_init__(self):
        c = self.covariance
        if np.max(np.abs(c - c.T)) > 1e-10 * max(1.0, np.abs(c).max()):
            raise ParameterError("covariance is not symmetric")
        object.__setattr__(self, "covariance", 0.5 * (c + c.T))

    def mean(self, y):
        return self.mean_map @ np.asarray(y, dtype=np.float64)

    def sqrt_factor(self):
        """Symmetric factor ``L`` with ``L L^T = covariance`` (PSD-repaired)."""
        lam, vec = np.linalg.eigh(self.covariance)
        if lam.min() < PSD_FLOOR * max(1.0, lam.max()):
            raise ParameterError(f"covariance is not PSD (min eigenvalue {lam.min():.3e})")
        return (vec * np.sqrt(np.clip(lam, 0.0, None))) @ vec.T

    def logpdf(self, x, y):
        """Log-density up to a constant (precision via pseudo-inverse)."""
        diff = np.asarray(x) - self.mean(y)
        prec = np.linalg.pinv(self.covariance, rcond=1e-12, hermitian=True)
        return -0.5 * np.einsum("...i,ij,...j->...", diff, prec, diff)


def _require_standard_gaussian(prob):
    p = prob.prior
    if not isinstance(p, GaussianDensity) or p.variance != 1.0 or np.any(p.mean != 0):
        raise UnsupportedModelError("closed forms need a standard Gaussian prior N(0, I)")


def _pinv_and_cov(a, sigma):
    d_y, d_x = a.shape
    gram = a @ a.T + sigma**2 * np.eye(d_y)
    a_dag = scipy.linalg.solve(gram, a, assume_a="pos").T
    cov = np.eye(d_x) - a_dag @ a
    return a_dag, 0.5 * (cov + cov.T)


def gaussian_posterior_form(kind, prob: LinearInverseProblem, k: Optional[CorrectionOperator] = None):
    """Closed-form mean map and covariance for a standard Gaussian prior."""
    _require_standard_gaussian(prob)
    if kind == "exact":
        m, c = _pinv_and_cov(prob.a, prob.sigma)
        return GaussianPosteriorForm("exact", m, c)
    m_a, c_a = _pinv_and_cov(prob.a_tilde, prob.sigma)
    if kind == "approx":
        return GaussianPosteriorForm("approx", m_a, c_a)
    if kind == "latent":
        t = scipy.linalg.solve(prob.f, prob.f_tilde) if prob.f is not None else None
        if t is None:
            raise UnsupportedModelError("latent posterior needs F and F_tilde")
        prob.latent_matrix()  # conditioning checks
        return GaussianPosteriorForm("latent", t @ m_a, t @ c_a @ t.T)
    if kind == "proximal":
        if k is None:
            raise ParameterError("proximal form needs K")
        return GaussianPosteriorForm("proximal", k.matrix @ m_a, k.matrix @ c_a @ k.matrix.T)
    raise ParameterError(f"unknown posterior kind {kind!r}")


def sample_gaussian_posterior(form: GaussianPosteriorForm, y, n, seed):
    """``n`` i.i.d. draws from ``N(mean_map y, covariance)``.

    ``seed`` may be an integer or a ``numpy.random.Generator``.
    """
    rng = np.random.default_rng(seed)
    root = form.sqrt_factor()
    xi = rng.standard_normal((int(n), root.shape[0]))
    return form.mean(y) + xi @ root.T
