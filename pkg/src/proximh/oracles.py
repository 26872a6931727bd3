"""Standalone oracle suites behind ``prox-imh oracle``.

Each suite is independent of the code path it checks: closed forms are
compared with Monte Carlo, adjoint gradients with finite differences, and
sampler output with exact transition kernels. Every suite returns a list of
:class:`Check` records.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .densities import BimodalPrior, GaussianDensity
from .helmholtz import (
    GMRESSettings,
    HelmholtzGrid,
    HelmholtzProblem,
    born_operator_apply,
    dct_precondition,
    default_sources,
    gmres_solve,
    helmholtz_matvec,
    misfit_gradient,
    neg_laplacian,
    nonlinear_forward,
)
from .linalg import build_k
from .posteriors import LinearInverseProblem
from .samplers import Draws, PoolProposal, imh_run, mala_run
from .theory import DiagonalSpec, kl_diagonal, kl_gaussian_general, kl_monte_carlo


@dataclass(frozen=True)
class Check:
    name: str
    value: float
    threshold: float
    passed: bool

    def line(self):
        tag = "PASS" if self.passed else "FAIL"
        return f"{tag} {self.name}: {self.value:.3e} (threshold {self.threshold:.3e})"


def _le(name, value, threshold):
    return Check(name, float(value), float(threshold), bool(value <= threshold))


# ---------------------------------------------------------------------------
# KL


def random_diagonal_spec(rng, d_max=20):
    d = int(rng.integers(2, d_max + 1))
    d_y = int(rng.integers(1, d + 1))
    s = rng.uniform(0.2, 3.0, d_y)
    alpha = rng.uniform(0.5, 1.5, d)
    return DiagonalSpec(s, alpha, float(rng.uniform(0.05, 1.0)))


def random_dense_problem(rng, d=10, d_y=None):
    d_y = d_y or d // 2
    a = rng.standard_normal((d_y, d)) / np.sqrt(d)
    a_tilde = a + 0.1 * rng.standard_normal((d_y, d)) / np.sqrt(d)
    o = np.eye(d_y, d)
    f = np.vstack([a, rng.standard_normal((d - d_y, d))])
    f_tilde = np.vstack([a_tilde, f[d_y:]])
    sigma = float(rng.uniform(0.1, 0.5))
    return LinearInverseProblem(a, a_tilde, sigma, GaussianDensity.standard(d), np.zeros(d_y), o, f, f_tilde)


def kl_suite(n_diag=50, n_mc=10, n_y=10_000, seed=0):
    """Diagonal closed form vs general formula, and general formula vs Monte Carlo."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n_diag):
        spec = random_diagonal_spec(rng)
        prob = spec.problem()
        general = kl_gaussian_general(prob, build_k(prob.a, prob.a_tilde, spec.sigma**2))
        worst = max(worst, float(np.max(np.abs(np.subtract(kl_diagonal(spec).as_tuple(), general.as_tuple())))))
    worst_z = 0.0
    for i in range(n_mc):
        prob = random_dense_problem(rng)
        k = build_k(prob.a, prob.a_tilde, prob.sigma**2)
        closed = kl_gaussian_general(prob, k).as_tuple()
        est, err = kl_monte_carlo(prob, k, n_y, seed + 1 + i)
        worst_z = max(worst_z, max(abs(c - m) / e for c, m, e in zip(closed, est, err)))
    return [
        _le("kl diagonal vs general, max abs err", worst, 1e-8),
        _le("kl general vs monte carlo, max |z|", worst_z, 3.0),
    ]


# ---------------------------------------------------------------------------
# PDE gradient and solver checks


def gradient_suite(n=32, param_n=8, coords=10, seed=0, k_wave=2.4 * np.pi):
    """Adjoint gradient vs central differences, Born remainder, DCT exactness, GMRES speed-up."""
    rng = np.random.default_rng(seed)
    tight = GMRESSettings(tol=1e-12, restart=100, max_iter=4000)
    grid = HelmholtzGrid(n, k_wave)
    prob = HelmholtzProblem(grid, HelmholtzGrid(n // 2, k_wave), param_n, default_sources(2), 40, tight)
    x = 1.0 + 0.2 * rng.random(prob.d_x)
    y_obs = [nonlinear_forward(prob, 1.0 + 0.2 * rng.random(prob.d_x), i)[0] for i in range(prob.n_sources)]
    _, grad = misfit_gradient(prob, x, y_obs)
    worst = 0.0
    for j in rng.choice(prob.d_x, size=coords, replace=False):
        step = 1e-5
        e = np.zeros(prob.d_x)
        e[j] = step
        fd = (misfit_gradient(prob, x + e, y_obs)[0] - misfit_gradient(prob, x - e, y_obs)[0]) / (2 * step)
        worst = max(worst, abs(fd - grad[j]) / max(abs(fd), abs(grad[j]), 1e-300))
    checks = [_le("misfit gradient vs central differences, max rel err", worst, 1e-5)]

    # Born: |u(x0 + t dx) - u0 - t F dx| / t^2 should stay bounded as t halves
    dx = rng.standard_normal(prob.d_x)
    u0 = nonlinear_forward(prob, x, 0)[1]
    born = born_operator_apply(prob, x, dx, 0, u0=u0)
    ratios = []
    for t in (1e-2, 5e-3, 2.5e-3):
        ut = nonlinear_forward(prob, x + t * dx, 0)[1]
        ratios.append(np.linalg.norm(ut - u0 - t * born) / t**2)
    spread = max(ratios) / min(ratios)
    checks.append(_le("born remainder ratio spread over t-halving", spread, 1.5))

    # DCT preconditioner inverts its own constant-coefficient operator -Lap + k^2 (1 + x_bar)
    x_bar = 0.3
    v = rng.standard_normal(grid.size)
    back = dct_precondition(grid, x_bar, neg_laplacian(grid, v) + k_wave**2 * (1.0 + x_bar) * v)
    checks.append(_le("dct preconditioner on constant medium, rel err", np.linalg.norm(back - v) / np.linalg.norm(v), 1e-10))

    # varying medium on n = 64: preconditioned GMRES must need fewer iterations
    g64 = HelmholtzGrid(64, 3.4 * np.pi)
    xx, yy = g64.mesh()
    med = 1.0 + 0.3 * np.exp(-((xx - 0.45) ** 2 + (yy - 0.55) ** 2) / 0.02).ravel()
    b = default_sources(1)[0].on(g64)
    settings = GMRESSettings()
    op = lambda w: helmholtz_matvec(g64, med, w)  # noqa: E731
    _, it_pre, _ = gmres_solve(op, lambda w: dct_precondition(g64, float(med.mean()), w), b, settings)
    try:
        _, it_plain, _ = gmres_solve(op, None, b, settings)
    except ArithmeticError:
        it_plain = settings.max_iter
    checks.append(Check("gmres iterations preconditioned / unpreconditioned", it_pre / it_plain, 1.0, it_pre < it_plain))
    return checks


# ---------------------------------------------------------------------------
# Exact transition kernels


def _tv(p, q):
    return 0.5 * float(np.sum(np.abs(np.asarray(p) - np.asarray(q))))


def imh_kernel_matrix(probs, log_w):
    """Transition matrix of IMH over finitely many atoms with weights ``log_w``."""
    probs = np.asarray(probs, dtype=np.float64)
    log_w = np.asarray(log_w, dtype=np.float64)
    acc = np.minimum(1.0, np.exp(log_w[None, :] - log_w[:, None]))
    p = probs[None, :] * acc
    np.fill_diagonal(p, 0.0)
    p[np.diag_indices_from(p)] = 1.0 - p.sum(axis=1)
    return p


def imh_kernel_check(steps=5, replicas=100_000, seed=0):
    probs = np.array([0.5, 0.3, 0.2])
    target = np.array([0.2, 0.3, 0.5])
    atoms = np.array([[0.0], [1.0], [2.0]])
    log_g = np.log(probs)
    pool = PoolProposal(Draws(atoms, atoms, log_g), probs)
    rec = imh_run(pool, lambda dr: np.log(target) - log_g, steps, seed, chains=replicas)
    idx = rec.states[:, -1, 0].astype(int)
    empirical = np.bincount(idx, minlength=3) / replicas
    exact = probs @ np.linalg.matrix_power(imh_kernel_matrix(probs, np.log(target) - log_g), steps)
    return _tv(empirical, exact)


MALA_EDGES = np.array([-1.2, -0.4, 0.4, 1.2])


def mala_bin_probabilities(logpdf_grad, x0, h, steps, lo=-7.0, hi=7.0, points=3501):
    """Bin probabilities of a 1-D MALA chain after ``steps`` by grid quadrature.

    The law is a point mass at ``x0`` (all-rejection path) plus a density
    propagated through the continuous part of the kernel.
    """
    grid = np.linspace(lo, hi, points)
    dx = grid[1] - grid[0]
    lp, g = logpdf_grad(grid[:, None])
    g = g[:, 0]
    mean = grid + 0.5 * h * h * g

    def log_q(to, frm_mean):
        return -0.5 * (to - frm_mean) ** 2 / (h * h) - 0.5 * np.log(2 * np.pi * h * h)

    # kern[i, j]: density of moving grid[i] -> grid[j] and accepting
    lq_fwd = log_q(grid[None, :], mean[:, None])
    lq_bwd = log_q(grid[:, None], mean[None, :])
    kern = np.exp(lq_fwd + np.minimum(0.0, lp[None, :] + lq_bwd - lp[:, None] - lq_fwd))
    lp0, g0 = logpdf_grad(np.array([[x0]]))
    lp0, g0 = float(lp0[0]), float(g0[0, 0])
    m0 = x0 + 0.5 * h * h * g0
    lq0 = log_q(grid, m0)
    k0 = np.exp(lq0 + np.minimum(0.0, lp + log_q(x0, mean) - lp0 - lq0))
    stay0 = 1.0 - k0.sum() * dx
    stay = 1.0 - kern.sum(axis=1) * dx
    dens = np.zeros(points)
    mass = 1.0
    for _ in range(int(steps)):
        dens = dens @ kern * dx + dens * stay + mass * k0
        mass *= stay0
    bins = np.searchsorted(MALA_EDGES, grid, side="right")
    probs = np.bincount(bins, weights=dens * dx, minlength=MALA_EDGES.size + 1)
    probs[np.searchsorted(MALA_EDGES, x0, side="right")] += mass
    return probs


def mala_kernel_check(steps=5, replicas=100_000, seed=0, h=0.9, x0=0.3):
    target = BimodalPrior(np.array([1.0]), c=1.0, tau=0.5)
    exact = mala_bin_probabilities(target.logpdf_grad, x0, h, steps)
    rec = mala_run(target.logpdf_grad, h, steps, seed, np.full((replicas, 1), x0))
    final = rec.states[:, -1, 0]
    empirical = np.bincount(np.searchsorted(MALA_EDGES, final, side="right"), minlength=MALA_EDGES.size + 1) / replicas
    return _tv(empirical, exact / exact.sum())


def kernel_suite(replicas=100_000, seed=0):
    return [
        _le("imh empirical vs transition-matrix power, TV", imh_kernel_check(replicas=replicas, seed=seed), 0.01),
        _le("mala empirical vs quadrature kernel, TV", mala_kernel_check(replicas=replicas, seed=seed), 0.01),
    ]


SUITES = {"kl": kl_suite, "gradient": gradient_suite, "kernel": kernel_suite}
