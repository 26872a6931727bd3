import numpy as np
import pytest

from proximh.errors import DimensionError, ParameterError, ShiftSingularityError, SolverError
from proximh.helmholtz import (
    GMRESSettings,
    HelmholtzGrid,
    HelmholtzProblem,
    HelmholtzSourceModel,
    Source,
    assemble_helmholtz,
    born_matrices,
    born_operator_apply,
    dct_precondition,
    default_sources,
    gmres_solve,
    helmholtz_matvec,
    misfit_gradient,
    neg_laplacian,
    nonlinear_forward,
    prolongation,
)

TIGHT = GMRESSettings(tol=1e-12, restart=80, max_iter=3000)


def _problem(n=16, coarse=8, param=4, k=2.0 * np.pi, method="gmres", sources=2):
    return HelmholtzProblem(HelmholtzGrid(n, k), HelmholtzGrid(coarse, k), param, default_sources(sources), 20, TIGHT, method=method)


def test_grid_validation():
    with pytest.raises(ParameterError):
        HelmholtzGrid(2)
    with pytest.raises(ParameterError):
        HelmholtzGrid(8, 0.0)
    g = HelmholtzGrid(10)
    assert g.h * g.n == pytest.approx(1.0, abs=1e-14)


def test_matrix_symmetric_and_matches_matvec(rng):
    g = HelmholtzGrid(9, 3.0)
    med = 1 + 0.3 * rng.random(g.size)
    m = assemble_helmholtz(g, med)
    assert abs(m - m.T).max() == 0.0
    u = rng.standard_normal(g.size)
    assert np.allclose(m @ u, helmholtz_matvec(g, med, u))


def test_constant_field_in_laplacian_kernel():
    g = HelmholtzGrid(7)
    assert np.allclose(neg_laplacian(g, np.ones(g.size)), 0.0)


def test_cosine_eigenfunction_second_order():
    errs = []
    for n in (16, 32, 64):
        g = HelmholtzGrid(n)
        xx, yy = g.mesh()
        u = (np.cos(np.pi * xx) * np.cos(2 * np.pi * yy)).ravel()
        lam = 5 * np.pi**2
        errs.append(np.max(np.abs(neg_laplacian(g, u) - lam * u)))
    assert errs[0] / errs[1] == pytest.approx(4.0, rel=0.05)
    assert errs[1] / errs[2] == pytest.approx(4.0, rel=0.05)


def test_dct_inverts_constant_operator(rng):
    g = HelmholtzGrid(12, 4.0)
    v = rng.standard_normal(g.size)
    x_bar = 0.25
    mv = neg_laplacian(g, v) + g.k_wave**2 * (1 + x_bar) * v
    assert np.allclose(dct_precondition(g, x_bar, mv), v, atol=1e-12)
    # the constant mode is divided by k^2 (1 + x_bar)
    out = dct_precondition(g, 0.0, np.ones(g.size))
    assert np.allclose(out, 1 / 16.0)
    with pytest.raises(ShiftSingularityError):
        dct_precondition(g, -1.0, v)


def test_gmres_against_dense(rng):
    g = HelmholtzGrid(10, 2.5)
    med = 1 + 0.2 * rng.random(g.size)
    b = rng.standard_normal(g.size)
    exact = np.linalg.solve(assemble_helmholtz(g, med).toarray(), b)
    u, iters, hist = gmres_solve(lambda v: helmholtz_matvec(g, med, v), None, b, TIGHT)
    assert np.allclose(u, exact, rtol=1e-8, atol=1e-10)
    assert hist[0] == 1.0 and hist[-1] <= TIGHT.tol and len(hist) == iters + 1


def test_gmres_identity_and_own_preconditioner(rng):
    b = rng.standard_normal(20)
    u, iters, _ = gmres_solve(lambda v: v, None, b)
    assert iters == 1 and np.allclose(u, b)
    g = HelmholtzGrid(16, 3.0)
    op = lambda v: neg_laplacian(g, v) + g.k_wave**2 * 1.3 * v  # noqa: E731
    b = rng.standard_normal(g.size)
    _, iters, _ = gmres_solve(op, lambda v: dct_precondition(g, 0.3, v), b)
    assert iters <= 3


def test_gmres_history_monotone_within_cycle(rng):
    g = HelmholtzGrid(16, 2.0 * np.pi)
    med = 1 + 0.3 * rng.random(g.size)
    b = rng.standard_normal(g.size)
    _, _, hist = gmres_solve(lambda v: helmholtz_matvec(g, med, v), None, b, GMRESSettings(1e-8, 500, 500))
    assert np.all(np.diff(hist) <= 1e-12)


def test_gmres_zero_rhs_and_failure(rng):
    u, iters, _ = gmres_solve(lambda v: v, None, np.zeros(5))
    assert iters == 0 and not u.any()
    g = HelmholtzGrid(16, 6.0)
    med = np.ones(g.size)
    with pytest.raises(SolverError) as info:
        gmres_solve(lambda v: helmholtz_matvec(g, med, v), None, rng.standard_normal(g.size), GMRESSettings(1e-12, 5, 10))
    assert info.value.history is not None


def test_prolongation(rng):
    p = prolongation(4, 12)
    assert p.shape == (144, 16)
    assert np.allclose(np.asarray(p.sum(axis=1)).ravel(), 1.0)
    # exact on affine functions
    c4, c12 = HelmholtzGrid(4).mesh(), HelmholtzGrid(12).mesh()
    f = lambda xy: (0.3 + 2 * xy[0] - xy[1]).ravel()  # noqa: E731
    assert np.allclose(p @ f(c4), f(c12))
    assert np.array_equal(prolongation(5, 5).toarray(), np.eye(25))
    with pytest.raises(DimensionError):
        prolongation(8, 4)


def test_problem_validation():
    g8, g16 = HelmholtzGrid(8, 2.0), HelmholtzGrid(16, 2.0)
    with pytest.raises(DimensionError):
        HelmholtzProblem(g8, g16, 4, default_sources(1), 5)
    with pytest.raises(ParameterError):
        HelmholtzProblem(g16, HelmholtzGrid(8, 3.0), 4, default_sources(1), 5)
    with pytest.raises(ParameterError):
        HelmholtzProblem(g16, g8, 4, default_sources(1), 5, method="lu")


def test_direct_equals_gmres(rng):
    x = 1 + 0.2 * rng.random(16)
    a, b = _problem(), _problem(method="direct")
    for lvl in ("fine", "coarse"):
        ya, ua = nonlinear_forward(a, x, 1, lvl)
        yb, ub = nonlinear_forward(b, x, 1, lvl)
        assert np.allclose(ua, ub, rtol=1e-9, atol=1e-12)


def test_zero_source_gives_zero_field():
    g = HelmholtzGrid(8, 2.0)
    prob = HelmholtzProblem(g, g, 4, [Source((0.5, 0.5), amplitude=0.0)], 5)
    y, u = nonlinear_forward(prob, np.ones(16), 0)
    assert not u.any() and not y.any()


@pytest.mark.parametrize("level", ["fine", "coarse"])
def test_jvp_vjp_adjoint_and_fd(rng, level):
    prob = _problem(method="direct")
    model = HelmholtzSourceModel(prob, 0, level)
    x = 1 + 0.2 * rng.random(prob.d_x)
    v, w = rng.standard_normal(prob.d_x), rng.standard_normal(prob.d_y)
    jv, jtw = model.jvp(x, v), model.vjp(x, w)
    assert w @ jv == pytest.approx(jtw @ v, rel=1e-9)
    t = 1e-6
    fd = (model.apply(x + t * v) - model.apply(x - t * v)) / (2 * t)
    assert np.allclose(jv, fd, rtol=1e-5, atol=1e-8 * np.abs(jv).max())


def test_misfit_gradient_fd(rng):
    prob = _problem()
    x = 1 + 0.2 * rng.random(prob.d_x)
    y_obs = [nonlinear_forward(prob, 1 + 0.2 * rng.random(prob.d_x), i)[0] for i in range(prob.n_sources)]
    phi, grad = misfit_gradient(prob, x, y_obs)
    for j in range(prob.d_x):
        e = np.zeros(prob.d_x)
        e[j] = 1e-5
        fd = (misfit_gradient(prob, x + e, y_obs)[0] - misfit_gradient(prob, x - e, y_obs)[0]) / 2e-5
        assert fd == pytest.approx(grad[j], rel=1e-5, abs=1e-8 * np.abs(grad).max())


def test_born_second_order_remainder(rng):
    prob = _problem()
    x = np.ones(prob.d_x)
    dx = rng.standard_normal(prob.d_x)
    u0 = nonlinear_forward(prob, x, 0)[1]
    born = born_operator_apply(prob, x, dx, 0, u0=u0)
    ratios = [np.linalg.norm(nonlinear_forward(prob, x + t * dx, 0)[1] - u0 - t * born) / t**2 for t in (1e-2, 5e-3, 2.5e-3)]
    assert max(ratios) / min(ratios) <= 1.5


def test_born_matrices_shapes_and_linearity(rng):
    prob = _problem(method="direct")
    a, a_tilde = born_matrices(prob, np.ones(prob.d_x))
    assert a.shape == a_tilde.shape == (prob.d_y, prob.d_x)
    dx = rng.standard_normal(prob.d_x)
    assert np.allclose(a @ dx, prob.observe(born_operator_apply(prob, np.ones(prob.d_x), dx), "fine"))
    assert 0 < np.linalg.norm(a - a_tilde) < np.linalg.norm(a)
