"""2-D Helmholtz forward models on ``[0, 1]^2`` with homogeneous Neumann boundaries.

Grids are cell-centred: ``n`` cells per side, spacing ``h = 1/n``, nodes at
``(i + 1/2) h``. The Neumann closure mirrors across the cell face
(``u_{-1} = u_0``), so the 5-point Laplacian is symmetric and diagonalized by
the type-II DCT with eigenvalues ``(2 - 2 cos(pi m / n)) / h^2`` per axis.
Fields are flattened row-major with axis 0 along ``x``.

The operator is ``L(m) u = -Lap u - k^2 m u`` for a medium ``m`` on the solve
grid. Media enter from a coarser parameter grid through bilinear prolongation.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.fft
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import DimensionError, ParameterError, ShiftSingularityError, SolverError

SHIFT_FLOOR = 1e-12


@dataclass(frozen=True)
class HelmholtzGrid:
    n: int
    k_wave: float = 1.0

    def __post_init__(self):
        if int(self.n) < 3:
            raise ParameterError("grid needs n >= 3")
        if not self.k_wave > 0:
            raise ParameterError("wavenumber must be positive")
        object.__setattr__(self, "n", int(self.n))

    @property
    def h(self):
        return 1.0 / self.n

    @property
    def size(self):
        return self.n * self.n

    def nodes(self):
        return (np.arange(self.n) + 0.5) * self.h

    def mesh(self):
        t = self.nodes()
        return np.meshgrid(t, t, indexing="ij")

    def laplacian_eigenvalues(self):
        """Eigenvalues of ``-Lap_h`` on the DCT-II modes, shape ``(n, n)``."""
        m = np.arange(self.n)
        lam = (2.0 - 2.0 * np.cos(np.pi * m / self.n)) / self.h**2
        return lam[:, None] + lam[None, :]

    def descriptor(self):
        return {"n": self.n, "h": self.h, "k_wave": self.k_wave, "layout": "cell-centred, row-major, axis 0 = x"}


def _check_len(grid, v, name):
    v = np.asarray(v, dtype=np.float64)
    if v.shape != (grid.size,):
        raise DimensionError(f"{name} has shape {v.shape}, expected ({grid.size},)")
    return v


def neg_laplacian(grid: HelmholtzGrid, u):
    """``-Lap_h u`` with the mirrored Neumann closure."""
    n = grid.n
    w = np.pad(u.reshape(n, n), 1, mode="edge")
    c = w[1:-1, 1:-1]
    out = 4.0 * c - w[:-2, 1:-1] - w[2:, 1:-1] - w[1:-1, :-2] - w[1:-1, 2:]
    return out.ravel() / grid.h**2


def helmholtz_matvec(grid: HelmholtzGrid, x_medium, u):
    """``(-Lap_h - k^2 diag(x_medium)) u``, matrix-free."""
    u = _check_len(grid, u, "u")
    x_medium = _check_len(grid, x_medium, "x_medium")
    return neg_laplacian(grid, u) - grid.k_wave**2 * x_medium * u


def assemble_helmholtz(grid: HelmholtzGrid, x_medium):
    """Sparse matrix of ``helmholtz_matvec`` (used by dense-oracle tests)."""
    n = grid.n
    main = np.full(n, 2.0)
    main[0] = main[-1] = 1.0
    d1 = sp.diags([-np.ones(n - 1), main, -np.ones(n - 1)], [-1, 0, 1]) / grid.h**2
    eye = sp.identity(n)
    lap = sp.kron(d1, eye) + sp.kron(eye, d1)
    return (lap - grid.k_wave**2 * sp.diags(_check_len(grid, x_medium, "x_medium"))).tocsr()


def dct_precondition(grid: HelmholtzGrid, x_bar, v):
    """Apply ``M^{-1} v`` with ``M = -Lap_h + k^2 (1 + x_bar)``."""
    v = _check_len(grid, v, "v")
    n = grid.n
    denom = grid.laplacian_eigenvalues() + grid.k_wave**2 * (1.0 + float(x_bar))
    small = np.abs(denom) <= SHIFT_FLOOR * max(1.0, np.abs(denom).max())
    if np.any(small):
        mode = tuple(int(i) for i in np.argwhere(small)[0])
        raise ShiftSingularityError(f"shifted operator is singular at DCT mode {mode}")
    coef = scipy.fft.dctn(v.reshape(n, n), type=2, norm="ortho")
    return scipy.fft.idctn(coef / denom, type=2, norm="ortho").ravel()


@dataclass(frozen=True)
class GMRESSettings:
    tol: float = 1e-10
    restart: int = 50
    max_iter: int = 2000

    def __post_init__(self):
        if not self.tol > 0 or self.restart < 1 or self.max_iter < 1:
            raise ParameterError("GMRES settings must be positive")


def gmres_solve(apply_op, precond, b, settings: GMRESSettings = GMRESSettings(), x0=None):
    """Restarted, left-preconditioned GMRES.

    Returns ``(u, iterations, residual_history)`` where the history holds the
    relative preconditioned residual ``|M^{-1}(b - A u)| / |M^{-1} b|`` after
    every inner iteration (entry 0 is the initial residual). Raises
    SolverError carrying the history when ``max_iter`` is exhausted.
    """
    b = np.asarray(b, dtype=np.float64)
    pre = (lambda v: v) if precond is None else precond
    x = np.zeros_like(b) if x0 is None else np.asarray(x0, dtype=np.float64).copy()
    pb = pre(b)
    bnorm = np.linalg.norm(pb)
    if bnorm == 0.0:
        return np.zeros_like(b), 0, np.array([0.0])
    r = pre(b - apply_op(x)) if x0 is not None else pb
    beta = np.linalg.norm(r)
    history = [beta / bnorm]
    if history[0] <= settings.tol:
        return x, 0, np.array(history)
    total = 0
    m = settings.restart
    while total < settings.max_iter:
        v = np.zeros((m + 1, b.size))
        hmat = np.zeros((m + 1, m))
        cs, sn = np.zeros(m), np.zeros(m)
        g = np.zeros(m + 1)
        g[0] = beta
        v[0] = r / beta
        j_done = 0
        for j in range(m):
            w = pre(apply_op(v[j]))
            for i in range(j + 1):
                hmat[i, j] = w @ v[i]
                w = w - hmat[i, j] * v[i]
            hmat[j + 1, j] = np.linalg.norm(w)
            if hmat[j + 1, j] > 0:
                v[j + 1] = w / hmat[j + 1, j]
            for i in range(j):
                t = cs[i] * hmat[i, j] + sn[i] * hmat[i + 1, j]
                hmat[i + 1, j] = -sn[i] * hmat[i, j] + cs[i] * hmat[i + 1, j]
                hmat[i, j] = t
            rho = np.hypot(hmat[j, j], hmat[j + 1, j])
            cs[j], sn[j] = hmat[j, j] / rho, hmat[j + 1, j] / rho
            hmat[j, j] = rho
            hmat[j + 1, j] = 0.0
            g[j + 1] = -sn[j] * g[j]
            g[j] = cs[j] * g[j]
            total += 1
            j_done = j + 1
            history.append(abs(g[j + 1]) / bnorm)
            if history[-1] <= settings.tol or total >= settings.max_iter:
                break
        y = np.linalg.solve(np.triu(hmat[:j_done, :j_done]), g[:j_done])
        x = x + y @ v[:j_done]
        r = pre(b - apply_op(x))
        beta = np.linalg.norm(r)
        history[-1] = beta / bnorm
        if history[-1] <= settings.tol:
            return x, total, np.array(history)
    raise SolverError(
        f"GMRES did not reach tol {settings.tol} in {settings.max_iter} iterations",
        residual=history[-1],
        history=np.array(history),
    )


def _interp_1d(n_from, n_to):
    """Linear interpolation between cell-centred 1-D grids, extrapolating at the ends."""
    src = (np.arange(n_from) + 0.5) / n_from
    dst = (np.arange(n_to) + 0.5) / n_to
    if n_from == n_to:
        return sp.identity(n_to, format="csr")
    if n_from == 1:
        return sp.csr_matrix(np.ones((n_to, 1)))
    pos = np.clip(np.searchsorted(src, dst) - 1, 0, n_from - 2)
    t = (dst - src[pos]) / (src[pos + 1] - src[pos])
    rows = np.repeat(np.arange(n_to), 2)
    cols = np.stack([pos, pos + 1], axis=1).ravel()
    vals = np.stack([1.0 - t, t], axis=1).ravel()
    return sp.csr_matrix((vals, (rows, cols)), shape=(n_to, n_from))


def prolongation(from_n, to_n):
    """Sparse bilinear prolongation ``(to_n^2 x from_n^2)``; rows sum to one."""
    from_n = from_n.n if isinstance(from_n, HelmholtzGrid) else int(from_n)
    to_n = to_n.n if isinstance(to_n, HelmholtzGrid) else int(to_n)
    if from_n > to_n:
        raise DimensionError(f"prolongation needs from.n <= to.n, got {from_n} > {to_n}")
    p1 = _interp_1d(from_n, to_n)
    return sp.kron(p1, p1, format="csr")


@dataclass(frozen=True)
class Source:
    """Gaussian bump ``amplitude * exp(-|r - center|^2 / (2 width^2))``."""

    center: tuple
    width: float = 0.05
    amplitude: float = 100.0

    def on(self, grid: HelmholtzGrid):
        xx, yy = grid.mesh()
        cx, cy = self.center
        r2 = (xx - cx) ** 2 + (yy - cy) ** 2
        return (self.amplitude * np.exp(-0.5 * r2 / self.width**2)).ravel()


def default_sources(count=4, width=0.05, offset=0.3):
    """Bumps placed ``offset`` in from each corner, cycling the corners."""
    corners = [(offset, offset), (1 - offset, offset), (offset, 1 - offset), (1 - offset, 1 - offset)]
    return [Source(corners[i % 4], width) for i in range(int(count))]


def observation_selection(grid: HelmholtzGrid, d_y):
    """Sparse ``d_y x n^2`` selection of uniformly spaced nodes (row-major order)."""
    d_y = int(d_y)
    if not 0 < d_y <= grid.size:
        raise ParameterError("need 0 < d_y <= number of grid nodes")
    idx = np.unique(np.round(np.linspace(0, grid.size - 1, d_y)).astype(np.int64))
    if idx.size != d_y:
        raise ParameterError("could not place distinct observation nodes")
    return sp.csr_matrix((np.ones(d_y), (np.arange(d_y), idx)), shape=(d_y, grid.size))


@dataclass
class HelmholtzProblem:
    """Fine/coarse solve grids, a parameter grid, sources, and an observation map on the fine grid."""

    fine: HelmholtzGrid
    coarse: HelmholtzGrid
    param_n: int
    sources: list
    d_y: int
    solver: GMRESSettings = field(default_factory=GMRESSettings)
    precondition: bool = True
    method: str = "gmres"

    def __post_init__(self):
        if self.coarse.n > self.fine.n:
            raise DimensionError("coarse grid must not be finer than the fine grid")
        if self.param_n > self.coarse.n:
            raise DimensionError("parameter grid must not be finer than the coarse grid")
        if self.coarse.k_wave != self.fine.k_wave:
            raise ParameterError("fine and coarse grids must share the wavenumber")
        self.o = observation_selection(self.fine, self.d_y)
        self.p = prolongation(self.param_n, self.fine.n)
        self.p_x = prolongation(self.param_n, self.coarse.n)
        self.p_u = prolongation(self.coarse.n, self.fine.n)
        if self.method not in ("gmres", "direct"):
            raise ParameterError(f"method must be 'gmres' or 'direct', got {self.method!r}")
        self._f = {lvl: [s.on(self.grid(lvl)) for s in self.sources] for lvl in ("fine", "coarse")}
        self.history = []
        self._lu = {}

    @property
    def d_x(self):
        return self.param_n**2

    @property
    def n_sources(self):
        return len(self.sources)

    def grid(self, level):
        if level == "fine":
            return self.fine
        if level == "coarse":
            return self.coarse
        raise ParameterError(f"unknown level {level!r}")

    def medium(self, x, level):
        x = np.asarray(x, dtype=np.float64)
        if x.shape != (self.d_x,):
            raise DimensionError(f"medium has shape {x.shape}, expected ({self.d_x},)")
        return (self.p if level == "fine" else self.p_x) @ x

    def source(self, i, level):
        return self._f[level][i]

    def solve(self, level, medium, rhs, record=True):
        """``L(medium)^{-1} rhs``; the operator is symmetric, so this also serves adjoints.

        ``method="direct"`` swaps GMRES for a sparse LU that is reused for
        every solve with the same medium (the last few media are kept).
        """
        grid = self.grid(level)
        if self.method == "direct":
            key = (level, np.asarray(medium).tobytes())
            lu = self._lu.pop(key, None)
            if lu is None:
                lu = spla.splu(assemble_helmholtz(grid, medium).tocsc())
            self._lu[key] = lu
            while len(self._lu) > 8:
                self._lu.pop(next(iter(self._lu)))
            return lu.solve(np.asarray(rhs, dtype=np.float64))
        pre = None
        if self.precondition:
            x_bar = float(np.mean(medium))
            pre = lambda v: dct_precondition(grid, x_bar, v)  # noqa: E731
        u, iters, hist = gmres_solve(lambda v: helmholtz_matvec(grid, medium, v), pre, rhs, self.solver)
        if record:
            self.history.append((level, iters, hist))
        return u

    def observe(self, u, level):
        return self.o @ (u if level == "fine" else self.p_u @ u)

    def observe_adjoint(self, w, level):
        z = self.o.T @ w
        return z if level == "fine" else self.p_u.T @ z

    def prolong_adjoint(self, g, level):
        return (self.p if level == "fine" else self.p_x).T @ g


def nonlinear_forward(prob: HelmholtzProblem, x, source_index, level="fine"):
    """``(y_i, u_i)`` with ``u_i = L(P x)^{-1} f_i`` on the chosen level."""
    med = prob.medium(x, level)
    f = prob.source(source_index, level)
    if not np.any(f):
        u = np.zeros_like(f)
    else:
        u = prob.solve(level, med, f)
    return prob.observe(u, level), u


class HelmholtzSourceModel:
    """Forward-model protocol for ``x -> A_i(x)`` (or its coarse analogue) with a one-point cache."""

    def __init__(self, prob: HelmholtzProblem, source_index, level="fine"):
        self.prob = prob
        self.i = int(source_index)
        self.level = level
        self._key = None
        self._state = None

    @property
    def d_in(self):
        return self.prob.d_x

    def _at(self, x):
        x = np.asarray(x, dtype=np.float64)
        key = x.tobytes()
        if key != self._key:
            y, u = nonlinear_forward(self.prob, x, self.i, self.level)
            self._key, self._state = key, (y, u, self.prob.medium(x, self.level))
        return self._state

    def apply(self, x):
        return self._at(x)[0].copy()

    def wavefield(self, x):
        return self._at(x)[1].copy()

    def jvp(self, x, v):
        _, u, med = self._at(x)
        k2 = self.prob.fine.k_wave**2
        dm = self.prob.medium(np.asarray(v, dtype=np.float64), self.level)
        rhs = k2 * dm * u
        if not np.any(rhs):
            return np.zeros(self.prob.d_y)
        return self.prob.observe(self.prob.solve(self.level, med, rhs), self.level)

    def vjp(self, x, w):
        _, u, med = self._at(x)
        k2 = self.prob.fine.k_wave**2
        rhs = self.prob.observe_adjoint(np.asarray(w, dtype=np.float64), self.level)
        if not np.any(rhs):
            return np.zeros(self.prob.d_x)
        v = self.prob.solve(self.level, med, rhs)
        return self.prob.prolong_adjoint(k2 * u * v, self.level)


def jacobian_products(prob: HelmholtzProblem, x, source_index, level="fine"):
    """Closures ``(jv, jtw)`` for ``J(x) v`` and ``J(x)^T w`` of source ``source_index``."""
    model = HelmholtzSourceModel(prob, source_index, level)
    model._at(x)
    return (lambda v: model.jvp(x, v)), (lambda w: model.vjp(x, w))


def misfit_gradient(prob: HelmholtzProblem, x, y_obs, level="fine"):
    """Gradient of ``Phi(x) = 1/2 sum_i |O u_i - y_i|^2``.

    Per source: ``r = O u - y``, adjoint solve ``L v = O^T r`` and
    ``grad = k^2 P^T (u * v)``. Returns ``(Phi, grad)``; callers scale by ``1/sigma^2``.
    """
    phi = 0.0
    grad = np.zeros(prob.d_x)
    for i in range(prob.n_sources):
        model = HelmholtzSourceModel(prob, i, level)
        r = model.apply(x) - y_obs[i]
        phi += 0.5 * float(r @ r)
        grad += model.vjp(x, r)
    return phi, grad


def born_operator_apply(prob: HelmholtzProblem, x0, direction, source_index=0, level="fine", u0=None):
    """Scattered field ``L(P x0)^{-1}(k^2 (P dx) * u0)`` on the solve grid of ``level``."""
    med = prob.medium(x0, level)
    if u0 is None:
        u0 = nonlinear_forward(prob, x0, source_index, level)[1]
    rhs = prob.fine.k_wave**2 * prob.medium(direction, level) * u0
    if not np.any(rhs):
        return np.zeros_like(rhs)
    return prob.solve(level, med, rhs)


def born_matrices(prob: HelmholtzProblem, x0, source_index=0):
    """Dense ``A = O F P`` and ``A_tilde = O P_u F_tilde P_x`` from Born solves on basis vectors."""
    mats = []
    for level in ("fine", "coarse"):
        u0 = nonlinear_forward(prob, x0, source_index, level)[1]
        cols = []
        for j in range(prob.d_x):
            e = np.zeros(prob.d_x)
            e[j] = 1.0
            cols.append(prob.observe(born_operator_apply(prob, x0, e, source_index, level, u0), level))
        mats.append(np.stack(cols, axis=1))
    return mats[0], mats[1]
