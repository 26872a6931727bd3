"""Independence Metropolis-Hastings, proposal sources, and a MALA baseline.

A proposal source hands out :class:`Draws`: the state ``x`` that enters the
chain, the approximate-posterior draw ``x_tilde`` it came from (equal to ``x``
for uncorrected proposals), and ``log_g``, the proposal log-density reported
by the source. Log-weights ``log pi(x) - log g(x)`` only need to be correct up
to a constant shared by all draws.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from . import io
from .errors import ParameterError, StateError
from .posteriors import GaussianPosteriorForm, LinearInverseProblem
from .proximal import gn_log_jacobian_det


@dataclass(frozen=True)
class Draws:
    x: np.ndarray
    x_tilde: np.ndarray
    log_g: np.ndarray
    logdet: Optional[np.ndarray] = None

    def __len__(self):
        return self.x.shape[0]

    def take(self, idx):
        return Draws(
            self.x[idx],
            self.x_tilde[idx],
            self.log_g[idx],
            None if self.logdet is None else self.logdet[idx],
        )


class GaussianProposal:
    """Exact i.i.d. draws from a Gaussian form, optionally pushed through a linear map.

    ``mapping`` is a ``d x d`` matrix (``K`` for the proximal proposal,
    ``F^{-1} F_tilde`` for the latent one).
    """

    kind = "gaussian_direct"

    def __init__(self, form: GaussianPosteriorForm, y, mapping=None):
        self.form = form
        self.y = np.asarray(y, dtype=np.float64)
        self.mapping = None if mapping is None else np.asarray(mapping, dtype=np.float64)
        self._root = form.sqrt_factor()
        self._mean = form.mean(self.y)

    def draw(self, n, rng):
        xi = rng.standard_normal((int(n), self._mean.shape[0]))
        xt = self._mean + xi @ self._root.T
        x = xt if self.mapping is None else xt @ self.mapping.T
        return Draws(x, xt, self.form.logpdf(xt, self.y)), None

    def metadata(self):
        return {"kind": self.kind, "variant": self.form.variant, "mapped": self.mapping is not None}


class PoolProposal:
    """Draws with replacement from a fixed set of atoms.

    Each atom carries ``x_tilde``, its stored ``log_g`` and, once corrected,
    the paired state ``x``. ``probs`` defaults to uniform.
    """

    kind = "pool"

    def __init__(self, atoms: Draws, probs=None, provenance=None):
        self.atoms = atoms
        n = len(atoms)
        if n < 1:
            raise ParameterError("pool must hold at least one atom")
        if probs is None:
            self.probs = None
        else:
            p = np.asarray(probs, dtype=np.float64)
            if p.shape != (n,) or np.any(p < 0) or abs(p.sum() - 1.0) > 1e-12:
                raise ParameterError("probs must be a distribution over the atoms")
            self.probs = p
        self.provenance = dict(provenance or {})

    def draw(self, n, rng):
        m = len(self.atoms)
        if self.probs is None:
            idx = rng.integers(0, m, int(n))
        else:
            idx = rng.choice(m, size=int(n), p=self.probs)
        return self.atoms.take(idx), idx

    def corrected(self, correct: Callable, logdet: Optional[Callable] = None, label="corrected"):
        """New pool whose atoms are mapped by ``correct`` (one call per atom)."""
        xt = self.atoms.x_tilde
        x = np.stack([correct(v) for v in xt])
        ld = None if logdet is None else np.array([logdet(v) for v in xt])
        prov = dict(self.provenance, correction=label)
        return PoolProposal(replace(self.atoms, x=x, logdet=ld), self.probs, prov)

    def mapped(self, matrix, label="linear"):
        x = self.atoms.x_tilde @ np.asarray(matrix).T
        return PoolProposal(replace(self.atoms, x=x), self.probs, dict(self.provenance, correction=label))

    def metadata(self):
        return {"kind": self.kind, "pool_size": len(self.atoms), **self.provenance}


@dataclass(frozen=True)
class ChainRecord:
    """Output of one or more chains.

    ``states`` is ``(steps // thin + 1, d)`` for a single chain and
    ``(chains, steps // thin + 1, d)`` for a batch; ``accepted`` and
    ``log_accept_probs`` cover every step.
    """

    states: np.ndarray
    accepted: np.ndarray
    log_accept_probs: np.ndarray
    acceptance_rate: float
    seed: int
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        rate = float(np.mean(self.accepted)) if self.accepted.size else 0.0
        if abs(rate - self.acceptance_rate) > 1e-12:
            raise StateError("acceptance_rate disagrees with accepted flags")

    def write(self, stem):
        """``<stem>.csv`` (step, accepted, log_accept_prob, x...) and ``<stem>.json``."""
        stem = Path(stem)
        states = self.states if self.states.ndim == 2 else self.states[0]
        acc = self.accepted if self.accepted.ndim == 1 else self.accepted[0]
        lap = self.log_accept_probs if self.log_accept_probs.ndim == 1 else self.log_accept_probs[0]
        thin = int(self.metadata.get("thin", 1))
        d = states.shape[1]
        header = ["step", "accepted", "log_accept_prob"] + [f"x{i}" for i in range(d)]
        rows = []
        for r, s in enumerate(states):
            t = r * thin
            if t == 0:
                rows.append([0, 1, 0.0, *s])
            else:
                rows.append([t, int(acc[t - 1]), float(lap[t - 1]), *s])
        io.write_csv(stem.with_suffix(".csv"), header, rows)
        io.write_json(
            stem.with_suffix(".json"),
            {"seed": self.seed, "acceptance_rate": self.acceptance_rate, **self.metadata},
        )


def imh_run(proposal, log_weight=None, steps=1000, seed=0, target_logpdf=None, chains=None):
    """Independence Metropolis-Hastings.

    Either ``log_weight(draws) -> array`` is given, or ``target_logpdf(x)``
    is combined with the source's ``log_g``. Chains start from one proposal
    draw and accept ``x'`` with probability ``min(1, exp(w(x') - w(x_t)))``.
    For pool sources the weight is evaluated once per atom.
    """
    steps = int(steps)
    if steps < 1:
        raise ParameterError("steps must be >= 1")
    if log_weight is None:
        if target_logpdf is None:
            raise ParameterError("need log_weight or target_logpdf")

        def log_weight(dr):
            return target_logpdf(dr.x) - dr.log_g

    batch = chains is not None
    c = int(chains) if batch else 1
    rng = np.random.default_rng(seed)
    draws, idx = proposal.draw(c * (steps + 1), rng)
    if idx is not None:
        w_atoms = np.asarray(log_weight(proposal.atoms), dtype=np.float64).reshape(len(proposal.atoms))
        w = w_atoms[idx]
    else:
        w = np.asarray(log_weight(draws), dtype=np.float64).reshape(len(draws))
    bad = np.flatnonzero(~np.isfinite(w))
    if bad.size:
        raise StateError(f"non-finite log-weight at draw {int(bad[0])}: x = {draws.x[bad[0]]}")
    w = w.reshape(c, steps + 1)
    order = np.arange(c * (steps + 1)).reshape(c, steps + 1)
    log_u = np.log(rng.random((c, steps)))

    pos = np.zeros((c, steps + 1), dtype=np.int64)
    accepted = np.zeros((c, steps), dtype=bool)
    log_a = np.zeros((c, steps))
    cur = order[:, 0].copy()
    cur_w = w[:, 0].copy()
    pos[:, 0] = cur
    for t in range(steps):
        la = np.minimum(0.0, w[:, t + 1] - cur_w)
        acc = log_u[:, t] < la
        cur = np.where(acc, order[:, t + 1], cur)
        cur_w = np.where(acc, w[:, t + 1], cur_w)
        pos[:, t + 1] = cur
        accepted[:, t] = acc
        log_a[:, t] = la
    states = draws.x[pos]
    meta = {"sampler": "imh", "steps": steps, "proposal": proposal.metadata()}
    if not batch:
        states, accepted, log_a = states[0], accepted[0], log_a[0]
    return ChainRecord(states, accepted, log_a, float(np.mean(accepted)), int(seed), meta)


def log_weight_linear(kind, prob: LinearInverseProblem, k, draws: Draws):
    """``log pi(x) - log g(x)`` for the approx, latent and proximal proposals."""
    x, xt = draws.x, draws.x_tilde
    noise, prior = prob.log_noise, prob.prior.logpdf_grad
    y = prob.y
    if kind == "approx":
        return noise(y - x @ prob.a.T) - noise(y - x @ prob.a_tilde.T)
    if kind == "latent":
        z = x @ prob.latent_matrix().T
        return prior(x)[0] - prior(z)[0]
    if kind == "proximal":
        if xt is None:
            raise ParameterError("proximal weights need the paired x_tilde")
        return noise(y - x @ prob.a.T) - noise(y - xt @ prob.a_tilde.T) + prior(x)[0] - prior(xt)[0]
    raise ParameterError(f"unknown proposal kind {kind!r}")


@dataclass(frozen=True)
class NonlinearProblem:
    """``y = A(x) + e`` with an approximate model ``A_tilde``; models follow the forward protocol."""

    forward: object
    forward_tilde: object
    sigma: float
    prior: object
    y: np.ndarray

    def log_noise(self, resid):
        return -0.5 * np.sum(resid * resid, axis=-1) / self.sigma**2

    def log_post(self, x):
        return self.log_noise(self.y - self.forward.apply(x)) + self.prior.logpdf_grad(x)[0]

    def log_post_approx(self, x):
        return self.log_noise(self.y - self.forward_tilde.apply(x)) + self.prior.logpdf_grad(x)[0]

    def grad_log_post(self, x, approx=False):
        model = self.forward_tilde if approx else self.forward
        pred = model.apply(x)
        lp, gp = self.prior.logpdf_grad(x)
        r = self.y - pred
        return self.log_noise(r) + lp, model.vjp(x, r) / self.sigma**2 + gp


def log_weight_nonlinear(prob: NonlinearProblem, draws: Draws, include_jacobian=False, gn=None, mode="exact_small"):
    """``log pi(x) - log pi_a(x_tilde)`` per draw, plus ``log|det J_GN(x_tilde)|`` if asked."""
    out = np.empty(len(draws))
    for i in range(len(draws)):
        out[i] = prob.log_post(draws.x[i]) - prob.log_post_approx(draws.x_tilde[i])
    if include_jacobian:
        if draws.logdet is not None:
            ld = draws.logdet
        elif gn is not None:
            ld = np.array([gn_log_jacobian_det(gn, v, mode) for v in draws.x_tilde])
        else:
            raise ParameterError("Jacobian term requested but no log-dets or GN handle")
        out = out + ld
    return out


def _precond_factor(precond, d):
    if precond is None:
        return None, None
    c = np.asarray(precond, dtype=np.float64)
    if c.shape != (d, d):
        raise ParameterError("preconditioner must be d x d")
    lower = np.linalg.cholesky(0.5 * (c + c.T))
    return c, lower


def mala_run(logpdf_grad, step_size, steps, seed, init, precond=None, thin=1):
    """Metropolis-adjusted Langevin, optionally preconditioned by ``C``.

    Proposal ``x' = x + (h^2/2) C grad log pi(x) + h L xi`` with ``C = L L^T``.
    ``init`` of shape ``(d,)`` runs one chain; ``(c, d)`` runs ``c`` chains
    in lockstep. ``logpdf_grad`` maps a ``(c, d)`` batch to ``((c,), (c, d))``.
    """
    init = np.asarray(init, dtype=np.float64)
    batch = init.ndim == 2
    x = np.atleast_2d(init).copy()
    c, d = x.shape
    h = float(step_size)
    if not h > 0:
        raise ParameterError("step_size must be positive")
    steps, thin = int(steps), int(thin)
    if steps < 1 or thin < 1:
        raise ParameterError("steps and thin must be >= 1")
    cmat, lower = _precond_factor(precond, d)
    if cmat is None:
        prec_inv = None
    else:
        prec_inv = np.linalg.inv(cmat)
        prec_inv = 0.5 * (prec_inv + prec_inv.T)

    def drift(g):
        return g if cmat is None else g @ cmat.T

    def log_q(to, frm, g_frm):
        diff = to - frm - 0.5 * h * h * drift(g_frm)
        if prec_inv is None:
            quad = np.sum(diff * diff, axis=-1)
        else:
            quad = np.einsum("ni,ij,nj->n", diff, prec_inv, diff)
        return -0.5 * quad / (h * h)

    rng = np.random.default_rng(seed)
    lp, g = logpdf_grad(x)
    lp = np.asarray(lp, dtype=np.float64).reshape(c)
    if not np.all(np.isfinite(g)):
        raise StateError("non-finite gradient at the initial state")
    n_keep = steps // thin + 1
    states = np.empty((c, n_keep, d))
    states[:, 0] = x
    accepted = np.zeros((c, steps), dtype=bool)
    log_a = np.zeros((c, steps))
    for t in range(steps):
        xi = rng.standard_normal((c, d))
        noise = xi if lower is None else xi @ lower.T
        prop = x + 0.5 * h * h * drift(g) + h * noise
        lp_p, g_p = logpdf_grad(prop)
        lp_p = np.asarray(lp_p, dtype=np.float64).reshape(c)
        if not np.all(np.isfinite(g_p)):
            raise StateError(f"non-finite gradient at step {t}")
        la = lp_p - lp + log_q(x, prop, g_p) - log_q(prop, x, g)
        la = np.minimum(0.0, np.where(np.isfinite(la), la, -np.inf))
        acc = np.log(rng.random(c)) < la
        x = np.where(acc[:, None], prop, x)
        lp = np.where(acc, lp_p, lp)
        g = np.where(acc[:, None], g_p, g)
        accepted[:, t] = acc
        log_a[:, t] = la
        if (t + 1) % thin == 0:
            states[:, (t + 1) // thin] = x
    meta = {"sampler": "mala", "step_size": h, "thin": thin, "preconditioned": cmat is not None}
    if not batch:
        states, accepted, log_a = states[0], accepted[0], log_a[0]
    return ChainRecord(states, accepted, log_a, float(np.mean(accepted)), int(seed), meta)


def default_step_size(logpdf_grad, x, seed=0, precond=None, probes=4, eps=1e-4):
    """``h = 0.5 min(1, m^{-1/2}) d^{-1/6}`` with ``m`` a finite-difference curvature probe.

    With a preconditioner the curvature is probed along ``L v``.
    """
    x = np.asarray(x, dtype=np.float64).reshape(1, -1)
    d = x.shape[1]
    _, lower = _precond_factor(precond, d)
    rng = np.random.default_rng(seed)
    g0 = logpdf_grad(x)[1][0]
    curv = []
    for _ in range(int(probes)):
        v = rng.standard_normal(d)
        v /= np.linalg.norm(v)
        u = v if lower is None else lower @ v
        g1 = logpdf_grad(x + eps * u)[1][0]
        curv.append(abs(u @ (g1 - g0)) / eps)
    m_hat = max(float(np.mean(curv)), 1e-12)
    return 0.5 * min(1.0, m_hat**-0.5) * d ** (-1.0 / 6.0)


def build_proposal_pool(
    approx_logpdf_grad,
    pool_size,
    burn_in,
    thinning,
    seed,
    init,
    step_size=None,
    precond=None,
):
    """Pool of approximate-posterior draws from MALA after burn-in and thinning.

    ``init`` may hold several rows; the pool is then split evenly across the
    chains. Stored ``log_g`` are the unnormalized MALA target values.
    """
    pool_size, burn_in, thinning = int(pool_size), int(burn_in), int(thinning)
    if pool_size < 1 or burn_in < 0 or thinning < 1:
        raise ParameterError("need pool_size >= 1, burn_in >= 0, thinning >= 1")
    init = np.atleast_2d(np.asarray(init, dtype=np.float64))
    c = init.shape[0]
    if step_size is None:
        step_size = default_step_size(approx_logpdf_grad, init[0], seed, precond)
    per_chain = -(-pool_size // c)
    skip = -(-burn_in // thinning)
    steps = (skip + per_chain) * thinning
    rec = mala_run(approx_logpdf_grad, step_size, steps, seed, init, precond=precond, thin=thinning)
    kept = rec.states[:, skip + 1 :]
    xt = np.ascontiguousarray(kept.transpose(1, 0, 2).reshape(-1, init.shape[1])[:pool_size])
    log_g = np.asarray(approx_logpdf_grad(xt)[0], dtype=np.float64)
    provenance = {
        "burn_in": burn_in,
        "thinning": thinning,
        "step_size": float(step_size),
        "chains": c,
        "pool_seed": int(seed),
        "pool_acceptance": rec.acceptance_rate,
        "preconditioned": precond is not None,
    }
    return PoolProposal(Draws(xt, xt, log_g), provenance=provenance)
