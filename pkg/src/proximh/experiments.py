"""Desk-scale experiment drivers behind ``prox-imh run``.

Every driver takes a resolved config (see :mod:`proximh.config`) and an
output directory, writes CSV tables with JSON sidecars, and returns a summary
dict. All randomness flows from ``cfg["seed"]`` through :func:`subseed`, so a
rerun with the same config reproduces every file byte for byte.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
import scipy.optimize
import scipy.stats

from . import io
from .densities import BimodalPrior, GaussianDensity, SmoothedTVPrior, SyntheticGenerator
from .diagnostics import compute_diagnostics, mode_split, projection_histogram, split_rhat
from .errors import ConditioningError, NumericalFailure, SolverError, UnsupportedModelError
from .helmholtz import (
    GMRESSettings,
    HelmholtzGrid,
    HelmholtzProblem,
    HelmholtzSourceModel,
    born_matrices,
    dct_precondition,
    default_sources,
    gmres_solve,
    helmholtz_matvec,
)
from .linalg import build_k, discrepancy_norms, make_test_operator, random_observation
from .posteriors import LinearInverseProblem, gaussian_posterior_form
from .proximal import (
    GaussNewtonStep,
    GeneratorModel,
    gauss_newton_step,
    gauss_newton_step_multisource,
    gn_log_jacobian_det,
    logdet_diagnostics,
    model_jacobian,
)
from .samplers import (
    GaussianProposal,
    NonlinearProblem,
    build_proposal_pool,
    default_step_size,
    imh_run,
    log_weight_linear,
    log_weight_nonlinear,
    mala_run,
)
from .theory import kl_gaussian_general, kl_monte_carlo

_TEST_KIND = {"I": "multiplicative", "II": "additive_lowrank", "III": "truncation"}


def subseed(seed, *tags):
    """Deterministic child seed of ``seed`` labelled by integer ``tags``."""
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(int(t) for t in tags))
    return int(ss.generate_state(1)[0])


def emit(out, name, header, rows, cfg, **extra):
    """``<out>/<name>.csv`` plus a JSON sidecar embedding the resolved config."""
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    io.write_csv(out / f"{name}.csv", header, rows)
    io.write_json(out / f"{name}.json", {"columns": list(header), "config": cfg, **extra})


def inject_noise(signal, ratio, band, seed, max_tries=1000):
    """Gaussian noise with ``sigma^2 = r^2 |s|^2 / (d_y (1 - r^2))``.

    The draw is repeated (deterministically) until ``|e| / |y|`` lies in ``band``.
    Returns ``(y, sigma, achieved_ratio, attempts)``.
    """
    signal = np.asarray(signal, dtype=np.float64)
    d_y = signal.size
    sigma = float(np.sqrt(ratio**2 * (signal @ signal) / (d_y * (1.0 - ratio**2))))
    rng = np.random.default_rng(seed)
    for attempt in range(1, max_tries + 1):
        e = sigma * rng.standard_normal(signal.shape)
        y = signal + e
        achieved = float(np.linalg.norm(e) / np.linalg.norm(y))
        if band[0] <= achieved <= band[1]:
            return y, sigma, achieved, attempt
    raise NumericalFailure(f"noise ratio never landed in {band} after {max_tries} draws")


def _batched(fn):
    """Lift a single-vector ``(logp, grad)`` function to row batches."""

    def wrapped(xs):
        xs = np.atleast_2d(xs)
        out = [fn(v) for v in xs]
        return np.array([o[0] for o in out]), np.stack([o[1] for o in out])

    return wrapped


def _linear_gaussian_logpdf_grad(prior, m, y, sigma):
    def f(x):
        lp, g = prior.logpdf_grad(x)
        r = y - x @ m.T
        return lp - 0.5 * np.sum(r * r, axis=-1) / sigma**2, g + r @ m / sigma**2

    return f


def reference_run(logpdf_grad, init, precond, steps, thin, seed, rhat_max, strict):
    """Long preconditioned MALA on the exact posterior.

    The first fifth of every chain is discarded; split-Rhat across chains
    gates the result when ``strict``.
    """
    init = np.atleast_2d(init)
    h = default_step_size(logpdf_grad, init[0], seed, precond)
    rec = mala_run(logpdf_grad, h, steps, seed, init, precond=precond, thin=thin)
    states = rec.states if rec.states.ndim == 3 else rec.states[None]
    warm = states.shape[1] // 5
    kept = states[:, warm + 1 :]
    rhat = split_rhat(kept) if kept.shape[0] > 1 and kept.shape[1] >= 4 else float("nan")
    if strict and not rhat < rhat_max:
        raise NumericalFailure(f"reference split-Rhat {rhat:.4f} is not below {rhat_max}")
    samples = kept.reshape(-1, kept.shape[-1])
    meta = {"step_size": h, "acceptance_rate": rec.acceptance_rate, "rhat": rhat, "samples": samples.shape[0]}
    return samples, meta


def _diag_rows(name, trial, rep):
    return [
        [trial, name, int(t), float(me), float(se)]
        for t, me, se in zip(rep.checkpoints, rep.relative_mean_error, rep.relative_second_moment_error)
    ]


# ---------------------------------------------------------------------------
# KL sweep


def kl_point(d, obs_ratio, rel_error, log10_snr, seed, decay=2.0):
    """Gaussian test problem of the KL sweep.

    ``SNR = |A|_F^2 / (d_y sigma^2)``; ``F_tilde`` uses the multiplicative
    perturbation with ``|F - F_tilde| / |F| = rel_error``.
    """
    d_y = max(1, int(round(obs_ratio * d)))
    ops = make_test_operator("multiplicative", (d, d_y), {"rel_error": rel_error}, seed, decay=decay)
    a = ops.o @ ops.f
    a_tilde = ops.o @ ops.f_tilde
    sigma = float(np.sqrt(np.sum(a * a) / (d_y * 10.0**log10_snr)))
    prob = LinearInverseProblem(a, a_tilde, sigma, GaussianDensity.standard(d), np.zeros(d_y), ops.o, ops.f, ops.f_tilde)
    return prob, build_k(a, a_tilde, sigma**2)


def run_kl_sweep(cfg, out):
    p = cfg["kl_sweep"]
    seed = cfg["seed"]
    base = dict(d=p["d"], obs_ratio=p["obs_ratio"], rel_error=p["rel_error"], log10_snr=p["log10_snr"])
    sweeps = {
        "noise": ("log10_snr", p["snr_values"]),
        "operator_error": ("rel_error", p["error_values"]),
        "observation_ratio": ("obs_ratio", p["ratio_values"]),
        "dimension": ("d", [v for v in p["dim_values"] if v <= p["max_dim"]]),
    }
    summary = {}
    spot = []
    for name, (param, values) in sweeps.items():
        rows = []
        for value in values:
            args = dict(base, **{param: value})
            prob, k = kl_point(int(args["d"]), args["obs_ratio"], args["rel_error"], args["log10_snr"], seed, p["decay"])
            rep = kl_gaussian_general(prob, k)
            rows.append([param, value, rep.d_a, rep.d_l, rep.d_p])
            if name == "noise":
                spot.append((name, param, value, prob, k, rep))
        emit(out, f"kl_{name}", ["sweep_param", "value", "d_a", "d_l", "d_p"], rows, cfg)
        summary[name] = rows
    # Monte-Carlo spot checks spread over the noise sweep
    picks = np.unique(np.linspace(0, len(spot) - 1, min(p["mc_points"], len(spot))).round().astype(int))
    mc_rows = []
    for j, i in enumerate(picks):
        name, param, value, prob, k, rep = spot[i]
        est, err = kl_monte_carlo(prob, k, p["mc_samples"], subseed(seed, 1, j))
        for variant, closed, m, e in zip(("a", "l", "p"), rep.as_tuple(), est, err):
            z = (closed - m) / e if e > 0 else 0.0
            mc_rows.append([name, value, variant, closed, m, e, z])
    emit(out, "kl_mc_check", ["sweep", "value", "variant", "closed_form", "mc_estimate", "mc_std_error", "z"], mc_rows, cfg)
    summary["mc_check"] = mc_rows
    return summary


# ---------------------------------------------------------------------------
# Bimodal tests I-III and the beta sweep


def bimodal_setup(cfg, section):
    p = cfg[section]
    seed = cfg["seed"]
    kind = _TEST_KIND[p["test"]]
    params = {
        "multiplicative": {"alpha_minus": p["alpha_minus"], "alpha_plus": p["alpha_plus"]},
        "additive_lowrank": {"epsilon": p["epsilon"], "rank": p["rank"]},
        "truncation": {"threshold": p["threshold"]},
    }[kind]
    d, d_y = p["d"], p["d_y"]
    ops = make_test_operator(kind, (d, d_y), params, subseed(seed, 0), decay=1.0)
    a = ops.o @ ops.f
    a_tilde = ops.o @ ops.f_tilde
    prior = BimodalPrior.random(d, p["c"], p["tau"], subseed(seed, 1))
    rng = np.random.default_rng(subseed(seed, 2))
    x_true = rng.standard_normal(d)
    x_true += (prior.c - prior.w @ x_true) * prior.w
    y, sigma, achieved, attempts = inject_noise(a @ x_true, cfg["noise_ratio"], cfg["noise_band"], subseed(seed, 3))
    prob = LinearInverseProblem(a, a_tilde, sigma, prior, y, ops.o, ops.f, ops.f_tilde)
    eye = np.eye(d)
    precond = np.linalg.inv(eye + a.T @ a / sigma**2)
    precond_a = np.linalg.inv(eye + a_tilde.T @ a_tilde / sigma**2)

    def mode_inits(c_mat, m, count):
        mu = c_mat @ (m.T @ y) / sigma**2
        signs = [1.0 if i % 2 == 0 else -1.0 for i in range(count)]
        return np.stack([mu + (s * prior.c - prior.w @ mu) * prior.w for s in signs])

    return {
        "prob": prob,
        "prior": prior,
        "x_true": x_true,
        "sigma": sigma,
        "noise": {"achieved_ratio": achieved, "attempts": attempts, "sigma": sigma},
        "precond": precond,
        "precond_a": precond_a,
        "init": mode_inits(precond, a, p["reference_chains"]),
        "init_a": mode_inits(precond_a, a_tilde, p["pool_chains"]),
    }


def _bimodal_pool_and_reference(cfg, section, st):
    p = cfg[section]
    seed = cfg["seed"]
    prob = st["prob"]
    lg_exact = _linear_gaussian_logpdf_grad(st["prior"], prob.a, prob.y, st["sigma"])
    lg_approx = _linear_gaussian_logpdf_grad(st["prior"], prob.a_tilde, prob.y, st["sigma"])
    ref, ref_meta = reference_run(
        lg_exact, st["init"], st["precond"], p["reference_steps"], p["reference_thin"],
        subseed(seed, 4), p["rhat_max"], p["strict_reference"],
    )
    pool = build_proposal_pool(
        lg_approx, p["pool_size"], p["burn_in"], p["thinning"], subseed(seed, 5), st["init_a"], precond=st["precond_a"]
    )
    return lg_exact, ref, ref_meta, pool


def run_bimodal(cfg, out):
    p = cfg["bimodal"]
    seed = cfg["seed"]
    st = bimodal_setup(cfg, "bimodal")
    prob, prior = st["prob"], st["prior"]
    lg_exact, ref, ref_meta, pool = _bimodal_pool_and_reference(cfg, "bimodal", st)
    ref_mean, ref_m2 = ref.mean(axis=0), np.mean(ref * ref, axis=0)
    k = build_k(prob.a, prob.a_tilde, cfg["beta_factor"] * st["sigma"] ** 2)

    proposals = {"approx": pool, "proximal": pool.mapped(k.matrix, "K")}
    norms = {"proximal": None, "latent": None}
    try:
        # atoms x_tilde ~ pi_a pushed through F^{-1} F_tilde have density pi_a(F_tilde^{-1} F x)
        proposals["latent"] = pool.mapped(np.linalg.inv(prob.latent_matrix()), "latent")
        norms["latent"], norms["proximal"] = discrepancy_norms(prob.f, prob.f_tilde, k)
    except (ConditioningError, UnsupportedModelError):
        norms["proximal"] = float(np.linalg.norm(np.eye(k.dim) - k.inverse, 2))

    summary_rows, trace_rows = [], []
    hists = {"reference": projection_histogram(ref @ prior.w)[0]}
    edges = projection_histogram(ref @ prior.w)[1]
    results = {name: {"acceptance": [], "mode_split": [], "final_mean_error": []} for name in proposals}
    order = [n for n in ("approx", "latent", "proximal") if n in proposals]
    for trial in range(p["trials"]):
        for j, name in enumerate(order):
            rec = imh_run(
                proposals[name], lambda dr, n=name: log_weight_linear(n, prob, k, dr), p["steps"], subseed(seed, 10, trial, j)
            )
            rep = compute_diagnostics(rec.states, rec.acceptance_rate, ref_mean, ref_m2, prior.w)
            split = mode_split(rec.states @ prior.w)
            summary_rows.append([trial, name, rec.acceptance_rate, rep.final_mean_error, rep.final_second_moment_error, split])
            trace_rows += _diag_rows(name, trial, rep)
            results[name]["acceptance"].append(rec.acceptance_rate)
            results[name]["mode_split"].append(split)
            results[name]["final_mean_error"].append(rep.final_mean_error)
            if trial == 0:
                hists[name] = rep.projection_histogram
        if p["mala_steps"] > 0:
            init = st["init"][0]
            h = default_step_size(lg_exact, init, subseed(seed, 11, trial))
            rec = mala_run(lg_exact, h, p["mala_steps"], subseed(seed, 12, trial), init)
            rep = compute_diagnostics(rec.states, rec.acceptance_rate, ref_mean, ref_m2, prior.w)
            split = mode_split(rec.states @ prior.w)
            summary_rows.append([trial, "mala", rec.acceptance_rate, rep.final_mean_error, rep.final_second_moment_error, split])
            trace_rows += _diag_rows("mala", trial, rep)
            if trial == 0:
                hists["mala"] = rep.projection_histogram

    ref_split = mode_split(ref @ prior.w)
    extra = {
        "noise": st["noise"],
        "reference": dict(ref_meta, mode_split=ref_split),
        "pool": pool.metadata(),
        "discrepancy_norms": norms,
        "relative_operator_error": float(np.linalg.norm(prob.a_tilde - prob.a, 2) / np.linalg.norm(prob.a, 2)),
    }
    emit(out, "bimodal_summary",
         ["trial", "sampler", "acceptance_rate", "final_mean_error", "final_second_moment_error", "mode_split"],
         summary_rows, cfg, **extra)
    emit(out, "bimodal_traces", ["trial", "sampler", "step", "mean_error", "second_moment_error"], trace_rows, cfg)
    names = list(hists)
    hist_rows = [[edges[i], edges[i + 1], *[int(hists[n][i]) for n in names]] for i in range(len(edges) - 1)]
    emit(out, "bimodal_histograms", ["bin_left", "bin_right", *names], hist_rows, cfg)
    return {"results": results, "reference_split": ref_split, **extra}


def run_beta_sweep(cfg, out):
    p = cfg["beta_sweep"]
    seed = cfg["seed"]
    st = bimodal_setup(cfg, "beta_sweep")
    prob = st["prob"]
    _, ref, ref_meta, pool = _bimodal_pool_and_reference(cfg, "beta_sweep", st)
    ref_mean, ref_m2 = ref.mean(axis=0), np.mean(ref * ref, axis=0)
    sigma2 = st["sigma"] ** 2
    factors = np.geomspace(p["beta_min"], p["beta_max"], p["beta_points"])
    rows = []
    for i, f in enumerate(factors):
        k = build_k(prob.a, prob.a_tilde, f * sigma2)
        rates, errs = [], []
        for trial in range(p["trials"]):
            rec = imh_run(
                pool.mapped(k.matrix, "K"),
                lambda dr: log_weight_linear("proximal", prob, k, dr),
                p["steps"],
                subseed(seed, 20, trial),
            )
            rep = compute_diagnostics(rec.states, rec.acceptance_rate, ref_mean, ref_m2)
            rates.append(rec.acceptance_rate)
            errs.append(rep.final_mean_error)
        rows.append([float(f), float(np.mean(rates)), float(np.mean(errs))])
    rates = np.array([r[1] for r in rows])
    errs = np.array([r[2] for r in rows])
    rho = float(scipy.stats.spearmanr(rates, errs)[0])
    best = float(factors[int(np.argmax(rates))])
    extra = {"noise": st["noise"], "reference": ref_meta, "spearman_rho": rho, "argmax_beta_over_sigma2": best}
    emit(out, "beta_sweep", ["beta_over_sigma2", "acceptance_rate", "relative_mean_error"], rows, cfg, **extra)
    return {"rows": rows, **extra}


# ---------------------------------------------------------------------------
# Helmholtz


def _gmres_settings(p):
    return GMRESSettings(p["gmres_tol"], p["gmres_restart"], p["gmres_max_iter"])


def _compare_preconditioning(prob, level, medium, rhs):
    """Residual histories of one solve with and without the DCT preconditioner."""
    grid = prob.grid(level)
    x_bar = float(np.mean(medium))
    rows, counts = [], {}
    for flag in (True, False):
        pre = (lambda v: dct_precondition(grid, x_bar, v)) if flag else None
        try:
            _, iters, hist = gmres_solve(lambda v: helmholtz_matvec(grid, medium, v), pre, rhs, prob.solver)
            converged = True
        except SolverError as exc:
            hist = np.asarray(exc.history)
            iters, converged = len(hist) - 1, False
        counts["preconditioned" if flag else "unpreconditioned"] = {"iterations": int(iters), "converged": converged}
        rows += [[level, int(flag), i, float(r)] for i, r in enumerate(hist)]
    return rows, counts


def _gmres_outputs(out, cfg, prob, comparisons, prefix):
    it_rows = [[i, lvl, int(iters)] for i, (lvl, iters, _) in enumerate(prob.history)]
    emit(out, f"{prefix}_gmres_iterations", ["solve", "level", "iterations"], it_rows, cfg)
    hist_rows, counts = [], {}
    for j, (level, medium, rhs) in enumerate(comparisons):
        rows, c = _compare_preconditioning(prob, level, medium, rhs)
        hist_rows += [[j, *r] for r in rows]
        counts[f"{j}:{level}"] = c
    emit(out, f"{prefix}_gmres_history", ["comparison", "level", "preconditioned", "iteration", "residual"],
         hist_rows, cfg, comparisons=counts)
    return counts


def run_helmholtz_linear(cfg, out):
    p = cfg["helmholtz_linear"]
    seed = cfg["seed"]
    k_wave = p["k_wave"]
    prob_h = HelmholtzProblem(
        HelmholtzGrid(p["fine_n"], k_wave), HelmholtzGrid(p["coarse_n"], k_wave), p["param_n"],
        default_sources(p["source"] + 1), p["d_y"], _gmres_settings(p),
    )
    x0 = np.ones(prob_h.d_x)
    a, a_tilde = born_matrices(prob_h, x0, p["source"])
    d = prob_h.d_x
    x_true = np.random.default_rng(subseed(seed, 0)).standard_normal(d)
    y, sigma, achieved, attempts = inject_noise(a @ x_true, cfg["noise_ratio"], cfg["noise_band"], subseed(seed, 1))
    prob = LinearInverseProblem(a, a_tilde, sigma, GaussianDensity.standard(d), y)
    k = build_k(a, a_tilde, cfg["beta_factor"] * sigma**2)
    exact = gaussian_posterior_form("exact", prob)
    approx = gaussian_posterior_form("approx", prob)
    ref_mean = exact.mean(y)
    ref_m2 = ref_mean**2 + np.diag(exact.covariance)
    proposals = {"approx": GaussianProposal(approx, y), "proximal": GaussianProposal(approx, y, k.matrix)}
    summary_rows, trace_rows = [], []
    for trial in range(p["trials"]):
        for j, name in enumerate(proposals):
            rec = imh_run(proposals[name], lambda dr, n=name: log_weight_linear(n, prob, k, dr), p["steps"],
                          subseed(seed, 10, trial, j))
            rep = compute_diagnostics(rec.states, rec.acceptance_rate, ref_mean, ref_m2)
            summary_rows.append([trial, name, rec.acceptance_rate, rep.final_mean_error, rep.final_second_moment_error])
            trace_rows += _diag_rows(name, trial, rep)
    extra = {
        "noise": {"achieved_ratio": achieved, "attempts": attempts, "sigma": sigma},
        "relative_operator_error": float(np.linalg.norm(a_tilde - a, 2) / np.linalg.norm(a, 2)),
        "condition_number_a": float(np.linalg.cond(a)),
    }
    emit(out, "helmholtz_linear_summary",
         ["trial", "sampler", "acceptance_rate", "final_mean_error", "final_second_moment_error"],
         summary_rows, cfg, **extra)
    emit(out, "helmholtz_linear_traces", ["trial", "sampler", "step", "mean_error", "second_moment_error"], trace_rows, cfg)
    comparisons = []
    if p["compare_unpreconditioned"]:
        med = prob_h.medium(x0 + 0.5 * x_true / np.abs(x_true).max(), "fine")
        comparisons.append(("fine", med, prob_h.source(p["source"], "fine")))
    extra["gmres"] = _gmres_outputs(out, cfg, prob_h, comparisons, "helmholtz_linear")
    return {"summary": summary_rows, **extra}


class StackedModel:
    """Concatenate several forward models sharing one input."""

    def __init__(self, models):
        self.models = list(models)
        self._sizes = None

    @property
    def d_in(self):
        return self.models[0].d_in

    def apply(self, x):
        outs = [m.apply(x) for m in self.models]
        self._sizes = [o.size for o in outs]
        return np.concatenate(outs)

    def jvp(self, x, v):
        return np.concatenate([m.jvp(x, v) for m in self.models])

    def vjp(self, x, w):
        if self._sizes is None:
            self.apply(x)
        parts = np.split(w, np.cumsum(self._sizes)[:-1])
        return sum(m.vjp(x, part) for m, part in zip(self.models, parts))


def _map_estimate(nprob, x0, approx):
    def fun(x):
        lp, g = nprob.grad_log_post(x, approx=approx)
        return -lp, -g

    res = scipy.optimize.minimize(fun, x0, jac=True, method="L-BFGS-B", options={"maxiter": 200})
    return res.x


def _gn_precond(model, x, sigma, reg=1.0):
    j = model_jacobian(model, x)
    h = j.T @ j / sigma**2 + reg * np.eye(x.size)
    c = np.linalg.inv(h)
    return 0.5 * (c + c.T)


def run_helmholtz_nonlinear(cfg, out):
    p = cfg["helmholtz_nonlinear"]
    seed = cfg["seed"]
    k_wave = p["k_wave"]
    prob_h = HelmholtzProblem(
        HelmholtzGrid(p["fine_n"], k_wave), HelmholtzGrid(p["coarse_n"], k_wave), p["param_n"],
        default_sources(p["n_sources"]), p["d_y"], _gmres_settings(p), method=p["linear_solver"],
    )
    n_p, d = p["param_n"], prob_h.d_x
    t = (np.arange(n_p) + 0.5) / n_p
    xx, yy = np.meshgrid(t, t, indexing="ij")
    x_true = (1.0 + p["contrast"] * np.exp(-((xx - 0.45) ** 2 + (yy - 0.55) ** 2) / (2 * 0.2**2))).ravel()
    fine = [HelmholtzSourceModel(prob_h, i, "fine") for i in range(p["n_sources"])]
    coarse = [HelmholtzSourceModel(prob_h, i, "coarse") for i in range(p["n_sources"])]
    fwd, fwd_t = StackedModel(fine), StackedModel(coarse)
    y, sigma, achieved, attempts = inject_noise(fwd.apply(x_true), cfg["noise_ratio"], cfg["noise_band"], subseed(seed, 1))
    prior = SmoothedTVPrior((n_p, n_p), p["tv_epsilon"], p["tv_weight"])
    nprob = NonlinearProblem(fwd, fwd_t, sigma, prior, y)
    beta = cfg["beta_factor"] * sigma**2

    x_map_a = _map_estimate(nprob, np.ones(d), approx=True)
    x_map = _map_estimate(nprob, np.ones(d), approx=False)
    lg_a = _batched(lambda x: nprob.grad_log_post(x, approx=True))
    lg = _batched(lambda x: nprob.grad_log_post(x, approx=False))
    c_a = _gn_precond(fwd_t, x_map_a, sigma)
    c_e = _gn_precond(fwd, x_map, sigma)
    pool = build_proposal_pool(lg_a, p["pool_size"], p["burn_in"], p["thinning"], subseed(seed, 5), x_map_a[None], precond=c_a)
    gns = [GaussNewtonStep(beta, f, ft, tol=p["cg_tol"]) for f, ft in zip(fine, coarse)]
    prox_pool = pool.corrected(lambda v: gauss_newton_step_multisource(gns, beta, v), label="gauss_newton")
    ref, ref_meta = reference_run(
        lg, np.tile(x_map, (p["reference_chains"], 1)), c_e, p["reference_steps"], p["reference_thin"],
        subseed(seed, 4), p["rhat_max"], p["strict_reference"],
    )
    ref_mean, ref_m2 = ref.mean(axis=0), np.mean(ref * ref, axis=0)
    weights = lambda dr: log_weight_nonlinear(nprob, dr)  # noqa: E731
    summary_rows, trace_rows = [], []
    for trial in range(p["trials"]):
        for j, (name, src) in enumerate((("approx", pool), ("proximal", prox_pool))):
            rec = imh_run(src, weights, p["steps"], subseed(seed, 10, trial, j))
            rep = compute_diagnostics(rec.states, rec.acceptance_rate, ref_mean, ref_m2)
            summary_rows.append([trial, name, rec.acceptance_rate, rep.final_mean_error, rep.final_second_moment_error])
            trace_rows += _diag_rows(name, trial, rep)
    extra = {
        "noise": {"achieved_ratio": achieved, "attempts": attempts, "sigma": sigma},
        "reference": ref_meta,
        "pool": pool.metadata(),
        "map_error": float(np.linalg.norm(x_map - x_true) / np.linalg.norm(x_true)),
    }
    emit(out, "helmholtz_nonlinear_summary",
         ["trial", "sampler", "acceptance_rate", "final_mean_error", "final_second_moment_error"],
         summary_rows, cfg, **extra)
    emit(out, "helmholtz_nonlinear_traces", ["trial", "sampler", "step", "mean_error", "second_moment_error"], trace_rows, cfg)
    out = Path(out)
    io.save_field(out / "x_true", x_true, {"n": n_p, "kind": "medium"})
    io.save_field(out / "reference_mean", ref_mean, {"n": n_p, "kind": "medium"})
    comparisons = []
    if p["compare_unpreconditioned"]:
        comparisons.append(("fine", prob_h.medium(x_true, "fine"), prob_h.source(0, "fine")))
    extra["gmres"] = _gmres_outputs(out, cfg, prob_h, comparisons, "helmholtz_nonlinear")
    return {"summary": summary_rows, **extra}


# ---------------------------------------------------------------------------
# Synthetic generator model


def generator_setup(cfg, section, delta):
    p = cfg[section]
    seed = cfg["seed"]
    gen = SyntheticGenerator.random(p["d_z"], p["d_x"], tuple(p["hidden"]), "tanh", subseed(seed, 0))
    a = random_observation(p["d_y"], p["d_x"], np.random.default_rng(subseed(seed, 1)))
    z_true = np.random.default_rng(subseed(seed, 2)).standard_normal(p["d_z"])
    fwd = GeneratorModel(a, gen)
    y, sigma, achieved, attempts = inject_noise(fwd.apply(z_true), cfg["noise_ratio"], cfg["noise_band"], subseed(seed, 3))
    fwd_t = GeneratorModel((1.0 - delta) * a, gen)
    nprob = NonlinearProblem(fwd, fwd_t, sigma, GaussianDensity.standard(p["d_z"]), y)
    noise = {"achieved_ratio": achieved, "attempts": attempts, "sigma": sigma}
    return gen, a, nprob, noise


def run_generator_nonlinear(cfg, out):
    p = cfg["generator_nonlinear"]
    seed = cfg["seed"]
    delta = p["delta"]
    gen, a, nprob, noise = generator_setup(cfg, "generator_nonlinear", delta)
    sigma = noise["sigma"]
    beta = cfg["beta_factor"] * sigma**2
    d = p["d_z"]
    lg_a = _batched(lambda z: nprob.grad_log_post(z, approx=True))
    lg = _batched(lambda z: nprob.grad_log_post(z, approx=False))
    z_map_a = _map_estimate(nprob, np.zeros(d), approx=True)
    z_map = _map_estimate(nprob, np.zeros(d), approx=False)
    c_a = _gn_precond(nprob.forward_tilde, z_map_a, sigma)
    c_e = _gn_precond(nprob.forward, z_map, sigma)
    pool = build_proposal_pool(
        lg_a, p["pool_size"], p["burn_in"], p["thinning"], subseed(seed, 5), np.tile(z_map_a, (p["pool_chains"], 1)), precond=c_a
    )
    gn = GaussNewtonStep(beta, nprob.forward, nprob.forward_tilde, delta=delta)
    prox_pool = pool.corrected(
        lambda v: gauss_newton_step(gn, v), logdet=lambda v: gn_log_jacobian_det(gn, v, "exact_small"), label="gauss_newton"
    )
    ref, ref_meta = reference_run(
        lg, np.tile(z_map, (p["reference_chains"], 1)), c_e, p["reference_steps"], p["reference_thin"],
        subseed(seed, 4), p["rhat_max"], p["strict_reference"],
    )
    ref_mean, ref_m2 = ref.mean(axis=0), np.mean(ref * ref, axis=0)
    variants = (
        ("approx", pool, False),
        ("proximal", prox_pool, False),
        ("proximal_jacobian", prox_pool, True),
    )
    summary_rows, trace_rows = [], []
    for trial in range(p["trials"]):
        for j, (name, src, jac) in enumerate(variants):
            rec = imh_run(src, lambda dr, jac=jac: log_weight_nonlinear(nprob, dr, include_jacobian=jac),
                          p["steps"], subseed(seed, 10, trial, j))
            rep = compute_diagnostics(rec.states, rec.acceptance_rate, ref_mean, ref_m2)
            summary_rows.append([trial, name, rec.acceptance_rate, rep.final_mean_error, rep.final_second_moment_error])
            trace_rows += _diag_rows(name, trial, rep)
    n_ld = min(p["logdet_samples"], len(pool.atoms))
    diag = logdet_diagnostics(gn, pool.atoms.x_tilde[:n_ld], p["logdet_pairs"], subseed(seed, 6))
    bound = d * np.log(1.0 - delta)
    extra = {
        "noise": noise,
        "reference": ref_meta,
        "pool": pool.metadata(),
        "logdet": {
            "quantiles": list(diag.quantiles),
            "min": float(diag.sorted_logdets[0]),
            "max": float(diag.sorted_logdets[-1]),
            "lower_bound": float(bound),
            "ratio_band": [float(np.exp(bound)), float(np.exp(-bound))],
        },
    }
    emit(out, "generator_summary",
         ["trial", "sampler", "acceptance_rate", "final_mean_error", "final_second_moment_error"],
         summary_rows, cfg, **extra)
    emit(out, "generator_traces", ["trial", "sampler", "step", "mean_error", "second_moment_error"], trace_rows, cfg)
    emit(out, "generator_logdets", ["rank", "logdet"], [[i, v] for i, v in enumerate(diag.sorted_logdets)], cfg)
    return {"summary": summary_rows, **extra}


def run_logdet_diag(cfg, out):
    p = cfg["logdet_diag"]
    seed = cfg["seed"]
    gen, a, nprob, noise = generator_setup(cfg, "logdet_diag", 0.0)
    d = p["d_z"]
    lg = _batched(lambda z: nprob.grad_log_post(z))
    z_map = _map_estimate(nprob, np.zeros(d), approx=False)
    c_e = _gn_precond(nprob.forward, z_map, noise["sigma"])
    pool = build_proposal_pool(lg, p["samples"], p["burn_in"], p["thinning"], subseed(seed, 5), z_map[None], precond=c_e)
    samples = pool.atoms.x_tilde
    beta = cfg["beta_factor"] * noise["sigma"] ** 2
    sorted_rows, q_rows = [], []
    for dlt in p["deltas"]:
        gn = GaussNewtonStep(beta, nprob.forward, GeneratorModel((1.0 - dlt) * a, gen), delta=dlt)
        exact = np.array([gn_log_jacobian_det(gn, z, "exact_small") for z in samples])
        eig = np.array([gn_log_jacobian_det(gn, z, "eigen_delta") for z in samples])
        diag = logdet_diagnostics(gn, samples, p["pairs"], subseed(seed, 6))
        order = np.argsort(exact, kind="stable")
        sorted_rows += [[dlt, r, exact[i], eig[i]] for r, i in enumerate(order)]
        bound = d * np.log(1.0 - dlt)
        q_rows.append([dlt, *diag.quantiles, float(exact.min()), float(exact.max()), bound,
                       float(np.max(np.abs(exact - eig)))])
    emit(out, "logdet_sorted", ["delta", "rank", "logdet_exact_small", "logdet_eigen_delta"], sorted_rows, cfg)
    emit(out, "logdet_quantiles",
         ["delta", "ratio_q05", "ratio_q50", "ratio_q95", "logdet_min", "logdet_max", "lower_bound", "mode_max_abs_diff"],
         q_rows, cfg, noise=noise, pool=pool.metadata())
    return {"quantiles": q_rows, "noise": noise}


RUNNERS = {
    "kl_sweep": run_kl_sweep,
    "bimodal": run_bimodal,
    "beta_sweep": run_beta_sweep,
    "helmholtz_linear": run_helmholtz_linear,
    "helmholtz_nonlinear": run_helmholtz_nonlinear,
    "generator_nonlinear": run_generator_nonlinear,
    "logdet_diag": run_logdet_diag,
}


def run(cfg, out):
    """Dispatch on ``cfg["experiment"]``."""
    return RUNNERS[cfg["experiment"]](cfg, out)
