"""Chain diagnostics: running-mean and second-moment errors, projection histograms, split-Rhat."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import ParameterError

HIST_BINS = 61
HIST_RANGE = (-4.0, 4.0)


def checkpoints(steps, count=20, start=10):
    """Log-spaced integer checkpoints covering ``[start, steps]``."""
    steps = int(steps)
    if steps < start:
        return np.array([steps])
    pts = np.unique(np.round(np.geomspace(start, steps, int(count))).astype(np.int64))
    pts[-1] = steps
    return pts


@dataclass(frozen=True)
class DiagnosticsReport:
    acceptance_rate: float
    checkpoints: np.ndarray
    relative_mean_error: np.ndarray
    relative_second_moment_error: np.ndarray
    projection_histogram: Optional[np.ndarray] = None
    histogram_edges: Optional[np.ndarray] = None

    def __post_init__(self):
        n = self.checkpoints.shape[0]
        if self.relative_mean_error.shape != (n,) or self.relative_second_moment_error.shape != (n,):
            raise ParameterError("trace lengths must equal the number of checkpoints")

    @property
    def final_mean_error(self):
        return float(self.relative_mean_error[-1])

    @property
    def final_second_moment_error(self):
        return float(self.relative_second_moment_error[-1])


def projection_histogram(proj, bins=HIST_BINS, value_range=HIST_RANGE):
    """Counts of ``w^T x``; values outside the range land in the end bins so counts sum to the sample count."""
    edges = np.linspace(value_range[0], value_range[1], int(bins) + 1)
    idx = np.clip(np.searchsorted(edges, proj, side="right") - 1, 0, int(bins) - 1)
    return np.bincount(idx, minlength=int(bins)), edges


def mode_split(proj):
    """Fraction of projected samples in the positive mode."""
    proj = np.asarray(proj)
    return float(np.mean(proj > 0.0))


def compute_diagnostics(states, acceptance_rate, reference_mean, reference_second_moments, w=None, count=20):
    """Errors of running averages over ``states[:t]`` at log-spaced checkpoints ``t``.

    Mean error ``|mean - mu_ref| / |mu_ref|``; second-moment error is the
    componentwise relative error averaged over components.
    """
    states = np.asarray(states, dtype=np.float64)
    mu = np.asarray(reference_mean, dtype=np.float64)
    m2 = np.asarray(reference_second_moments, dtype=np.float64)
    mu_norm = np.linalg.norm(mu)
    if mu_norm == 0.0 or np.any(m2 == 0.0):
        raise ParameterError("reference statistics must be nonzero")
    n = states.shape[0]
    pts = checkpoints(n, count)
    csum = np.cumsum(states, axis=0)
    csq = np.cumsum(states * states, axis=0)
    means = csum[pts - 1] / pts[:, None]
    seconds = csq[pts - 1] / pts[:, None]
    mean_err = np.linalg.norm(means - mu, axis=1) / mu_norm
    m2_err = np.mean(np.abs(seconds - m2) / np.abs(m2), axis=1)
    hist = edges = None
    if w is not None:
        hist, edges = projection_histogram(states @ np.asarray(w))
    return DiagnosticsReport(float(acceptance_rate), pts, mean_err, m2_err, hist, edges)


def split_rhat(chains):
    """Largest split-Rhat over components for chains of shape ``(c, n, d)``."""
    chains = np.asarray(chains, dtype=np.float64)
    if chains.ndim == 2:
        chains = chains[:, :, None]
    c, n, d = chains.shape
    half = n // 2
    if half < 2:
        raise ParameterError("need at least four draws per chain")
    parts = np.concatenate([chains[:, :half], chains[:, half : 2 * half]], axis=0)
    m = parts.shape[0]
    means = parts.mean(axis=1)
    within = parts.var(axis=1, ddof=1).mean(axis=0)
    between = half * means.var(axis=0, ddof=1)
    var_hat = (half - 1) / half * within + between / half
    with np.errstate(divide="ignore", invalid="ignore"):
        rhat = np.sqrt(var_hat / within)
    rhat = np.where(within > 0, rhat, 1.0)
    return float(np.max(rhat)) if m > 1 else float("nan")
