"""Prior and noise log-densities with gradients.

All log-densities are returned up to an additive constant and accept either
a single vector ``x`` of shape ``(d,)`` or a batch of shape ``(n, d)``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import io
from .errors import DimensionError, ParameterError


def _check_dim(x, d, what="x"):
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != d:
        raise DimensionError(f"{what} has trailing dimension {x.shape[-1]}, expected {d}")
    return x


@dataclass(frozen=True)
class GaussianDensity:
    """Isotropic Gaussian ``N(mean, variance I)``."""

    mean: np.ndarray
    variance: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "mean", np.asarray(self.mean, dtype=np.float64))
        if not self.variance > 0:
            raise ParameterError("variance must be positive")

    @classmethod
    def standard(cls, d):
        return cls(np.zeros(d), 1.0)

    @property
    def dim(self):
        return self.mean.shape[0]

    def logpdf_grad(self, x):
        return gaussian_logpdf_grad(self, x)

    def logpdf(self, x):
        return gaussian_logpdf_grad(self, x)[0]


def gaussian_logpdf_grad(g: GaussianDensity, x):
    x = _check_dim(x, g.dim)
    diff = x - g.mean
    return -0.5 * np.sum(diff * diff, axis=-1) / g.variance, -diff / g.variance


@dataclass(frozen=True)
class BimodalPrior:
    """``p(x) ∝ exp(-|x|^2/2 - tau (w.x - c)^2 (w.x + c)^2)`` with unit ``w``."""

    w: np.ndarray
    c: float = 2.0
    tau: float = 0.3

    def __post_init__(self):
        w = np.asarray(self.w, dtype=np.float64)
        object.__setattr__(self, "w", w)
        if abs(np.linalg.norm(w) - 1.0) > 1e-12:
            raise ParameterError("w must be a unit vector")
        if not self.tau > 0:
            raise ParameterError("tau must be positive")

    @classmethod
    def random(cls, d, c=2.0, tau=0.3, seed=0):
        w = np.random.default_rng(seed).standard_normal(d)
        return cls(w / np.linalg.norm(w), c, tau)

    @property
    def dim(self):
        return self.w.shape[0]

    def logpdf_grad(self, x):
        return bimodal_logpdf_grad(self, x)

    def logpdf(self, x):
        return bimodal_logpdf_grad(self, x)[0]


def bimodal_logpdf_grad(p: BimodalPrior, x):
    x = _check_dim(x, p.dim)
    t = x @ p.w
    a, b = t - p.c, t + p.c
    logp = -0.5 * np.sum(x * x, axis=-1) - p.tau * a * a * b * b
    dt = 2.0 * a * b * b + 2.0 * a * a * b
    grad = -x - p.tau * np.multiply.outer(dt, p.w)
    return logp, grad


@dataclass(frozen=True)
class SmoothedTVPrior:
    """Smoothed isotropic total variation ``weight * sum sqrt(|grad x|^2 + eps^2)``.

    Images are ``grid = (n_x, n_y)`` arrays flattened row-major; forward
    differences use a replicated boundary so the last row/column difference is 0.
    """

    grid: tuple
    epsilon: float = 1e-3
    weight: float = 1.0

    def __post_init__(self):
        if not self.epsilon > 0 or not self.weight > 0:
            raise ParameterError("epsilon and weight must be positive")
        object.__setattr__(self, "grid", tuple(int(n) for n in self.grid))

    @property
    def dim(self):
        return self.grid[0] * self.grid[1]

    def logpdf_grad(self, x):
        neg, g = tv_eps_logprior_grad(self, x)
        return -neg, -g


def _fwd_diff(u):
    dx = np.zeros_like(u)
    dy = np.zeros_like(u)
    dx[..., :-1, :] = u[..., 1:, :] - u[..., :-1, :]
    dy[..., :, :-1] = u[..., :, 1:] - u[..., :, :-1]
    return dx, dy


def _fwd_diff_adjoint(px, py):
    out = np.zeros_like(px)
    out[..., :-1, :] -= px[..., :-1, :]
    out[..., 1:, :] += px[..., :-1, :]
    out[..., :, :-1] -= py[..., :, :-1]
    out[..., :, 1:] += py[..., :, :-1]
    return out


def tv_eps_logprior_grad(p: SmoothedTVPrior, x):
    """Return ``(TV_eps(x), grad TV_eps(x))`` i.e. the *negative* log-prior."""
    x = _check_dim(x, p.dim)
    u = x.reshape(x.shape[:-1] + p.grid)
    dx, dy = _fwd_diff(u)
    mag = np.sqrt(dx * dx + dy * dy + p.epsilon**2)
    neg = p.weight * mag.sum(axis=(-2, -1))
    g = p.weight * _fwd_diff_adjoint(dx / mag, dy / mag)
    return neg, g.reshape(x.shape)


_ACTIVATIONS = {
    "tanh": (np.tanh, lambda a: 1.0 - np.tanh(a) ** 2),
    "identity": (lambda a: a, lambda a: np.ones_like(a)),
}


@dataclass(frozen=True)
class SyntheticGenerator:
    """Fixed (never trained) feed-forward map ``G: R^{d_z} -> R^{d_x}``.

    Hidden layers apply ``activation``; the output layer is affine.
    """

    layer_weights: tuple
    layer_biases: tuple
    activation: str = "tanh"

    def __post_init__(self):
        ws = tuple(np.asarray(w, dtype=np.float64) for w in self.layer_weights)
        bs = tuple(np.asarray(b, dtype=np.float64) for b in self.layer_biases)
        if len(ws) != len(bs) or not ws:
            raise DimensionError("need one bias per weight matrix")
        for i, (w, b) in enumerate(zip(ws, bs)):
            if w.ndim != 2 or b.shape != (w.shape[0],):
                raise DimensionError(f"layer {i}: weight {w.shape} / bias {b.shape}")
            if i and w.shape[1] != ws[i - 1].shape[0]:
                raise DimensionError(f"layer {i} input does not chain")
        if self.activation not in _ACTIVATIONS:
            raise ParameterError(f"unknown activation {self.activation!r}")
        object.__setattr__(self, "layer_weights", ws)
        object.__setattr__(self, "layer_biases", bs)

    @classmethod
    def random(cls, d_z, d_x, hidden=(64, 64), activation="tanh", seed=0):
        """He-style Gaussian initialization of every layer."""
        rng = np.random.default_rng(seed)
        sizes = [d_z, *hidden, d_x]
        ws, bs = [], []
        for n_in, n_out in zip(sizes[:-1], sizes[1:]):
            ws.append(rng.standard_normal((n_out, n_in)) * np.sqrt(2.0 / n_in))
            bs.append(0.1 * rng.standard_normal(n_out))
        return cls(tuple(ws), tuple(bs), activation)

    @property
    def d_z(self):
        return self.layer_weights[0].shape[1]

    @property
    def d_x(self):
        return self.layer_weights[-1].shape[0]

    def _forward(self, z):
        act, dact = _ACTIVATIONS[self.activation]
        h = z
        pre = []
        for w, b in zip(self.layer_weights[:-1], self.layer_biases[:-1]):
            a = h @ w.T + b
            pre.append(a)
            h = act(a)
        out = h @ self.layer_weights[-1].T + self.layer_biases[-1]
        return out, [dact(a) for a in pre]

    def __call__(self, z):
        z = _check_dim(z, self.d_z, "z")
        return self._forward(z)[0]

    def jvp(self, z, v):
        return generator_apply_jvp_vjp(self, z, v=v)[1]

    def vjp(self, z, w):
        return generator_apply_jvp_vjp(self, z, w=w)[2]

    def jacobian(self, z):
        _, slopes = self._forward(_check_dim(z, self.d_z, "z"))
        jac = self.layer_weights[0]
        for w, s in zip(self.layer_weights[1:], slopes):
            jac = w @ (s[:, None] * jac)
        return jac

    def save(self, stem):
        """Write ``<stem>.bin`` (weights then biases per layer) and ``<stem>.json``."""
        stem = Path(stem)
        arrays = []
        for w, b in zip(self.layer_weights, self.layer_biases):
            arrays += [w, b[None, :]]
        io.save_arrays(stem.with_suffix(".bin"), arrays)
        manifest = {
            "activation": self.activation,
            "layers": [{"rows": w.shape[0], "cols": w.shape[1]} for w in self.layer_weights],
        }
        io.write_json(stem.with_suffix(".json"), manifest)

    @classmethod
    def load(cls, stem):
        stem = Path(stem)
        arrays = io.load_arrays(stem.with_suffix(".bin"))
        manifest = json.loads(stem.with_suffix(".json").read_text())
        ws, bs = arrays[0::2], [b.ravel() for b in arrays[1::2]]
        if len(ws) != len(manifest["layers"]):
            raise DimensionError("manifest does not match stored layers")
        return cls(tuple(ws), tuple(bs), manifest["activation"])


def generator_apply_jvp_vjp(g: SyntheticGenerator, z, v=None, w=None):
    """Evaluate ``G(z)`` and optionally ``J_G(z) v`` and ``J_G(z)^T w``.

    Only single latent vectors are supported for the derivative products.
    """
    z = _check_dim(z, g.d_z, "z")
    if z.ndim != 1 and (v is not None or w is not None):
        raise DimensionError("jvp/vjp need a single latent vector")
    x, slopes = g._forward(z)
    jvp = vjp = None
    if v is not None:
        t = _check_dim(v, g.d_z, "v")
        for wt, s in zip(g.layer_weights[:-1], slopes):
            t = s * (wt @ t)
        jvp = g.layer_weights[-1] @ t
    if w is not None:
        t = g.layer_weights[-1].T @ _check_dim(w, g.d_x, "w")
        for wt, s in zip(reversed(g.layer_weights[:-1]), reversed(slopes)):
            t = wt.T @ (s * t)
        vjp = t
    return x, jvp, vjp
