"""TOML experiment configuration: defaults, merging and validation.

A config file holds top-level keys shared by all experiments plus an optional
table named after the experiment::

    experiment = "bimodal"
    seed = 3

    [bimodal]
    d = 50
    d_y = 20
"""

from __future__ import annotations

import copy
import math
import sys
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .errors import ConfigError

EXPERIMENTS = (
    "kl_sweep",
    "bimodal",
    "helmholtz_linear",
    "generator_nonlinear",
    "helmholtz_nonlinear",
    "beta_sweep",
    "logdet_diag",
)

COMMON = {
    "seed": 0,
    "noise_ratio": 0.175,
    "noise_band": [0.15, 0.20],
    "beta_factor": 1.0,
}

_BIMODAL_BASE = {
    "test": "I",
    "d": 50,
    "d_y": 20,
    "alpha_minus": 0.7,
    "alpha_plus": 1.3,
    "epsilon": 0.02,
    "rank": 5,
    "threshold": 0.05,
    "c": 2.0,
    "tau": 0.3,
    "pool_size": 5000,
    "burn_in": 1000,
    "thinning": 10,
    "pool_chains": 4,
    "steps": 20000,
    "trials": 5,
    "reference_steps": 150000,
    "reference_chains": 4,
    "reference_thin": 10,
    "rhat_max": 1.01,
    "strict_reference": True,
    "mala_steps": 20000,
}

DEFAULTS = {
    "kl_sweep": {
        "d": 100,
        "log10_snr": 2.5,
        "rel_error": 0.06,
        "obs_ratio": 0.2,
        "decay": 2.0,
        "snr_values": [0.5, 1.0, 1.5, 2.0, 2.5, 3.0, 3.5, 4.0],
        "error_values": [0.02, 0.05, 0.08, 0.11, 0.14, 0.17, 0.21],
        "ratio_values": [0.05, 0.1, 0.2, 0.3, 0.4, 0.5],
        "dim_values": [100, 200, 300, 500],
        "max_dim": 500,
        "mc_points": 3,
        "mc_samples": 10000,
    },
    "bimodal": dict(_BIMODAL_BASE),
    "beta_sweep": dict(
        _BIMODAL_BASE,
        beta_min=0.01,
        beta_max=100.0,
        beta_points=17,
        trials=1,
        mala_steps=0,
    ),
    "helmholtz_linear": {
        "fine_n": 32,
        "coarse_n": 16,
        "param_n": 8,
        "k_wave": 2.4 * math.pi,
        "d_y": 48,
        "source": 0,
        "steps": 20000,
        "trials": 3,
        "gmres_tol": 1e-10,
        "gmres_restart": 50,
        "gmres_max_iter": 2000,
        "compare_unpreconditioned": True,
    },
    "helmholtz_nonlinear": {
        "fine_n": 32,
        "coarse_n": 16,
        "param_n": 4,
        "k_wave": 3.4 * math.pi,
        "n_sources": 2,
        "d_y": 48,
        "contrast": 0.3,
        "tv_epsilon": 0.05,
        "tv_weight": 1.0,
        "pool_size": 500,
        "burn_in": 100,
        "thinning": 5,
        "steps": 2000,
        "trials": 1,
        "reference_steps": 5000,
        "reference_chains": 4,
        "reference_thin": 5,
        "rhat_max": 1.01,
        "strict_reference": False,
        "gmres_tol": 1e-10,
        "gmres_restart": 50,
        "gmres_max_iter": 2000,
        "cg_tol": 1e-8,
        "linear_solver": "direct",
        "compare_unpreconditioned": True,
    },
    "generator_nonlinear": {
        "d_z": 16,
        "d_x": 64,
        "d_y": 24,
        "hidden": [32],
        "delta": 0.06,
        "pool_size": 5000,
        "burn_in": 500,
        "thinning": 5,
        "pool_chains": 4,
        "steps": 20000,
        "trials": 3,
        "reference_steps": 80000,
        "reference_chains": 4,
        "reference_thin": 5,
        "rhat_max": 1.01,
        "strict_reference": False,
        "logdet_samples": 200,
        "logdet_pairs": 2000,
    },
    "logdet_diag": {
        "d_z": 16,
        "d_x": 64,
        "d_y": 24,
        "hidden": [32],
        "deltas": [0.01, 0.05, 0.1],
        "samples": 200,
        "burn_in": 500,
        "thinning": 5,
        "pairs": 2000,
    },
}

_POSITIVE_INT = {
    "d", "d_y", "rank", "pool_size", "thinning", "pool_chains", "steps", "trials",
    "reference_steps", "reference_chains", "reference_thin", "fine_n", "coarse_n", "param_n",
    "n_sources", "d_z", "d_x", "samples", "pairs", "logdet_samples", "logdet_pairs",
    "gmres_restart", "gmres_max_iter", "beta_points", "mc_points", "mc_samples", "max_dim",
}
_NONNEG_INT = {"burn_in", "mala_steps", "source"}
_POSITIVE_REAL = {
    "noise_ratio", "beta_factor", "alpha_minus", "alpha_plus", "epsilon", "threshold", "c", "tau",
    "k_wave", "tv_epsilon", "tv_weight", "gmres_tol", "cg_tol", "beta_min", "beta_max", "rhat_max",
    "decay", "obs_ratio",
}


def _check_number(key, value, integer, lower_open):
    ok_type = isinstance(value, int) if integer else isinstance(value, (int, float))
    if isinstance(value, bool) or not ok_type:
        raise ConfigError(f"{key} must be {'an integer' if integer else 'a number'}, got {value!r}")
    if lower_open and not value > 0:
        raise ConfigError(f"{key} must be positive, got {value!r}")
    if not lower_open and value < 0:
        raise ConfigError(f"{key} must be nonnegative, got {value!r}")


def validate(cfg):
    """Raise ConfigError on any invalid entry; returns ``cfg`` unchanged."""
    exp = cfg.get("experiment")
    if exp not in EXPERIMENTS:
        raise ConfigError(f"experiment must be one of {EXPERIMENTS}, got {exp!r}")
    seed = cfg["seed"]
    if isinstance(seed, bool) or not isinstance(seed, int) or seed < 0:
        raise ConfigError("seed must be a nonnegative integer")
    band = cfg["noise_band"]
    if not (isinstance(band, list) and len(band) == 2 and 0 < band[0] < band[1] < 1):
        raise ConfigError("noise_band must be [lo, hi] with 0 < lo < hi < 1")
    if not band[0] <= cfg["noise_ratio"] <= band[1]:
        raise ConfigError("noise_ratio must lie inside noise_band")
    _check_number("beta_factor", cfg["beta_factor"], False, True)
    params = cfg[exp]
    for key, value in params.items():
        if key in _POSITIVE_INT:
            _check_number(key, value, True, True)
        elif key in _NONNEG_INT:
            _check_number(key, value, True, False)
        elif key in _POSITIVE_REAL:
            _check_number(key, value, False, True)
    if exp in ("bimodal", "beta_sweep"):
        if params["test"] not in ("I", "II", "III"):
            raise ConfigError("test must be one of I, II, III")
        if params["d_y"] > params["d"]:
            raise ConfigError("d_y must not exceed d")
        if not 0 < params["alpha_minus"] <= 1 <= params["alpha_plus"]:
            raise ConfigError("need 0 < alpha_minus <= 1 <= alpha_plus")
    if exp == "beta_sweep" and not params["beta_min"] < params["beta_max"]:
        raise ConfigError("beta_min must be below beta_max")
    if exp == "kl_sweep":
        if not 0 < params["obs_ratio"] <= 1 or not 0 <= params["rel_error"] < 1:
            raise ConfigError("obs_ratio must lie in (0, 1] and rel_error in [0, 1)")
        if any(not 0 < r <= 1 for r in params["ratio_values"]):
            raise ConfigError("ratio_values must lie in (0, 1]")
        if any(not 0 <= e < 1 for e in params["error_values"]):
            raise ConfigError("error_values must lie in [0, 1)")
    if exp in ("helmholtz_linear", "helmholtz_nonlinear"):
        if not params["param_n"] <= params["coarse_n"] <= params["fine_n"] <= 64:
            raise ConfigError("need param_n <= coarse_n <= fine_n <= 64")
        if params["d_y"] > params["fine_n"] ** 2:
            raise ConfigError("d_y exceeds the number of fine-grid nodes")
    if params.get("linear_solver", "gmres") not in ("gmres", "direct"):
        raise ConfigError("linear_solver must be 'gmres' or 'direct'")
    if exp in ("generator_nonlinear", "logdet_diag"):
        deltas = params.get("deltas", [params.get("delta", 0.0)])
        if any(not 0 <= dlt < 1 for dlt in deltas):
            raise ConfigError("delta must lie in [0, 1)")
        if params["d_y"] > params["d_x"]:
            raise ConfigError("d_y must not exceed d_x")
    return cfg


def resolve(raw, experiment=None, seed=None):
    """Merge ``raw`` over the defaults; CLI overrides win. Unknown keys are errors."""
    raw = copy.deepcopy(dict(raw))
    exp = experiment or raw.get("experiment")
    if exp not in EXPERIMENTS:
        raise ConfigError(f"experiment must be one of {EXPERIMENTS}, got {exp!r}")
    if raw.get("experiment", exp) != exp:
        raise ConfigError(f"config is for {raw['experiment']!r}, not {exp!r}")
    cfg = dict(COMMON, experiment=exp)
    section = copy.deepcopy(DEFAULTS[exp])
    for key, value in raw.items():
        if key == "experiment":
            continue
        if key in COMMON:
            cfg[key] = value
        elif key == exp:
            if not isinstance(value, dict):
                raise ConfigError(f"[{exp}] must be a table")
            for sub, sub_value in value.items():
                if sub not in section:
                    raise ConfigError(f"unknown key {exp}.{sub}")
                section[sub] = sub_value
        elif key in EXPERIMENTS:
            continue  # tables for other experiments are allowed and ignored
        else:
            raise ConfigError(f"unknown top-level key {key!r}")
    if seed is not None:
        cfg["seed"] = int(seed)
    cfg[exp] = section
    return validate(cfg)


def load(path, experiment=None, seed=None):
    """Read a TOML file and resolve it."""
    try:
        with open(Path(path), "rb") as fh:
            raw = tomllib.load(fh)
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"invalid TOML in {path}: {exc}") from exc
    return resolve(raw, experiment, seed)
