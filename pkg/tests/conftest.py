import numpy as np
import pytest

# Smallest configs that still exercise every code path of each experiment.
TINY = {
    "kl_sweep": {"d": 20, "snr_values": [1.0, 3.0], "error_values": [0.0, 0.1], "ratio_values": [0.2, 0.5],
                 "dim_values": [20, 40], "mc_points": 2, "mc_samples": 500},
    "bimodal": {"d": 10, "d_y": 5, "pool_size": 200, "burn_in": 20, "thinning": 2, "steps": 500, "trials": 1,
                "reference_steps": 500, "reference_thin": 2, "strict_reference": False, "mala_steps": 200},
    "beta_sweep": {"d": 10, "d_y": 5, "pool_size": 200, "burn_in": 20, "thinning": 2, "steps": 500,
                   "reference_steps": 500, "reference_thin": 2, "strict_reference": False, "beta_points": 4},
    "helmholtz_linear": {"fine_n": 8, "coarse_n": 6, "param_n": 3, "d_y": 8, "steps": 300, "trials": 1},
    "helmholtz_nonlinear": {"fine_n": 8, "coarse_n": 6, "param_n": 3, "d_y": 8, "pool_size": 20, "burn_in": 4,
                            "thinning": 2, "steps": 100, "reference_steps": 60, "reference_thin": 2},
    "generator_nonlinear": {"d_z": 4, "d_x": 10, "d_y": 5, "hidden": [6], "pool_size": 60, "burn_in": 10,
                            "thinning": 2, "pool_chains": 2, "steps": 300, "trials": 1, "reference_steps": 200,
                            "reference_chains": 2, "reference_thin": 2, "logdet_samples": 10, "logdet_pairs": 30},
    "logdet_diag": {"d_z": 4, "d_x": 10, "d_y": 5, "hidden": [6], "samples": 10, "burn_in": 10, "thinning": 2,
                    "pairs": 30},
}


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def fd_gradient(f, x, step=1e-5):
    g = np.zeros_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = step
        g[i] = (f(x + e) - f(x - e)) / (2 * step)
    return g


# One PASS/FAIL line per acceptance criterion, shown after the run.
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
