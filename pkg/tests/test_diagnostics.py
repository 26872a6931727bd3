import numpy as np
import pytest

from proximh.diagnostics import (
    HIST_BINS,
    checkpoints,
    compute_diagnostics,
    mode_split,
    projection_histogram,
    split_rhat,
)
from proximh.errors import ParameterError


def test_checkpoints():
    pts = checkpoints(1000)
    assert pts[0] == 10 and pts[-1] == 1000 and np.all(np.diff(pts) > 0)
    assert list(checkpoints(5)) == [5]


def test_running_errors_exact():
    states = np.array([[1.0, 2.0], [3.0, 2.0]] * 10)
    rep = compute_diagnostics(states, 0.5, np.array([2.0, 2.0]), np.array([5.0, 4.0]), w=np.array([1.0, 0.0]))
    assert rep.final_mean_error == 0.0 and rep.final_second_moment_error == 0.0
    assert rep.projection_histogram.sum() == 20 and rep.histogram_edges.size == HIST_BINS + 1


def test_reference_must_be_nonzero():
    with pytest.raises(ParameterError):
        compute_diagnostics(np.ones((20, 2)), 1.0, np.zeros(2), np.ones(2))


def test_histogram_clips_into_end_bins():
    counts, edges = projection_histogram(np.array([-10.0, 0.0, 10.0]))
    assert counts[0] == 1 and counts[-1] == 1 and counts.sum() == 3


def test_mode_split():
    assert mode_split(np.array([-1.0, 2.0, 3.0, -0.5])) == 0.5


def test_split_rhat(rng):
    mixed = rng.standard_normal((4, 2000, 3))
    assert split_rhat(mixed) < 1.01
    stuck = mixed + np.arange(4)[:, None, None] * 5
    assert split_rhat(stuck) > 2
    with pytest.raises(ParameterError):
        split_rhat(np.zeros((2, 3)))
