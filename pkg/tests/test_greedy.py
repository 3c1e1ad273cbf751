from dataclasses import replace

import numpy as np
import pytest

from greedy import (
    CONVERGED,
    MAX_DIMENSION,
    MAX_ROUNDS,
    STAGNATED,
    needs_variant,
    pod_greedy_goal,
    pod_greedy_primal,
)
from hf import dual_terminal
from mpfa import ParameterPoint
from report import GREEDY_COLUMNS
from reduction import projection_error
from sampling import nearest

STOPS = (CONVERGED, MAX_DIMENSION, STAGNATED, MAX_ROUNDS)


@pytest.fixture(scope="module")
def problem(tiny_problem, tiny_run):
    return replace(tiny_problem, training=list(tiny_run.training))


def test_goal_run_diagnostics(tiny_run):
    result = tiny_run.greedy
    assert result.stop_reason in STOPS
    assert result.diagnostics
    assert set(result.diagnostics[0]) <= set(GREEDY_COLUMNS)
    assert result.diagnostics[-1]["stop"] == result.stop_reason
    assert len(result.model.rounds) == len(result.diagnostics)
    assert result.model.n_pr <= 2
    assert result.model.goal


def test_first_parameter_nearest_to_midpoint(tiny_run, tiny_case):
    training = tiny_run.training
    j = int(nearest(training, tiny_case.ranges.log_midpoint())[0])
    first = tiny_run.greedy.diagnostics[0]
    assert (first["kappa1"], first["kappa2"]) == (training[j].kappa1, training[j].kappa2)


def test_bases_are_orthonormal(tiny_run):
    energy = tiny_run.archive.energy
    assert tiny_run.greedy.primal.orthonormality_error(energy) < 1e-10
    assert tiny_run.greedy.dual.orthonormality_error(energy) < 1e-10


def test_initial_and_terminal_states_in_span(tiny_run, problem):
    energy = tiny_run.archive.energy
    model = tiny_run.greedy.model
    p0 = problem.p0
    assert np.max(np.abs(projection_error(model.Z_pr, energy, p0))) <= 1e-8 * np.max(np.abs(p0))
    op = problem.affine.operator(ParameterPoint(5e-13, 4e-16))
    psi = dual_terminal(op)
    assert np.max(np.abs(projection_error(model.Z_du, energy, psi))) <= 1e-8 * np.max(np.abs(psi))


def test_primal_greedy(problem):
    result = pod_greedy_primal(problem, max_dimension=3, tol=1e-10, estimator="delta_pr")
    assert result.dual is None
    assert not result.model.goal
    assert result.model.n_pr <= 3
    assert result.stop_reason in STOPS
    maxima = [row["max_estimator"] for row in result.diagnostics]
    assert all(np.isfinite(maxima))


def test_goal_greedy_tracks_true_errors(problem):
    result = pod_greedy_goal(problem, max_dimension=2, tol=1e-10, estimator="delta_s", track_true_errors=True)
    for row in result.diagnostics:
        assert np.isfinite(row["max_true_error"])
        assert row["max_true_error"] >= 0
        assert np.isfinite(row["max_output_error"])


def test_estimator_family_checked(problem):
    with pytest.raises(ValueError):
        pod_greedy_primal(problem, max_dimension=2, tol=1e-8, estimator="delta_s")
    with pytest.raises(ValueError):
        pod_greedy_goal(problem, max_dimension=2, tol=1e-8, estimator="gho2")


def test_empty_training_rejected(tiny_problem):
    with pytest.raises(ValueError):
        pod_greedy_primal(tiny_problem, max_dimension=2, tol=1e-8)


def test_needs_variant():
    assert needs_variant("gho1")
    assert needs_variant("ghonew1")
    assert not needs_variant("gho2")
    assert not needs_variant("delta_s_tilde")


def test_bases_are_nested_and_capped(problem):
    runs = {
        cap: pod_greedy_goal(problem, max_dimension=cap, tol=1e-300, ric=1e-6, estimator="delta_s")
        for cap in (3, 4)
    }
    for cap, result in runs.items():
        assert result.stop_reason == MAX_DIMENSION
        dims = [(r["n_pr"], r["n_du"]) for r in result.model.rounds]
        assert all(n_pr <= cap for n_pr, _ in dims)
        assert all(b[0] >= a[0] and b[1] >= a[1] for a, b in zip(dims, dims[1:]))
        assert sum(result.primal.increments) == result.primal.dimension
        assert result.model.n_pr == cap

    small, big = runs[3], runs[4]
    assert np.allclose(small.primal.Z, big.primal.Z[:, : small.primal.dimension])
    assert np.allclose(small.dual.Z, big.dual.Z[:, : small.dual.dimension])
