import numpy as np
import pytest

from cli import validation_row
from errors import DomainError, EstimatorError
from estimators import energy_norm_series
from mpfa import ParameterPoint
from online import evaluate
from reduction import gram_schmidt
from report import ONLINE_COLUMNS
from sampling import test_set as sample_test

XI = ParameterPoint(2e-13, 3e-17)


@pytest.fixture(scope="module")
def full_basis(tiny_problem):
    energy = tiny_problem.energy
    return gram_schmidt(np.eye(energy.size), energy)


def test_full_basis_primal_is_exact(tiny_problem, full_basis):
    model = tiny_problem.build_model(full_basis, None)
    traj, _, outputs = tiny_problem.hf_solutions(XI)
    res = evaluate(model, XI)
    lifted = model.lift_primal(res.primal_states)
    scale = np.max(np.abs(traj.states))
    assert np.allclose(lifted, traj.states, rtol=0, atol=1e-8 * scale)
    assert res.output_plain == pytest.approx(outputs[-1], rel=1e-7, abs=1e-12)
    norm = energy_norm_series(tiny_problem.energy, traj.states[1:])
    assert res.estimates.delta_pr <= 1e-6 * norm
    # sem base dual não há certificado de saída
    assert np.isnan(res.estimates.delta_s)


def test_full_basis_goal_is_exact(tiny_problem, full_basis):
    model = tiny_problem.build_model(full_basis, full_basis)
    _, dual, outputs = tiny_problem.hf_solutions(XI)
    res = evaluate(model, XI)
    assert np.allclose(model.lift_dual(res.dual_states), dual.states, rtol=0, atol=1e-8 * np.max(np.abs(dual.states)))
    assert res.output == pytest.approx(outputs[-1], rel=1e-7, abs=1e-12)
    assert np.isfinite(res.estimates.delta_s_tilde)


def test_horizon_zero_has_zero_estimates(tiny_run):
    res = evaluate(tiny_run.archive.model, XI, horizon=0)
    assert res.horizon == 0
    assert res.estimates.delta_pr == 0.0
    assert res.estimates.delta_s_tilde == 0.0
    assert res.primal_states.shape[0] == 1


def test_horizon_out_of_range(tiny_run):
    model = tiny_run.archive.model
    with pytest.raises(ValueError):
        evaluate(model, XI, horizon=model.n_steps + 1)


def test_parameter_outside_ranges(tiny_run):
    with pytest.raises(DomainError):
        evaluate(tiny_run.archive.model, ParameterPoint(1e-15, 1e-16))


def test_online_view_has_no_full_arrays(tiny_run):
    model = tiny_run.archive.model
    view = model.online_view()
    assert view.Z_pr is None and view.Z_du is None
    with pytest.raises(EstimatorError):
        view.lift_primal(np.zeros((1, model.n_pr)))
    a, b = evaluate(model, XI), evaluate(view, XI)
    assert a.output == b.output
    assert a.estimates.delta_s_tilde == b.estimates.delta_s_tilde


def test_record_matches_online_columns(tiny_run):
    rec = evaluate(tiny_run.archive.model, XI).record()
    assert set(rec) <= set(ONLINE_COLUMNS)
    assert {"kappa1", "kappa2", "output", "delta_pr", "delta_s_tilde"} <= set(rec)


def test_truncated_model(tiny_run):
    model = tiny_run.archive.model
    small = model.truncated(1, min(1, model.n_du))
    assert small.n_pr == 1
    assert small.Z_pr.shape[1] == 1
    res = evaluate(small, XI)
    assert np.isfinite(res.estimates.delta_pr)
    with pytest.raises(ValueError):
        model.truncated(model.n_pr + 1, model.n_du)


def test_estimators_bound_true_errors(tiny_run, tiny_problem, tiny_case):
    model = tiny_run.archive.model
    points = list(tiny_run.training) + sample_test(tiny_case.ranges, 4, seed=99)
    for xi in points:
        row = validation_row(tiny_problem, model, xi, "check", 1)
        assert row["reliable"], row
