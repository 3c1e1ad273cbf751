from unittest import mock

import numpy as np
import pytest

from errors import DomainError, ModelError
from mpfa import ParameterPoint
from optimization import INFEASIBLE, UNBOUNDED, LpResult
from sampling import test_set as sample_test, training_set
from scm import LP_TOL, ExactCoercivity, ScmModel, _scaled_lp, constraint_box, scm_train

RTOL = 1e-8


@pytest.fixture(scope="module")
def scm_setup(tiny_run, tiny_case):
    archive = tiny_run.archive
    affine, energy = archive.affine, archive.energy
    training = training_set(tiny_case.ranges, 8, seed=5)
    model = scm_train(
        affine.sym_terms,
        affine.theta,
        energy,
        training,
        tiny_case.ranges,
        m1=3,
        m2=3,
        tol=1e-3,
        max_iterations=8,
    )
    oracle = ExactCoercivity(affine.sym_terms, affine.theta, energy, tiny_case.ranges)
    return model, oracle, training


def test_bounds_bracket_exact_coercivity(scm_setup, tiny_case):
    model, oracle, training = scm_setup
    for xi in list(training) + sample_test(tiny_case.ranges, 4, seed=5):
        alpha = oracle.value(xi)
        lb, ub = model.lower_bound(xi), model.upper_bound(xi)
        assert alpha > 0
        assert lb >= 0.0
        assert lb <= alpha * (1 + RTOL)
        assert ub >= alpha * (1 - RTOL)


def test_upper_bound_tight_at_selected_points(scm_setup):
    model, _, training = scm_setup
    for j, alpha in zip(model.selected, model.alphas):
        assert model.upper_bound(training[j]) == pytest.approx(alpha, rel=1e-8)


def test_first_selection_is_nearest_to_midpoint(scm_setup, tiny_case):
    model, _, training = scm_setup
    target = tiny_case.ranges.log_midpoint().log10()
    dist = [np.linalg.norm(x.log10() - target) for x in training]
    assert model.selected[0] == int(np.argmin(dist))
    assert len(set(model.selected)) == model.n_selected


def test_box_contains_rayleigh_quotients(tiny_run):
    archive = tiny_run.archive
    box = constraint_box(archive.affine.sym_terms, archive.energy)
    rng = np.random.default_rng(2)
    for _ in range(5):
        y = rng.standard_normal(archive.energy.size)
        y /= archive.energy.norm(y)
        w = np.array([y @ (A @ y) for A in archive.affine.sym_terms])
        span = np.maximum(np.abs(box).max(axis=1), 1e-300)
        assert np.all(w >= box[:, 0] - 1e-9 * span)
        assert np.all(w <= box[:, 1] + 1e-9 * span)


def test_parts_restore_cached_lower_bounds(scm_setup):
    model, _, training = scm_setup
    restored = ScmModel.from_parts(model.to_parts(), model.theta)
    for xi in training[:3]:
        assert restored.lower_bound(xi) == pytest.approx(model.lower_bound(xi))


def test_outside_range_rejected(scm_setup):
    model, oracle, _ = scm_setup
    with pytest.raises(DomainError):
        model.lower_bound(ParameterPoint(1e-10, 1e-16))
    with pytest.raises(DomainError):
        oracle.value(ParameterPoint(1e-10, 1e-16))


def test_bounds_bracket_on_fresh_points(scm_setup, tiny_case):
    model, oracle, _ = scm_setup
    for xi in sample_test(tiny_case.ranges, 10, seed=17):
        alpha = oracle.value(xi)
        assert 0.0 <= model.lower_bound(xi) <= alpha * (1 + RTOL)
        assert model.upper_bound(xi) >= alpha * (1 - RTOL)


def test_gap_history_is_non_increasing(tiny_run, tiny_case):
    affine, energy = tiny_run.archive.affine, tiny_run.archive.energy
    training = training_set(tiny_case.ranges, 8, seed=23)
    model = scm_train(affine.sym_terms, affine.theta, energy, training, tiny_case.ranges, m1=2, m2=2, tol=1e-12, max_iterations=5)
    history = np.array(model.eta_history)
    assert history.size == model.n_selected
    assert np.all(np.diff(history) <= 1e-12)


def test_unbounded_lp_falls_back_to_box():
    box = np.array([[1.0, 3.0], [-2.0, 4.0]])
    theta = np.array([2.0, -1.0])
    rows, rhs = np.array([[1.0, 1.0]]), np.array([0.5])
    with mock.patch("scm.solve_lp", return_value=LpResult(UNBOUNDED, -np.inf, None)):
        assert _scaled_lp(theta, rows, rhs, box, LP_TOL) == pytest.approx(-2.0)
    with mock.patch("scm.solve_lp", return_value=LpResult(INFEASIBLE, np.nan, None)):
        with pytest.raises(ModelError):
            _scaled_lp(theta, rows, rhs, box, LP_TOL)
