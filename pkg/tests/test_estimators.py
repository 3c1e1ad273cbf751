import numpy as np
import pytest
import scipy.sparse as sp

from energy import EnergyMatrix
from errors import EstimatorError
from estimators import (
    EstimateBundle,
    comparison_estimator,
    delta_pr,
    delta_s,
    delta_s_tilde,
    dual_coefficients,
    effectivity,
    is_reliable,
    primal_coefficients,
    residual_norm_squared_naive,
    residual_norms,
    residual_norms_online,
    residual_table_from_family,
    true_errors,
)
from mpfa import ParameterPoint
from reduction import PRIMAL

XI = ParameterPoint(4e-13, 2e-16)


def test_delta_formulas():
    norms = np.array([3.0, 4.0])
    assert delta_pr(norms, 2.0, 0.5, 10.0, 1.0) == pytest.approx(np.sqrt(11.0 * 25.0))
    assert delta_s(norms, 2.0, 0.5) == pytest.approx(5.0)
    assert delta_s_tilde(5.0, np.array([1.0, -2.0]), 0.5) == pytest.approx(6.5)


def test_non_positive_coercivity_rejected():
    with pytest.raises(EstimatorError):
        delta_pr(np.ones(2), 0.0, 1.0, 1.0, 1.0)


def test_comparison_variants():
    primal = np.array([1.0, 2.0])
    dual = np.array([2.0])
    assert comparison_estimator("gho2", primal, 0.5, 2.0) == pytest.approx(np.sqrt(20.0))
    qoi = comparison_estimator("ghoqoi1", primal, 0.5, 2.0, dual_norms=dual)
    assert qoi == pytest.approx(np.sqrt(20.0 * 16.0))
    new = comparison_estimator("ghonew2", primal, 0.5, 2.0, dual_norms=dual, pairing=np.array([-1.0]))
    assert new == pytest.approx(qoi + 2.0)
    with pytest.raises(EstimatorError):
        comparison_estimator("ghoqoi2", primal, 0.5, 2.0)
    with pytest.raises(ValueError):
        comparison_estimator("gho3", primal, 0.5, 2.0, dual_norms=dual)


def test_effectivity_and_reliability():
    value, exact = effectivity(1.0, 0.0)
    assert exact and np.isnan(value)
    assert effectivity(3.0, 1.5) == (2.0, False)
    assert is_reliable(1.0, 1.0)
    assert not is_reliable(1.0, 1.1)
    assert is_reliable(0.0, 1e-11, scale=1.0)


def test_bundle_lookup_and_check():
    bundle = EstimateBundle(1, 1.0, 2.0, 3.0, 4.0, np.ones(1), np.ones(1), 1.0, 1.0, {"gho2": 5.0})
    assert bundle.value("delta_s") == 3.0
    assert bundle.value("gho2") == 5.0
    with pytest.raises(EstimatorError):
        bundle.value("ghonew1")
    bundle.check()
    bundle.delta_du = float("nan")
    with pytest.raises(EstimatorError):
        bundle.check()


def test_true_errors_vanish_for_identical_trajectories(tiny_run):
    energy = tiny_run.archive.energy
    states = np.random.default_rng(0).standard_normal((4, energy.size))
    err = true_errors(energy, states, states, states, states, 2.0, 2.0, 2.5)
    assert err.primal == 0.0
    assert err.dual == 0.0
    assert err.output_corrected == 0.0
    assert err.output_plain == pytest.approx(0.5)
    assert err.primal_norm > 0


def _dual_norm(energy, r):
    return np.sqrt(r @ energy.solve(r))


def test_primal_residual_norms_match_direct(tiny_run, tiny_case):
    archive = tiny_run.archive
    model, affine, energy = archive.model, archive.affine, archive.energy
    Z, dt = model.Z_pr, tiny_case.dt
    theta = affine.theta(XI)
    states = np.random.default_rng(1).standard_normal((3, Z.shape[1]))
    A, b = affine.matrix(theta), affine.load(theta)
    expected = []
    for n in range(2):
        r = affine.mass @ (Z @ (states[n + 1] - states[n])) / dt + A @ (Z @ states[n + 1]) - b
        expected.append(_dual_norm(energy, r))
    got = residual_norms_online(model.primal_table, states, theta, dt)
    assert np.allclose(got, expected, rtol=1e-8)


def test_dual_residual_norms_match_direct(tiny_run, tiny_case):
    archive = tiny_run.archive
    model, affine, energy = archive.model, archive.affine, archive.energy
    if model.dual_table is None:
        pytest.skip("modelo sem base dual")
    Z, dt = model.Z_du, tiny_case.dt
    theta = affine.theta(XI)
    states = np.random.default_rng(2).standard_normal((3, Z.shape[1]))
    A = affine.matrix(theta)
    expected = []
    for m in range(2):
        r = affine.mass @ (Z @ (states[m] - states[m + 1])) / dt + A.T @ (Z @ states[m])
        expected.append(_dual_norm(energy, r))
    got = residual_norms_online(model.dual_table, states, theta, dt)
    assert np.allclose(got, expected, rtol=1e-8)


def test_stable_and_naive_norms_agree(tiny_run, tiny_case):
    table = tiny_run.archive.model.primal_table
    theta = tiny_run.archive.affine.theta(XI)
    states = np.random.default_rng(3).standard_normal((4, table.n_basis))
    coeffs = primal_coefficients(states, theta, tiny_case.dt)
    stable = residual_norms(table, coeffs)
    naive = residual_norm_squared_naive(table, coeffs)
    assert np.allclose(stable**2, naive, rtol=1e-8)


def test_coefficient_layouts():
    states = np.array([[1.0], [3.0], [6.0]])
    theta = np.array([2.0, 5.0])
    primal = primal_coefficients(states, theta, 0.5)
    assert primal.shape == (2, 1 + 2 + 2)
    assert np.allclose(primal[0], [4.0, 6.0, 15.0, -2.0, -5.0])
    dual = dual_coefficients(states, theta, 0.5)
    assert np.allclose(dual[1], [-6.0, 6.0, 15.0])


def test_stable_norm_survives_cancellation():
    # r̂ = (1, -1) sobre η̂ = (e1, e1 + δ e2): resíduo de norma δ
    delta = 1e-9
    family = np.zeros((4, 2))
    family[0] = 1.0
    family[1, 1] = delta
    energy = EnergyMatrix.from_matrix(sp.identity(4, format="csr"), 1.0)
    table = residual_table_from_family(family, energy, PRIMAL, 1, 0)
    coeffs = np.array([[1.0, -1.0]])

    stable = residual_norms(table, coeffs)
    naive = residual_norm_squared_naive(table, coeffs)
    assert np.all(stable >= 0)
    assert stable[0] == pytest.approx(delta, rel=1e-12)
    assert stable[0] == pytest.approx(_dual_norm(energy, family @ coeffs[0]), rel=1e-6)
    assert abs(naive[0] - delta**2) >= 0.5 * delta**2
