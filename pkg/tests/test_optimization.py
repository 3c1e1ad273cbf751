from unittest import mock

import numpy as np
import pytest

try:
    from ortools.linear_solver import pywraplp  # noqa: F401

    ORTOOLS_AVAILABLE = True
except Exception:
    ORTOOLS_AVAILABLE = False

opt = pytest.importorskip("optimization")

COST = [1.0, 1.0]
ROWS = np.array([[1.0, 2.0], [3.0, 1.0]])
RHS = [2.0, 3.0]
BOUNDS = np.array([[0.0, 10.0], [0.0, 10.0]])


def _check_optimum(res):
    assert res.ok
    assert res.objective == pytest.approx(1.4, abs=1e-8)
    assert np.allclose(res.x, [0.8, 0.6], atol=1e-8)


@pytest.mark.skipif(not ORTOOLS_AVAILABLE, reason="ortools ausente")
def test_glop_optimum():
    _check_optimum(opt.solve_lp(COST, ROWS, RHS, BOUNDS, backend="glop"))


def test_highs_optimum():
    _check_optimum(opt.solve_lp(COST, ROWS, RHS, BOUNDS, backend="highs"))


@pytest.mark.parametrize("backend", ["glop", "highs"])
def test_infeasible(backend):
    if backend == "glop" and not ORTOOLS_AVAILABLE:
        pytest.skip("ortools ausente")
    res = opt.solve_lp([1.0], np.array([[1.0]]), [5.0], np.array([[0.0, 1.0]]), backend=backend)
    assert res.status == opt.INFEASIBLE
    assert not res.ok


def test_no_constraints_hits_lower_bounds():
    res = opt.solve_lp(COST, np.zeros((0, 2)), [], np.array([[1.0, 2.0], [-1.0, 3.0]]), backend="highs")
    assert res.ok
    assert res.objective == pytest.approx(0.0)


def test_fallback_without_ortools(caplog):
    with mock.patch.object(opt, "pywraplp", None):
        res = opt.solve_lp(COST, ROWS, RHS, BOUNDS, backend="glop")
    _check_optimum(res)
    assert "OR-Tools ausente" in caplog.text
