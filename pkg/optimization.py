import logging
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

try:  # OR-Tools é o solver padrão; SciPy/HiGHS cobre a ausência
    from ortools.linear_solver import pywraplp
except Exception:  # pragma: no cover - biblioteca ausente
    pywraplp = None  # type: ignore

from scipy.optimize import linprog

log = logging.getLogger(__name__)

OPTIMAL, INFEASIBLE, UNBOUNDED, FAILED = "optimal", "infeasible", "unbounded", "failed"


@dataclass(frozen=True)
class LpResult:
    status: str
    objective: float
    x: Optional[np.ndarray]

    @property
    def ok(self) -> bool:
        return self.status == OPTIMAL


def solve_lp(
    cost: Sequence[float],
    rows: np.ndarray,
    rhs: Sequence[float],
    bounds: np.ndarray,
    tol: float = 1e-10,
    backend: str = "glop",
) -> LpResult:
    """Resolve ``min cᵀw`` sujeito a ``rows @ w >= rhs`` e ``lo <= w <= hi``.

    Parameters
    ----------
    cost:
        Coeficientes da função objetivo.
    rows:
        Matriz ``(m, n)`` das restrições de desigualdade.
    rhs:
        Lados direitos das restrições.
    bounds:
        Matriz ``(n, 2)`` com os limites das variáveis.
    tol:
        Tolerância primal e dual.
    backend:
        ``"glop"`` (OR-Tools) ou ``"highs"`` (SciPy).

    Returns
    -------
    LpResult
        Status, valor ótimo e solução.
    """

    cost = np.asarray(cost, dtype=float)
    rows = np.asarray(rows, dtype=float).reshape(-1, cost.size)
    rhs = np.asarray(rhs, dtype=float)
    bounds = np.asarray(bounds, dtype=float)
    if backend == "glop" and pywraplp is not None:
        return _solve_glop(cost, rows, rhs, bounds, tol)
    if backend == "glop":
        log.warning("OR-Tools ausente, usando HiGHS do SciPy")
    return _solve_highs(cost, rows, rhs, bounds)


def _solve_glop(cost, rows, rhs, bounds, tol) -> LpResult:
    solver = pywraplp.Solver.CreateSolver("GLOP")
    if solver is None:  # pragma: no cover - build sem GLOP
        return _solve_highs(cost, rows, rhs, bounds)
    w = [solver.NumVar(float(lo), float(hi), f"w{d}") for d, (lo, hi) in enumerate(bounds)]
    for i, row in enumerate(rows):
        ct = solver.Constraint(float(rhs[i]), solver.infinity(), f"c{i}")
        for d, coef in enumerate(row):
            if coef != 0.0:
                ct.SetCoefficient(w[d], float(coef))
    objective = solver.Objective()
    for d, coef in enumerate(cost):
        objective.SetCoefficient(w[d], float(coef))
    objective.SetMinimization()

    params = pywraplp.MPSolverParameters()
    params.SetDoubleParam(params.PRIMAL_TOLERANCE, tol)
    params.SetDoubleParam(params.DUAL_TOLERANCE, tol)
    status = solver.Solve(params)
    if status == pywraplp.Solver.OPTIMAL:
        x = np.array([v.solution_value() for v in w])
        return LpResult(OPTIMAL, float(objective.Value()), x)
    if status == pywraplp.Solver.INFEASIBLE:
        return LpResult(INFEASIBLE, np.nan, None)
    if status == pywraplp.Solver.UNBOUNDED:
        return LpResult(UNBOUNDED, -np.inf, None)
    log.error(f"GLOP terminou com status {status}")
    return LpResult(FAILED, np.nan, None)


def _solve_highs(cost, rows, rhs, bounds) -> LpResult:
    res = linprog(
        cost,
        A_ub=-rows if rows.size else None,
        b_ub=-rhs if rows.size else None,
        bounds=[tuple(b) for b in bounds],
        method="highs",
    )
    if res.status == 0:
        return LpResult(OPTIMAL, float(res.fun), np.asarray(res.x))
    if res.status == 2:
        return LpResult(INFEASIBLE, np.nan, None)
    if res.status == 3:
        return LpResult(UNBOUNDED, -np.inf, None)
    log.error(f"HiGHS falhou: {res.message}")
    return LpResult(FAILED, np.nan, None)


__all__ = ["OPTIMAL", "INFEASIBLE", "UNBOUNDED", "FAILED", "LpResult", "solve_lp"]
