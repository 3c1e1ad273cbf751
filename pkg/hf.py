import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from errors import SolverError
from mesh import Mesh
from mpfa import FluidRockProps, HFOperator

log = logging.getLogger(__name__)

SOLVER_TOL = 1e-12


@dataclass(frozen=True)
class Trajectory:
    """Estados ``p⁰ … p^N`` empilhados por linha."""

    dt: float
    states: np.ndarray

    @property
    def n_steps(self) -> int:
        return self.states.shape[0] - 1

    @property
    def final_time(self) -> float:
        return self.dt * self.n_steps


@dataclass(frozen=True)
class DualTrajectory:
    """Estados duais; ``states[n]`` guarda ``Ψ^n``."""

    dt: float
    states: np.ndarray

    @property
    def n_steps(self) -> int:
        return self.states.shape[0] - 1


def hydrostatic_init(mesh: Mesh, props: FluidRockProps) -> np.ndarray:
    """Estado inicial hidrostático ``p_K⁰ = p_D - ρ g (z_K - z_D)``.

    Incógnitas de face de Neumann recebem o valor da célula adjacente.
    """

    p0 = np.empty(mesh.n_unknowns)
    cells = props.p_D - props.rho_g * (mesh.cell_centers[:, 2] - props.z_D)
    p0[: mesh.n_cells] = cells
    p0[mesh.n_cells :] = cells[mesh.face_cells[mesh.neumann_faces, 0]]
    return p0


class StepSolver:
    """Fatoração LU de ``M + Δt A`` reaproveitada em todos os passos.

    Cada solução é aceita quando o resíduo relativo
    ``‖r‖∞ / (‖S‖∞ ‖x‖∞ + ‖rhs‖∞)`` fica abaixo de ``tol``; caso contrário
    aplica até dois passos de refinamento iterativo.
    """

    def __init__(self, M: sp.spmatrix, A: sp.spmatrix, dt: float, tol: float = SOLVER_TOL) -> None:
        self.matrix = sp.csc_matrix(M + dt * A)
        self.tol = tol
        self._norm = float(spla.norm(self.matrix, np.inf))
        try:
            self._lu = spla.splu(self.matrix)
        except RuntimeError as e:
            raise SolverError(f"Matriz de passo singular: {e}", step=0) from e

    def _residual(self, x: np.ndarray, rhs: np.ndarray, trans: bool) -> float:
        S = self.matrix.T if trans else self.matrix
        r = rhs - S @ x
        denom = self._norm * np.max(np.abs(x), initial=0.0) + np.max(np.abs(rhs), initial=0.0)
        if denom == 0.0:
            return 0.0
        return float(np.max(np.abs(r)) / denom)

    def solve(self, rhs: np.ndarray, step: int = 0, trans: bool = False) -> np.ndarray:
        mode = "T" if trans else "N"
        x = self._lu.solve(rhs, trans=mode)
        for _ in range(2):
            if not np.all(np.isfinite(x)):
                break
            err = self._residual(x, rhs, trans)
            if err <= self.tol:
                return x
            S = self.matrix.T if trans else self.matrix
            x = x + self._lu.solve(rhs - S @ x, trans=mode)
        if np.all(np.isfinite(x)) and self._residual(x, rhs, trans) <= self.tol:
            return x
        raise SolverError(f"Solver não atingiu a tolerância {self.tol:g} no passo {step}", step=step)


def solve_primal(
    op: HFOperator,
    dt: float,
    n_steps: int,
    p0: np.ndarray,
    solver: Optional[StepSolver] = None,
    tol: float = SOLVER_TOL,
) -> Trajectory:
    """Avança ``(M + Δt A) p^{n+1} = M p^n + Δt b`` por ``n_steps`` passos."""

    states = np.empty((n_steps + 1, op.size))
    states[0] = p0
    if n_steps == 0:
        return Trajectory(dt, states)
    solver = solver or StepSolver(op.M, op.A, dt, tol)
    load = dt * op.b
    for n in range(n_steps):
        states[n + 1] = solver.solve(op.M @ states[n] + load, step=n + 1)
    return Trajectory(dt, states)


def dual_terminal(op: HFOperator) -> np.ndarray:
    """``Ψ^N`` com ``M Ψ^N = -l`` nas células e zero nas faces de Neumann."""

    psi = np.zeros(op.size)
    mass = op.M.diagonal()[: op.n_cells]
    psi[: op.n_cells] = -op.l[: op.n_cells] / mass
    return psi


def solve_dual(
    op: HFOperator,
    dt: float,
    n_steps: int,
    solver: Optional[StepSolver] = None,
    tol: float = SOLVER_TOL,
) -> DualTrajectory:
    """Varredura regressiva ``(M + Δt Aᵀ) Ψ^n = M Ψ^{n+1}``."""

    states = np.empty((n_steps + 1, op.size))
    states[n_steps] = dual_terminal(op)
    if n_steps > 0:
        solver = solver or StepSolver(op.M, op.A, dt, tol)
        for n in range(n_steps - 1, -1, -1):
            states[n] = solver.solve(op.M @ states[n + 1], step=n, trans=True)
    return DualTrajectory(dt, states)


def qoi_series(op: HFOperator, traj: Trajectory) -> np.ndarray:
    """Saídas ``s^n = lᵀ p^n + c`` para ``n = 1 … N``."""
    return traj.states[1:] @ op.l + op.c


def shift_dual(dual: DualTrajectory, n: int) -> np.ndarray:
    """Estados ``ψ_n^m = Ψ^{N-n+m}``, ``m = 0 … n``."""

    N = dual.n_steps
    if not 0 <= n <= N:
        raise IndexError(f"Horizonte {n} fora de [0, {N}]")
    return dual.states[N - n :].copy()


__all__ = [
    "SOLVER_TOL",
    "Trajectory",
    "DualTrajectory",
    "hydrostatic_init",
    "StepSolver",
    "solve_primal",
    "dual_terminal",
    "solve_dual",
    "qoi_series",
    "shift_dual",
]
