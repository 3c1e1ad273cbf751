"""Algoritmos POD-Greedy (estimador primal e orientado ao objetivo)."""

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from tqdm import tqdm

from energy import EnergyMatrix
from estimators import OUTPUT_VARIANTS, PRIMAL_VARIANTS, energy_norm_series, true_errors
from hf import SOLVER_TOL, DualTrajectory, StepSolver, Trajectory, qoi_series, solve_dual, solve_primal
from mpfa import ParameterPoint, ParameterRanges
from online import ReducedModel, build_reduced_model, evaluate
from reduction import DEFAULT_RIC, DUAL, PRIMAL, ReducedBasis, extend_basis, gram_schmidt, pod, projection_error
from sampling import nearest, parallel_map

log = logging.getLogger(__name__)

CONVERGED, MAX_DIMENSION, STAGNATED, MAX_ROUNDS = "converged", "max_dimension", "stagnated", "max_rounds"
VARIANT_ONE = ("gho1", "ghoqoi1", "ghonew1")


@dataclass(eq=False)
class OfflineProblem:
    """Dados fixos do offline: decomposição afim, G*, p⁰, passos e amostragem."""

    affine: object
    energy: EnergyMatrix
    p0: np.ndarray
    dt: float
    n_steps: int
    ranges: ParameterRanges
    training: Sequence[ParameterPoint]
    coercivity: object
    alpha_mass: float = 0.0
    xi_star: Optional[ParameterPoint] = None
    variant_energy: Optional[EnergyMatrix] = None
    variant_coercivity: object = None
    workers: int = 1
    quiet: bool = True
    solver_tol: float = SOLVER_TOL
    _hf: Dict[Tuple[float, float], Tuple[Trajectory, DualTrajectory, np.ndarray]] = field(default_factory=dict, repr=False)

    @property
    def final_time(self) -> float:
        return self.dt * self.n_steps

    def hf_solutions(self, xi: ParameterPoint) -> Tuple[Trajectory, DualTrajectory, np.ndarray]:
        """Trajetórias primal e dual de alta fidelidade (uma fatoração por ξ)."""
        key = (xi.kappa1, xi.kappa2)
        if key not in self._hf:
            op = self.affine.operator(xi, self.dt)
            solver = StepSolver(op.M, op.A, self.dt, self.solver_tol)
            traj = solve_primal(op, self.dt, self.n_steps, self.p0, solver)
            dual = solve_dual(op, self.dt, self.n_steps, solver)
            self._hf[key] = (traj, dual, qoi_series(op, traj))
        return self._hf[key]

    def dual_seeds(self) -> np.ndarray:
        """Colunas ``ψ_d = -M⁺ l_d`` (zero nas faces)."""
        mass = self.affine.mass.diagonal()
        cells = mass > 0
        seeds = np.zeros((self.affine.size, self.affine.n_terms))
        for d, l in enumerate(self.affine.l_terms):
            seeds[cells, d] = -l[cells] / mass[cells]
        return seeds

    def build_model(self, Z_pr: np.ndarray, Z_du: Optional[np.ndarray]) -> ReducedModel:
        return build_reduced_model(
            Z_pr,
            Z_du,
            self.affine,
            self.energy,
            self.p0,
            self.coercivity,
            self.alpha_mass,
            self.dt,
            self.n_steps,
            self.ranges,
            dual_seeds=self.dual_seeds() if Z_du is not None else None,
            variant_energy=self.variant_energy,
            variant_coercivity=self.variant_coercivity,
        )


@dataclass
class GreedyResult:
    model: ReducedModel
    primal: ReducedBasis
    dual: Optional[ReducedBasis]
    diagnostics: List[Dict[str, float]]
    stop_reason: str


def _first_index(problem: OfflineProblem) -> int:
    target = problem.xi_star or problem.ranges.log_midpoint()
    return int(nearest(problem.training, target, 1)[0])


def _true_error_row(problem: OfflineProblem, model: ReducedModel, xi: ParameterPoint, result) -> Dict[str, float]:
    traj, dual, outputs = problem.hf_solutions(xi)
    red_p = model.lift_primal(result.primal_states)
    if model.Z_du is not None and result.dual_states is not None:
        red_d = model.lift_dual(result.dual_states)
    else:
        red_d = np.zeros_like(dual.states)
    err = true_errors(problem.energy, traj.states, red_p, dual.states, red_d, outputs[-1], result.output, result.output_plain)
    return {"primal": err.primal, "dual": err.dual, "output": err.output_corrected, "output_plain": err.output_plain, "norm": err.primal_norm}


def _seed_primal(problem: OfflineProblem) -> ReducedBasis:
    basis = ReducedBasis(gram_schmidt(problem.p0, problem.energy), PRIMAL)
    basis.increments.append(basis.dimension)
    return basis


def _seed_dual(problem: OfflineProblem) -> ReducedBasis:
    basis = ReducedBasis(gram_schmidt(problem.dual_seeds(), problem.energy), DUAL)
    basis.increments.append(basis.dimension)
    return basis


def _run(
    problem: OfflineProblem,
    goal: bool,
    estimator: str,
    max_dimension: int,
    tol: float,
    ric: float,
    relative: bool,
    track_true_errors: bool,
    max_rounds: int,
) -> GreedyResult:
    energy = problem.energy
    training = list(problem.training)
    if not training:
        raise ValueError("Conjunto de treinamento vazio")
    primal = _seed_primal(problem)
    dual = _seed_dual(problem) if goal else None
    pick = _first_index(problem)
    selected: List[int] = []
    diagnostics: List[Dict[str, float]] = []
    scale = 1.0
    previous = np.inf
    stop = MAX_ROUNDS
    model = None
    bar = tqdm(total=max_rounds, desc="POD-Greedy", disable=problem.quiet, leave=False)

    for rnd in range(1, max_rounds + 1):
        xi = training[pick]
        traj, hf_dual, _ = problem.hf_solutions(xi)
        if relative and rnd == 1:
            scale = max(energy_norm_series(energy, traj.states[1:]), np.finfo(float).tiny)

        room = max_dimension - primal.dimension
        S = projection_error(primal.Z, energy, traj.states[1:]).T
        modes, _ = pod(S, energy, ric)
        added = extend_basis(primal, modes[:, : max(room, 0)], energy)
        added_du = 0
        if goal:
            S_du = projection_error(dual.Z, energy, hf_dual.states[:-1]).T
            modes_du, _ = pod(S_du, energy, ric)
            added_du = extend_basis(dual, modes_du, energy)
        primal.selected.append((xi.kappa1, xi.kappa2))
        if dual is not None:
            dual.selected.append((xi.kappa1, xi.kappa2))
        selected.append(pick)

        model = problem.build_model(primal.Z, dual.Z if dual is not None else None)
        results = parallel_map(lambda x: evaluate(model, x), training, problem.workers, desc=f"rodada {rnd}", quiet=problem.quiet)
        values = np.array([r.estimates.value(estimator) for r in results])
        worst = float(np.max(values))
        nxt = int(np.argmax(values))

        row: Dict[str, float] = {
            "round": rnd,
            "n_pr": primal.dimension,
            "n_du": dual.dimension if dual is not None else 0,
            "kappa1": xi.kappa1,
            "kappa2": xi.kappa2,
            "estimator": estimator,
            "max_estimator": worst,
            "max_true_error": float("nan"),
            "max_output_error": float("nan"),
        }
        if track_true_errors:
            errs = parallel_map(
                lambda pair: _true_error_row(problem, model, pair[0], pair[1]),
                list(zip(training, results)),
                problem.workers,
            )
            row["max_true_error"] = max(e["primal"] for e in errs)
            row["max_output_error"] = max(e["output" if goal else "output_plain"] for e in errs)
        diagnostics.append(row)
        bar.update()
        log.info(
            f"Rodada {rnd}: N_pr = {primal.dimension}, N_du = {row['n_du']}, "
            f"max {estimator} = {worst:.3e} (ξ #{pick})"
        )

        if worst <= tol * scale:
            stop = CONVERGED
            break
        if primal.dimension >= max_dimension:
            stop = MAX_DIMENSION
            break
        if added == 0 and added_du == 0:
            stop = STAGNATED
            break
        if nxt in selected and worst >= previous:
            stop = STAGNATED
            break
        previous = worst
        pick = nxt
    bar.close()
    if stop == STAGNATED:
        log.warning(f"POD-Greedy estagnou na rodada {len(diagnostics)}")
    for row in diagnostics:
        row["stop"] = ""
    diagnostics[-1]["stop"] = stop
    model.rounds = [{"n_pr": r["n_pr"], "n_du": r["n_du"]} for r in diagnostics]
    log.info(f"POD-Greedy terminou ({stop}): N_pr = {primal.dimension}")
    return GreedyResult(model, primal, dual, diagnostics, stop)


def pod_greedy_primal(
    problem: OfflineProblem,
    max_dimension: int,
    tol: float,
    ric: float = DEFAULT_RIC,
    estimator: str = "delta_pr",
    relative: bool = False,
    track_true_errors: bool = False,
    max_rounds: int = 200,
) -> GreedyResult:
    """POD-Greedy conduzido por um estimador do erro primal."""
    if estimator not in PRIMAL_VARIANTS:
        raise ValueError(f"Estimador primal desconhecido: {estimator}")
    return _run(problem, False, estimator, max_dimension, tol, ric, relative, track_true_errors, max_rounds)


def pod_greedy_goal(
    problem: OfflineProblem,
    max_dimension: int,
    tol: float,
    ric: float = DEFAULT_RIC,
    estimator: str = "delta_s",
    relative: bool = False,
    track_true_errors: bool = False,
    max_rounds: int = 200,
) -> GreedyResult:
    """POD-Greedy orientado à saída: bases primal e dual crescem juntas."""
    if estimator not in OUTPUT_VARIANTS:
        raise ValueError(f"Estimador de saída desconhecido: {estimator}")
    return _run(problem, True, estimator, max_dimension, tol, ric, relative, track_true_errors, max_rounds)


def needs_variant(estimator: str) -> bool:
    return estimator in VARIANT_ONE


__all__ = [
    "CONVERGED",
    "MAX_DIMENSION",
    "STAGNATED",
    "MAX_ROUNDS",
    "OfflineProblem",
    "GreedyResult",
    "pod_greedy_primal",
    "pod_greedy_goal",
    "needs_variant",
]
