"""Fase online: operadores reduzidos afins, soluções reduzidas e saídas certificadas."""

import logging
import time
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional

import numpy as np
import scipy.linalg as sla

from energy import EnergyMatrix, alpha_g_lb
from errors import EstimatorError, SolverError
from estimators import (
    EstimateBundle,
    ResidualTable,
    comparison_estimator,
    delta_du,
    delta_pr,
    delta_s,
    delta_s_tilde,
    pairing_terms,
    primal_coefficients,
    reduced_output_corrected,
    reduced_output_plain,
    residual_norms_online,
    residual_offline,
)
from mpfa import ParameterPoint, ParameterRanges
from reduction import DUAL, PRIMAL

log = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class ReducedOperator:
    """Blocos projetados, todos de dimensão reduzida.

    ``pairing`` tem as linhas no layout da tabela primal de resíduos e as
    colunas na base dual: ``[(MZ_pr)ᵀ; (A_dZ_pr)ᵀ; b_dᵀ] Z_du``.
    """

    mass_pr: np.ndarray
    a_pr: np.ndarray
    b_pr: np.ndarray
    l_pr: np.ndarray
    c: np.ndarray
    p0: np.ndarray
    mass_du: Optional[np.ndarray] = None
    a_du: Optional[np.ndarray] = None
    psi_terminal: Optional[np.ndarray] = None
    pairing: Optional[np.ndarray] = None

    @property
    def n_pr(self) -> int:
        return int(self.mass_pr.shape[0])

    @property
    def n_du(self) -> int:
        return 0 if self.mass_du is None else int(self.mass_du.shape[0])

    @property
    def n_terms(self) -> int:
        return int(self.a_pr.shape[0])

    @property
    def has_dual(self) -> bool:
        return self.mass_du is not None and self.n_du > 0

    def truncated(self, n_pr: int, n_du: int, primal_rows: np.ndarray) -> "ReducedOperator":
        dual = {}
        if self.has_dual:
            dual = dict(
                mass_du=self.mass_du[:n_du, :n_du],
                a_du=self.a_du[:, :n_du, :n_du],
                psi_terminal=self.psi_terminal[:, :n_du],
                pairing=self.pairing[np.ix_(primal_rows, np.arange(n_du))],
            )
        return ReducedOperator(
            mass_pr=self.mass_pr[:n_pr, :n_pr],
            a_pr=self.a_pr[:, :n_pr, :n_pr],
            b_pr=self.b_pr[:, :n_pr],
            l_pr=self.l_pr[:, :n_pr],
            c=self.c,
            p0=self.p0[:n_pr],
            **dual,
        )

    def to_parts(self, prefix: str = "rop/") -> Dict[str, np.ndarray]:
        parts = {
            prefix + name: getattr(self, name)
            for name in ("mass_pr", "a_pr", "b_pr", "l_pr", "c", "p0", "mass_du", "a_du", "psi_terminal", "pairing")
            if getattr(self, name) is not None
        }
        return parts

    @classmethod
    def from_parts(cls, parts: Dict[str, np.ndarray], prefix: str = "rop/") -> "ReducedOperator":
        kw = {}
        for name in ("mass_pr", "a_pr", "b_pr", "l_pr", "c", "p0", "mass_du", "a_du", "psi_terminal", "pairing"):
            if prefix + name in parts:
                kw[name] = np.array(parts[prefix + name])
        return cls(**kw)


def project(
    Z_pr: np.ndarray,
    Z_du: Optional[np.ndarray],
    affine,
    energy: EnergyMatrix,
    p0: np.ndarray,
    dual_seeds: Optional[np.ndarray] = None,
) -> ReducedOperator:
    """Produtos dependentes de 𝒩, calculados uma vez por base.

    ``dual_seeds`` traz os estados terminais ``ψ_d = -M⁺ l_d`` (colunas); o
    terminal reduzido é ``Σ θ_d Z_duᵀ G* ψ_d``.
    """

    if p0.shape[0] != Z_pr.shape[0]:
        raise ValueError(f"p⁰ com dimensão {p0.shape[0]}, base com {Z_pr.shape[0]}")
    MZ = affine.mass @ Z_pr
    AZ = [A @ Z_pr for A in affine.a_terms]
    rop = dict(
        mass_pr=Z_pr.T @ MZ,
        a_pr=np.array([Z_pr.T @ X for X in AZ]).reshape(affine.n_terms, Z_pr.shape[1], Z_pr.shape[1]),
        b_pr=np.array([Z_pr.T @ b for b in affine.b_terms]).reshape(affine.n_terms, Z_pr.shape[1]),
        l_pr=np.array([Z_pr.T @ l for l in affine.l_terms]).reshape(affine.n_terms, Z_pr.shape[1]),
        c=np.asarray(affine.c_terms, dtype=float),
        p0=Z_pr.T @ (energy.matrix @ p0),
    )
    if Z_du is not None and Z_du.shape[1] > 0:
        if Z_du.shape[0] != Z_pr.shape[0]:
            raise ValueError("Bases primal e dual com dimensões diferentes")
        k = Z_du.shape[1]
        MZd = affine.mass @ Z_du
        seeds = np.zeros((Z_du.shape[0], affine.n_terms)) if dual_seeds is None else dual_seeds
        rop.update(
            mass_du=Z_du.T @ MZd,
            a_du=np.array([Z_du.T @ (A.T @ Z_du) for A in affine.a_terms]).reshape(affine.n_terms, k, k),
            psi_terminal=(Z_du.T @ (energy.matrix @ seeds)).T,
            pairing=np.vstack([MZ.T @ Z_du] + [X.T @ Z_du for X in AZ] + [np.array(affine.b_terms).reshape(-1, Z_du.shape[0]) @ Z_du]),
        )
    return ReducedOperator(**rop)


def assemble_reduced(rop: ReducedOperator, theta: np.ndarray):
    """Montagem afim ``(Σθ_d A_d, Σθ_d b_d, Σθ_d l_d, Σθ_d c_d)`` reduzida."""
    A = np.tensordot(theta, rop.a_pr, axes=1)
    b = theta @ rop.b_pr
    l = theta @ rop.l_pr
    c = float(theta @ rop.c)
    return A, b, l, c


def solve_reduced_primal(rop: ReducedOperator, theta: np.ndarray, dt: float, n_steps: int, p0: Optional[np.ndarray] = None) -> np.ndarray:
    """``(M̃ + Δt Ã) p̃^{n+1} = M̃ p̃^n + Δt b̃`` com uma fatoração densa."""
    A, b, _, _ = assemble_reduced(rop, theta)
    states = np.empty((n_steps + 1, rop.n_pr))
    states[0] = rop.p0 if p0 is None else p0
    if n_steps == 0 or rop.n_pr == 0:
        states[1:] = states[0]
        return states
    lu = _factor(rop.mass_pr + dt * A)
    load = dt * b
    for n in range(n_steps):
        states[n + 1] = sla.lu_solve(lu, rop.mass_pr @ states[n] + load, check_finite=False)
    return states


def solve_reduced_dual(rop: ReducedOperator, theta: np.ndarray, dt: float, n_steps: int) -> np.ndarray:
    """Varredura regressiva reduzida; ``states[n]`` é ``Ψ̃^n``."""
    if not rop.has_dual:
        raise EstimatorError("Base dual ausente")
    A = np.tensordot(theta, rop.a_du, axes=1)
    states = np.empty((n_steps + 1, rop.n_du))
    states[n_steps] = theta @ rop.psi_terminal
    if n_steps:
        lu = _factor(rop.mass_du + dt * A)
        for n in range(n_steps - 1, -1, -1):
            states[n] = sla.lu_solve(lu, rop.mass_du @ states[n + 1], check_finite=False)
    return states


def _factor(S: np.ndarray):
    try:
        lu = sla.lu_factor(S, check_finite=True)
    except (ValueError, sla.LinAlgError) as e:
        raise SolverError(f"Sistema reduzido inválido: {e}", step=0) from e
    if np.any(np.diag(lu[0]) == 0.0):
        raise SolverError("Sistema reduzido singular", step=0)
    return lu


@dataclass
class VariantTables:
    """Tabelas de resíduo e coercividade sob uma matriz de norma alternativa."""

    label: str
    primal: ResidualTable
    dual: Optional[ResidualTable]
    coercivity: object


@dataclass(eq=False)
class ReducedModel:
    """Tudo o que o online precisa; os campos de dimensão 𝒩 são opcionais."""

    rop: ReducedOperator
    primal_table: ResidualTable
    dual_table: Optional[ResidualTable]
    theta: object
    coercivity: object
    alpha_mass: float
    dt: float
    n_steps: int
    ranges: ParameterRanges
    variant: Optional[VariantTables] = None
    Z_pr: Optional[np.ndarray] = None
    Z_du: Optional[np.ndarray] = None
    rounds: List[Dict[str, float]] = field(default_factory=list)
    goal: bool = False

    @property
    def n_pr(self) -> int:
        return self.rop.n_pr

    @property
    def n_du(self) -> int:
        return self.rop.n_du

    def truncated(self, n_pr: int, n_du: int) -> "ReducedModel":
        """Submodelo aninhado com as primeiras colunas de cada base."""
        if not (0 < n_pr <= self.n_pr and 0 <= n_du <= self.n_du):
            raise ValueError(f"Dimensões ({n_pr}, {n_du}) fora de ({self.n_pr}, {self.n_du})")
        if self.goal and self.n_du and not n_du:
            raise ValueError("Modelo orientado à saída exige N_du ≥ 1")
        rows = self.primal_table.rows(n_pr)
        variant = None
        if self.variant is not None:
            variant = replace(
                self.variant,
                primal=self.variant.primal.truncated(n_pr),
                dual=self.variant.dual.truncated(n_du) if self.variant.dual is not None and n_du else None,
            )
        return replace(
            self,
            rop=self.rop.truncated(n_pr, n_du, rows),
            primal_table=self.primal_table.truncated(n_pr),
            dual_table=self.dual_table.truncated(n_du) if self.dual_table is not None and n_du else None,
            variant=variant,
            Z_pr=None if self.Z_pr is None else self.Z_pr[:, :n_pr],
            Z_du=None if self.Z_du is None else self.Z_du[:, :n_du],
        )

    def online_view(self) -> "ReducedModel":
        """Cópia sem nenhum array de dimensão 𝒩."""
        return replace(self, Z_pr=None, Z_du=None)

    def lift_primal(self, states: np.ndarray) -> np.ndarray:
        if self.Z_pr is None:
            raise EstimatorError("Base primal completa não disponível nesta visão")
        return states @ self.Z_pr.T

    def lift_dual(self, states: np.ndarray) -> np.ndarray:
        if self.Z_du is None:
            raise EstimatorError("Base dual completa não disponível nesta visão")
        return states @ self.Z_du.T


def build_reduced_model(
    Z_pr: np.ndarray,
    Z_du: Optional[np.ndarray],
    affine,
    energy: EnergyMatrix,
    p0: np.ndarray,
    coercivity,
    alpha_mass: float,
    dt: float,
    n_steps: int,
    ranges: ParameterRanges,
    dual_seeds: Optional[np.ndarray] = None,
    variant_energy: Optional[EnergyMatrix] = None,
    variant_coercivity=None,
) -> ReducedModel:
    rop = project(Z_pr, Z_du, affine, energy, p0, dual_seeds)
    primal_table = residual_offline(Z_pr, affine, energy, PRIMAL)
    has_dual = Z_du is not None and Z_du.shape[1] > 0
    dual_table = residual_offline(Z_du, affine, energy, DUAL) if has_dual else None
    variant = None
    if variant_energy is not None:
        variant = VariantTables(
            label=variant_energy.label,
            primal=residual_offline(Z_pr, affine, variant_energy, PRIMAL),
            dual=residual_offline(Z_du, affine, variant_energy, DUAL) if has_dual else None,
            coercivity=variant_coercivity,
        )
    return ReducedModel(
        rop=rop,
        primal_table=primal_table,
        dual_table=dual_table,
        theta=affine.theta,
        coercivity=coercivity,
        alpha_mass=alpha_mass,
        dt=dt,
        n_steps=n_steps,
        ranges=ranges,
        variant=variant,
        Z_pr=Z_pr,
        Z_du=Z_du if has_dual else None,
        goal=Z_du is not None,
    )


@dataclass
class CertifiedResult:
    xi: ParameterPoint
    horizon: int
    n_pr: int
    n_du: int
    output: float
    output_plain: float
    estimates: EstimateBundle
    primal_states: np.ndarray
    dual_states: Optional[np.ndarray]
    pairing: np.ndarray
    wall_time: float

    def record(self) -> Dict[str, float]:
        """Registro plano para CSV."""
        rec = {
            "kappa1": self.xi.kappa1,
            "kappa2": self.xi.kappa2,
            "horizon": self.horizon,
            "n_pr": self.n_pr,
            "n_du": self.n_du,
            "output": self.output,
            "output_plain": self.output_plain,
            "delta_pr": self.estimates.delta_pr,
            "delta_du": self.estimates.delta_du,
            "delta_s": self.estimates.delta_s,
            "delta_s_tilde": self.estimates.delta_s_tilde,
            "alpha_lb": self.estimates.alpha_lb,
            "wall_time": self.wall_time,
        }
        rec.update(self.estimates.comparison)
        return rec


def evaluate(model: ReducedModel, xi: ParameterPoint, horizon: Optional[int] = None) -> CertifiedResult:
    """Soluções reduzidas, saídas e todas as estimativas para ``ξ``."""

    start = time.perf_counter()
    model.ranges.check(xi)
    n = model.n_steps if horizon is None else int(horizon)
    if not 0 <= n <= model.n_steps:
        raise ValueError(f"Horizonte {n} fora de [0, {model.n_steps}]")
    dt = model.dt
    theta = model.theta(xi)
    rop = model.rop

    primal = solve_reduced_primal(rop, theta, dt, n)
    _, _, l_red, c = assemble_reduced(rop, theta)
    r_coeffs = primal_coefficients(primal, theta, dt)
    primal_norms = residual_norms_online(model.primal_table, primal, theta, dt)

    alpha = float(model.coercivity.lower_bound(xi))
    alpha_g = alpha_g_lb(alpha, model.alpha_mass, dt)
    T = n * dt

    dual = None
    dual_norms = np.zeros(0)
    pairing = np.zeros(0)
    if rop.has_dual and model.dual_table is not None:
        full_dual = solve_reduced_dual(rop, theta, dt, model.n_steps)
        dual = full_dual[model.n_steps - n :]
        dual_norms = residual_norms_online(model.dual_table, dual, theta, dt)
        pairing = pairing_terms(rop.pairing, r_coeffs, dual)

    # com l ≡ 0 a base dual fica vazia e Ψ ≡ 0 exatamente
    certified = dual is not None or model.goal
    plain = reduced_output_plain(l_red, c, primal[-1])
    corrected = reduced_output_corrected(l_red, c, primal[-1], pairing, dt)
    if n == 0:
        bundle = EstimateBundle(0, 0.0, 0.0, 0.0, 0.0, primal_norms, dual_norms, alpha, alpha_g)
    else:
        d_pr = delta_pr(primal_norms, alpha_g, alpha, T, dt)
        d_du = d_s = d_st = float("nan")
        if certified:
            d_du = delta_du(dual_norms, alpha_g, alpha, T, dt)
            d_s = delta_s(primal_norms, d_du, dt)
            d_st = delta_s_tilde(d_s, pairing, dt)
        bundle = EstimateBundle(n, d_pr, d_du, d_s, d_st, primal_norms, dual_norms, alpha, alpha_g)
        bundle.comparison.update(_comparisons(model, xi, primal, certified, theta, primal_norms, dual, dual_norms, pairing, alpha))

    return CertifiedResult(
        xi=xi,
        horizon=n,
        n_pr=model.n_pr,
        n_du=model.n_du,
        output=corrected if certified else plain,
        output_plain=plain,
        estimates=bundle,
        primal_states=primal,
        dual_states=dual,
        pairing=pairing,
        wall_time=time.perf_counter() - start,
    )


def _comparisons(model, xi, primal, certified, theta, primal_norms, dual, dual_norms, pairing, alpha) -> Dict[str, float]:
    """Variantes de comparação: ``2`` usa G*, ``1`` usa a matriz alternativa."""
    dt = model.dt
    out = {"gho2": comparison_estimator("gho2", primal_norms, alpha, dt)}
    if certified:
        out["ghoqoi2"] = comparison_estimator("ghoqoi2", primal_norms, alpha, dt, dual_norms)
        out["ghonew2"] = comparison_estimator("ghonew2", primal_norms, alpha, dt, dual_norms, pairing)
    v = model.variant
    if v is not None:
        alpha1 = float(v.coercivity.lower_bound(xi))
        norms1 = residual_norms_online(v.primal, primal, theta, dt)
        out["gho1"] = comparison_estimator("gho1", norms1, alpha1, dt)
        if certified:
            dnorms1 = np.zeros(0)
            if dual is not None and v.dual is not None:
                dnorms1 = residual_norms_online(v.dual, dual, theta, dt)
            out["ghoqoi1"] = comparison_estimator("ghoqoi1", norms1, alpha1, dt, dnorms1)
            out["ghonew1"] = comparison_estimator("ghonew1", norms1, alpha1, dt, dnorms1, pairing)
    return out


__all__ = [
    "ReducedOperator",
    "project",
    "assemble_reduced",
    "solve_reduced_primal",
    "solve_reduced_dual",
    "VariantTables",
    "ReducedModel",
    "build_reduced_model",
    "CertifiedResult",
    "evaluate",
]
