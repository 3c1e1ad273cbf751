"""Estimadores a posteriori: normas duais estáveis dos resíduos e limites de erro.

A norma ``‖r‖₋₁ = ‖(G*)⁻¹ r‖_{G*}`` é avaliada sem passar pela expansão
quadrática: a família η̂ (pré-imagens dos resíduos) é ortonormalizada offline
e o online só contrai coeficientes com a tabela η̄.
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, Optional

import numpy as np

from energy import EnergyMatrix
from errors import EstimatorError
from reduction import DUAL, PRIMAL, gram_schmidt

log = logging.getLogger(__name__)

RELIABILITY_SLACK = 1e-8
ABS_FLOOR = 1e-10

PRIMAL_VARIANTS = ("delta_pr", "gho1", "gho2")
OUTPUT_VARIANTS = ("delta_s", "delta_s_tilde", "ghoqoi1", "ghoqoi2", "ghonew1", "ghonew2")
ESTIMATORS = PRIMAL_VARIANTS + OUTPUT_VARIANTS


@dataclass(frozen=True, eq=False)
class ResidualTable:
    """Coeficientes ``η̄_{d,i} = ⟨η̂_d, ζ_i⟩`` da família de resíduos.

    Layout primal: ``[M Z | A_1 Z | … | A_D Z | b_1 … b_D]``; dual:
    ``[M Z | A_1ᵀ Z | … | A_Dᵀ Z]``.
    """

    role: str
    n_basis: int
    n_terms: int
    eta_bar: np.ndarray
    gram: np.ndarray

    @property
    def n_coefficients(self) -> int:
        return int(self.eta_bar.shape[0])

    def rows(self, n_basis: int) -> np.ndarray:
        """Linhas da tabela que correspondem às ``n_basis`` primeiras colunas de Z."""
        n, D = self.n_basis, self.n_terms
        if not 0 <= n_basis <= n:
            raise ValueError(f"Dimensão {n_basis} fora de [0, {n}]")
        idx = [np.arange(n_basis)]
        for d in range(D):
            idx.append(n + d * n + np.arange(n_basis))
        if self.role == PRIMAL:
            idx.append(n + D * n + np.arange(D))
        return np.concatenate(idx)

    def truncated(self, n_basis: int) -> "ResidualTable":
        rows = self.rows(n_basis)
        return ResidualTable(self.role, n_basis, self.n_terms, self.eta_bar[rows], self.gram[np.ix_(rows, rows)])

    def to_parts(self, prefix: str) -> Dict[str, np.ndarray]:
        return {
            prefix + "eta_bar": self.eta_bar,
            prefix + "gram": self.gram,
            prefix + "dims": np.array([self.n_basis, self.n_terms, int(self.role == PRIMAL)], dtype=np.int64),
        }

    @classmethod
    def from_parts(cls, parts: Dict[str, np.ndarray], prefix: str) -> "ResidualTable":
        n, D, primal = (int(v) for v in parts[prefix + "dims"])
        return cls(PRIMAL if primal else DUAL, n, D, np.array(parts[prefix + "eta_bar"]), np.array(parts[prefix + "gram"]))


def residual_table_from_family(family: np.ndarray, energy: EnergyMatrix, role: str, n_basis: int, n_terms: int) -> ResidualTable:
    """Ortonormaliza a família ``η̂`` (colunas) e monta ``η̄ = η̂ᵀ G* ζ``."""
    family = np.asarray(family, dtype=float)
    G_family = energy.matrix @ family
    zeta = gram_schmidt(family, energy)
    eta_bar = G_family.T @ zeta
    gram = family.T @ G_family
    gram = 0.5 * (gram + gram.T)
    if zeta.shape[1] < family.shape[1]:
        log.debug(f"Família de resíduos {role}: posto {zeta.shape[1]} de {family.shape[1]}")
    return ResidualTable(role, n_basis, n_terms, eta_bar, gram)


def residual_offline(Z: np.ndarray, affine, energy: EnergyMatrix, role: str = PRIMAL) -> ResidualTable:
    """Tabela de resíduos para a base ``Z`` e a decomposição afim."""

    n = Z.shape[1]
    blocks = [affine.mass @ Z]
    for A in affine.a_terms:
        blocks.append((A.T if role == DUAL else A) @ Z)
    if role == PRIMAL:
        blocks.append(np.column_stack(affine.b_terms) if affine.b_terms else np.zeros((Z.shape[0], 0)))
    pre = np.hstack(blocks)
    family = energy.solve(pre)
    table = residual_table_from_family(family, energy, role, n, affine.n_terms)
    log.info(f"Tabela de resíduos {role}: {table.n_coefficients} coeficientes, {table.eta_bar.shape[1]} direções")
    return table


def primal_coefficients(states: np.ndarray, theta: np.ndarray, dt: float) -> np.ndarray:
    """``r̂^{n+1} = ((p̃^{n+1}-p̃^n)/Δt, θ_1 p̃^{n+1}, …, θ_D p̃^{n+1}, -θ_1, …, -θ_D)``."""
    states = np.atleast_2d(states)
    nxt = states[1:]
    steps = nxt.shape[0]
    parts = [(nxt - states[:-1]) / dt]
    parts.extend(t * nxt for t in theta)
    parts.append(np.broadcast_to(-np.asarray(theta), (steps, len(theta))))
    return np.hstack(parts)


def dual_coefficients(states: np.ndarray, theta: np.ndarray, dt: float) -> np.ndarray:
    """``ϱ̂^m = ((Ψ̃^m-Ψ̃^{m+1})/Δt, θ_1 Ψ̃^m, …)`` para ``m = 0 … N-1``."""
    states = np.atleast_2d(states)
    cur = states[:-1]
    parts = [(cur - states[1:]) / dt]
    parts.extend(t * cur for t in theta)
    return np.hstack(parts)


def residual_norms(table: ResidualTable, coeffs: np.ndarray) -> np.ndarray:
    """Normas estáveis ``(Σ_i (Σ_d r̂_d η̄_{d,i})²)^{1/2}`` por linha de ``coeffs``."""
    coeffs = np.atleast_2d(coeffs)
    if coeffs.shape[1] != table.n_coefficients:
        raise ValueError(f"r̂ com {coeffs.shape[1]} coeficientes, tabela espera {table.n_coefficients}")
    return np.sqrt(np.sum((coeffs @ table.eta_bar) ** 2, axis=1))


def residual_norm_squared_naive(table: ResidualTable, coeffs: np.ndarray) -> np.ndarray:
    """Expansão quadrática ``r̂ᵀ (η̂ᵀG*η̂) r̂``; sujeita a cancelamento."""
    coeffs = np.atleast_2d(coeffs)
    return np.einsum("ki,ij,kj->k", coeffs, table.gram, coeffs)


def residual_norms_online(table: ResidualTable, states: np.ndarray, theta: np.ndarray, dt: float) -> np.ndarray:
    if table.role == PRIMAL:
        coeffs = primal_coefficients(states, theta, dt)
    else:
        coeffs = dual_coefficients(states, theta, dt)
    if coeffs.shape[0] == 0:
        return np.zeros(0)
    return residual_norms(table, coeffs)


def _check_bounds(alpha_g: float, alpha_a: float) -> None:
    if not (alpha_g > 0 and alpha_a > 0) or not np.isfinite(alpha_g * alpha_a):
        raise EstimatorError(f"Limites de coercividade não positivos: α_G={alpha_g}, α_A={alpha_a}")


def delta_pr(norms: np.ndarray, alpha_g: float, alpha_a: float, final_time: float, dt: float) -> float:
    """``Δ_pr = ((T+Δt)/(α_G α_A) Σ ‖r^m‖²)^{1/2}``."""
    _check_bounds(alpha_g, alpha_a)
    return float(np.sqrt((final_time + dt) / (alpha_g * alpha_a) * np.sum(np.square(norms))))


def delta_du(norms: np.ndarray, alpha_g: float, alpha_a: float, final_time: float, dt: float) -> float:
    """``Δ_du = ((T+Δt)/(α_G α_A) Σ_{m=0}^{N-1} ‖ϱ^m‖²)^{1/2}``."""
    _check_bounds(alpha_g, alpha_a)
    return float(np.sqrt((final_time + dt) / (alpha_g * alpha_a) * np.sum(np.square(norms))))


def delta_s(primal_norms: np.ndarray, dual_bound: float, dt: float) -> float:
    return float(dt * np.sqrt(np.sum(np.square(primal_norms))) * dual_bound)


def delta_s_tilde(delta: float, pairing: np.ndarray, dt: float) -> float:
    return float(delta + dt * np.sum(np.abs(pairing)))


def pairing_terms(pairing: np.ndarray, primal_coeffs: np.ndarray, dual_states: np.ndarray) -> np.ndarray:
    """``⟨r^{k+1}, Z_du Ψ̃^{(k)}⟩ = r̂^{k+1}ᵀ P Ψ̃^{(k)}`` para cada passo k."""
    primal_coeffs = np.atleast_2d(primal_coeffs)
    if primal_coeffs.shape[0] == 0:
        return np.zeros(0)
    return np.einsum("ki,ij,kj->k", primal_coeffs, pairing, dual_states[: primal_coeffs.shape[0]])


def reduced_output_plain(l_red: np.ndarray, c: float, state: np.ndarray) -> float:
    return float(l_red @ state + c)


def reduced_output_corrected(l_red: np.ndarray, c: float, state: np.ndarray, pairing: np.ndarray, dt: float) -> float:
    """``s^{N_s,n} = l̃·p̃^n + c + Δt Σ_{n'} ⟨r^{n'+1}, Ψ^{N_du, N-n+n'}⟩``."""
    return float(l_red @ state + c + dt * np.sum(pairing))


def comparison_estimator(
    variant: str,
    primal_norms: np.ndarray,
    alpha_a: float,
    dt: float,
    dual_norms: Optional[np.ndarray] = None,
    pairing: Optional[np.ndarray] = None,
) -> float:
    """Estimadores de comparação; as variantes 1 e 2 diferem só na matriz da norma."""

    if not alpha_a > 0:
        raise EstimatorError(f"α_A não positivo: {alpha_a}")
    primal = np.sum(dt / alpha_a * np.square(primal_norms))
    if variant in ("gho1", "gho2"):
        return float(np.sqrt(primal))
    if dual_norms is None:
        raise EstimatorError(f"Variante {variant} exige resíduos duais")
    value = float(np.sqrt(primal * np.sum(dt / alpha_a * np.square(dual_norms))))
    if variant in ("ghoqoi1", "ghoqoi2"):
        return value
    if variant in ("ghonew1", "ghonew2"):
        if pairing is None:
            raise EstimatorError(f"Variante {variant} exige o termo de pareamento")
        return value + float(dt * np.sum(np.abs(pairing)))
    raise ValueError(f"Variante desconhecida: {variant}")


@dataclass
class EstimateBundle:
    horizon: int
    delta_pr: float
    delta_du: float
    delta_s: float
    delta_s_tilde: float
    primal_norms: np.ndarray
    dual_norms: np.ndarray
    alpha_lb: float
    alpha_g_lb: float
    comparison: Dict[str, float] = field(default_factory=dict)

    def value(self, name: str) -> float:
        if name in ("delta_pr", "delta_du", "delta_s", "delta_s_tilde"):
            return float(getattr(self, name))
        if name in self.comparison:
            return self.comparison[name]
        raise EstimatorError(f"Estimador '{name}' não disponível")

    def check(self) -> None:
        values = [self.delta_pr, self.delta_du, self.delta_s, self.delta_s_tilde, *self.comparison.values()]
        if not all(np.isfinite(v) and v >= 0 for v in values):
            raise EstimatorError(f"Estimativas inválidas: {values}")


@dataclass(frozen=True)
class TrueErrors:
    primal: float
    dual: float
    output_corrected: float
    output_plain: float
    primal_norm: float


def energy_norm_series(energy: EnergyMatrix, states: np.ndarray) -> float:
    """``(Σ_m ‖x^m‖²_{G*})^{1/2}`` sobre as linhas de ``states``."""
    states = np.atleast_2d(states)
    if states.shape[0] == 0:
        return 0.0
    return float(np.sqrt(max(np.sum(states * (energy.matrix @ states.T).T), 0.0)))


def true_errors(
    energy: EnergyMatrix,
    hf_primal: np.ndarray,
    red_primal: np.ndarray,
    hf_dual: np.ndarray,
    red_dual: np.ndarray,
    hf_output: float,
    output_corrected: float,
    output_plain: float,
) -> TrueErrors:
    """Erros verdadeiros: primal sobre ``m = 1 … n``, dual sobre ``m = 0 … n-1``."""
    return TrueErrors(
        primal=energy_norm_series(energy, hf_primal[1:] - red_primal[1:]),
        dual=energy_norm_series(energy, hf_dual[:-1] - red_dual[:-1]),
        output_corrected=abs(hf_output - output_corrected),
        output_plain=abs(hf_output - output_plain),
        primal_norm=energy_norm_series(energy, hf_primal[1:]),
    )


def effectivity(estimate: float, error: float):
    """Razão estimativa/erro; erro nulo devolve ``(nan, True)`` (caso exato)."""
    if error == 0.0:
        return float("nan"), True
    return float(estimate / error), False


def is_reliable(estimate: float, error: float, scale: float = 0.0) -> bool:
    return error <= estimate * (1 + RELIABILITY_SLACK) + ABS_FLOOR * scale


__all__ = [
    "PRIMAL_VARIANTS",
    "OUTPUT_VARIANTS",
    "ESTIMATORS",
    "ResidualTable",
    "residual_table_from_family",
    "residual_offline",
    "primal_coefficients",
    "dual_coefficients",
    "residual_norms",
    "residual_norm_squared_naive",
    "residual_norms_online",
    "delta_pr",
    "delta_du",
    "delta_s",
    "delta_s_tilde",
    "pairing_terms",
    "reduced_output_plain",
    "reduced_output_corrected",
    "comparison_estimator",
    "EstimateBundle",
    "TrueErrors",
    "energy_norm_series",
    "true_errors",
    "effectivity",
    "is_reliable",
]
