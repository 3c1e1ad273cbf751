"""Método de restrições sucessivas (SCM) para a constante de coercividade.

``α(ξ) = inf vᵀA_sym(ξ)v / ‖v‖²_G`` recebe um limite superior (mínimo sobre
os vetores w das restrições já resolvidas) e um inferior (programa linear
sobre a caixa 𝓑 com restrições nos vizinhos mais próximos).
"""

import logging
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Protocol, Sequence, Tuple

import numpy as np
import scipy.sparse as sp
from tqdm import tqdm

from energy import DENSE_EIG_LIMIT, EnergyMatrix, generalized_eig
from errors import ModelError
from mpfa import ParameterPoint, ParameterRanges
from optimization import UNBOUNDED, solve_lp
from sampling import log_coordinates, parallel_map

log = logging.getLogger(__name__)

LP_TOL = 1e-10
LP_RELAX = 1e-10
SCM_TOL = 1e-4
SCM_M = 5
SCM_MAX_ITERATIONS = 100


class CoercivityBound(Protocol):
    def lower_bound(self, xi: ParameterPoint) -> float: ...

    def upper_bound(self, xi: ParameterPoint) -> float: ...


def coercivity_vector(affine_sym: Sequence[sp.spmatrix], y: np.ndarray) -> np.ndarray:
    """``w_d = yᵀ (A_d)_sym y`` para y G-normalizado."""
    return np.array([float(y @ (A @ y)) for A in affine_sym])


def constraint_box(affine_sym: Sequence[sp.spmatrix], energy: EnergyMatrix, dense_limit: int = DENSE_EIG_LIMIT) -> np.ndarray:
    """Caixa 𝓑: autovalores generalizados extremos de cada par ``((A_d)_sym, G)``."""
    box = np.empty((len(affine_sym), 2))
    for d, A in enumerate(affine_sym):
        if A.nnz == 0 or not np.any(A.data):
            box[d] = 0.0
            continue
        box[d, 0] = generalized_eig(A, energy.matrix, "min", dense_limit)[0]
        box[d, 1] = generalized_eig(A, energy.matrix, "max", dense_limit)[0]
    return box


def _scaled_lp(theta: np.ndarray, rows: np.ndarray, rhs: np.ndarray, box: np.ndarray, tol: float) -> float:
    """``min θ·w`` em 𝓑 com ``rows @ w >= rhs``, resolvido em variáveis escaladas."""

    scale = np.max(np.abs(box), axis=1)
    scale = np.where(scale > 0, scale, 1.0)
    lo = box[:, 0] / scale
    hi = box[:, 1] / scale
    bounds = np.column_stack([lo - LP_RELAX * np.abs(lo), hi + LP_RELAX * np.abs(hi)])

    cost = theta * scale
    cnorm = np.max(np.abs(cost))
    if cnorm == 0.0:
        return 0.0
    rows = rows * scale
    keep = np.isfinite(rhs)
    rows, rhs = rows[keep], rhs[keep]
    rnorm = np.max(np.abs(rows), axis=1) if rows.size else np.empty(0)
    ok = rnorm > 0
    rows = rows[ok] / rnorm[ok, None]
    rhs = rhs[ok] / rnorm[ok]
    rhs = rhs - LP_RELAX * np.abs(rhs)

    res = solve_lp(cost / cnorm, rows, rhs, bounds, tol)
    if res.status == UNBOUNDED:
        # limite da caixa: min de θ·w sobre 𝓑
        return float(np.sum(np.minimum(theta * box[:, 0], theta * box[:, 1])))
    if not res.ok:
        raise ModelError(f"LP do SCM terminou com status '{res.status}'")
    return float(res.objective * cnorm)


@dataclass(eq=False)
class ScmModel:
    """Estado do SCM: caixa, pontos escolhidos com α exato e vetores w."""

    box: np.ndarray
    points: np.ndarray
    selected: List[int]
    alphas: np.ndarray
    w_ub: np.ndarray
    lb_cache: np.ndarray
    m1: int
    m2: int
    tol: float
    ranges: ParameterRanges
    theta: Optional[Callable[[ParameterPoint], np.ndarray]] = None
    eta_history: List[float] = field(default_factory=list)
    nonnegative: bool = True
    _thetas: Optional[np.ndarray] = field(default=None, repr=False)
    _cache: Dict[Tuple[float, float], float] = field(default_factory=dict, repr=False)

    @property
    def n_selected(self) -> int:
        return len(self.selected)

    @property
    def coords(self) -> np.ndarray:
        return np.log10(self.points)

    @property
    def training_thetas(self) -> np.ndarray:
        if self._thetas is None:
            self._thetas = np.array([self.theta(ParameterPoint(*p)) for p in self.points])
        return self._thetas

    def _neighbors(self, coords: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        all_coords = self.coords
        sel = np.array(self.selected, dtype=np.int64)
        d_sel = np.linalg.norm(all_coords[sel] - coords, axis=1)
        near_sel = sel[np.argsort(d_sel, kind="stable")[: self.m1]]
        others = np.setdiff1d(np.arange(self.points.shape[0]), sel)
        others = others[np.isfinite(self.lb_cache[others])]
        d_oth = np.linalg.norm(all_coords[others] - coords, axis=1)
        near_oth = others[np.argsort(d_oth, kind="stable")[: self.m2]]
        return near_sel, near_oth

    def _lower_bound(self, theta: np.ndarray, coords: np.ndarray) -> float:
        near_sel, near_oth = self._neighbors(coords)
        thetas = self.training_thetas
        rows = np.vstack([thetas[near_sel], thetas[near_oth]])
        alpha_of = dict(zip(self.selected, self.alphas))
        rhs = np.concatenate([[alpha_of[int(j)] for j in near_sel], self.lb_cache[near_oth]])
        lb = _scaled_lp(theta, rows, rhs, self.box, LP_TOL)
        return max(lb, 0.0) if self.nonnegative else lb

    def upper_bound(self, xi: ParameterPoint) -> float:
        return alpha_ub(self, xi)

    def lower_bound(self, xi: ParameterPoint) -> float:
        return alpha_lb(self, xi)

    def to_parts(self, prefix: str = "scm/") -> Dict[str, np.ndarray]:
        return {
            prefix + "box": self.box,
            prefix + "points": self.points,
            prefix + "selected": np.array(self.selected, dtype=np.int64),
            prefix + "alphas": self.alphas,
            prefix + "w_ub": self.w_ub,
            prefix + "lb_cache": self.lb_cache,
            prefix + "settings": np.array([self.m1, self.m2, self.tol, float(self.nonnegative)]),
            prefix + "ranges": self.ranges.bounds,
            prefix + "eta_history": np.array(self.eta_history, dtype=float),
        }

    @classmethod
    def from_parts(cls, parts: Dict[str, np.ndarray], theta, prefix: str = "scm/") -> "ScmModel":
        m1, m2, tol, nonneg = parts[prefix + "settings"]
        rb = np.array(parts[prefix + "ranges"])
        model = cls(
            box=np.array(parts[prefix + "box"]),
            points=np.array(parts[prefix + "points"]),
            selected=[int(i) for i in parts[prefix + "selected"]],
            alphas=np.array(parts[prefix + "alphas"]),
            w_ub=np.array(parts[prefix + "w_ub"]),
            lb_cache=np.array(parts[prefix + "lb_cache"]),
            m1=int(m1),
            m2=int(m2),
            tol=float(tol),
            ranges=ParameterRanges(tuple(rb[0]), tuple(rb[1])),
            theta=theta,
            eta_history=[float(v) for v in parts[prefix + "eta_history"]],
            nonnegative=bool(nonneg),
        )
        for p, lb in zip(model.points, model.lb_cache):
            if np.isfinite(lb):
                model._cache[tuple(p)] = float(lb)
        return model


def _key(xi: ParameterPoint) -> Tuple[float, float]:
    return (xi.kappa1, xi.kappa2)


def alpha_ub(model: ScmModel, xi: ParameterPoint) -> float:
    model.ranges.check(xi)
    return float(np.min(model.w_ub @ model.theta(xi)))


def alpha_lb(model: ScmModel, xi: ParameterPoint) -> float:
    """Limite inferior certificado; valores ficam em cache por ξ."""
    model.ranges.check(xi)
    key = _key(xi)
    if key not in model._cache:
        model._cache[key] = model._lower_bound(model.theta(xi), xi.log10())
    return model._cache[key]


def exact_coercivity(
    affine_sym: Sequence[sp.spmatrix],
    theta: np.ndarray,
    energy: EnergyMatrix,
    dense_limit: int = DENSE_EIG_LIMIT,
) -> Tuple[float, np.ndarray]:
    """α(ξ) exato e o vetor w correspondente (problema generalizado de autovalores)."""
    A = sp.csr_matrix(affine_sym[0].shape)
    for t, S in zip(theta, affine_sym):
        if t != 0.0:
            A = A + t * S
    lam, y = generalized_eig(A.tocsr(), energy.matrix, "min", dense_limit)
    return lam, coercivity_vector(affine_sym, y)


def scm_train(
    affine_sym: Sequence[sp.spmatrix],
    theta: Callable[[ParameterPoint], np.ndarray],
    energy: EnergyMatrix,
    training: Sequence[ParameterPoint],
    ranges: ParameterRanges,
    m1: int = SCM_M,
    m2: int = SCM_M,
    tol: float = SCM_TOL,
    xi_star: Optional[ParameterPoint] = None,
    max_iterations: int = SCM_MAX_ITERATIONS,
    dense_limit: int = DENSE_EIG_LIMIT,
    workers: int = 1,
    quiet: bool = True,
) -> ScmModel:
    """Laço guloso de construção de Ξ_M até ``max η ≤ tol``.

    O primeiro ponto é o de treinamento mais próximo de ξ* em escala log;
    os seguintes maximizam ``η = (α_UB - α_LB) / α_UB``.
    """

    if len(training) == 0:
        raise ValueError("Conjunto de treinamento vazio")
    box = constraint_box(affine_sym, energy, dense_limit)
    log.info(f"SCM: caixa 𝓑 com {box.shape[0]} termos")
    points = np.array([p.as_array() for p in training])
    L = points.shape[0]
    model = ScmModel(
        box=box,
        points=points,
        selected=[],
        alphas=np.empty(0),
        w_ub=np.empty((0, box.shape[0])),
        lb_cache=np.full(L, -np.inf),
        m1=m1,
        m2=m2,
        tol=tol,
        ranges=ranges,
        theta=theta,
    )
    thetas = model.training_thetas
    coords = log_coordinates(training)

    target = (xi_star or ranges.log_midpoint()).log10()
    pick = int(np.argmin(np.linalg.norm(coords - target, axis=1)))
    bar = tqdm(total=max_iterations, desc="SCM", disable=quiet, leave=False)
    for it in range(max_iterations):
        alpha, w = exact_coercivity(affine_sym, thetas[pick], energy, dense_limit)
        model.selected.append(pick)
        model.alphas = np.append(model.alphas, alpha)
        model.w_ub = np.vstack([model.w_ub, w])

        ub = np.min(thetas @ model.w_ub.T, axis=1)
        lb = np.array(parallel_map(lambda l: model._lower_bound(thetas[l], coords[l]), range(L), workers))
        # cotas de rodadas anteriores continuam válidas
        model.lb_cache = np.maximum(lb, model.lb_cache)
        lb = model.lb_cache
        floor = max(1e-12 * float(np.max(np.abs(ub))), np.finfo(float).tiny)
        eta = (ub - lb) / np.maximum(ub, floor)
        worst = float(np.max(eta))
        model.eta_history.append(worst)
        bar.update()
        log.info(f"SCM rodada {it + 1}: |Ξ_M| = {model.n_selected}, max η = {worst:.3e}")
        if worst <= tol:
            break
        candidates = np.setdiff1d(np.arange(L), model.selected)
        if candidates.size == 0:
            log.warning("SCM esgotou o conjunto de treinamento")
            break
        pick = int(candidates[np.argmax(eta[candidates])])
    else:
        log.warning(f"SCM atingiu {max_iterations} iterações com max η = {model.eta_history[-1]:.3e}")
    bar.close()
    for l in range(L):
        model._cache[tuple(points[l])] = float(model.lb_cache[l])
    return model


@dataclass(eq=False)
class ExactCoercivity:
    """Oráculo de coercividade exata (instâncias pequenas ou SCM desativado)."""

    affine_sym: Sequence[sp.spmatrix]
    theta: Callable[[ParameterPoint], np.ndarray]
    energy: EnergyMatrix
    ranges: Optional[ParameterRanges] = None
    dense_limit: int = DENSE_EIG_LIMIT
    _cache: Dict[Tuple[float, float], float] = field(default_factory=dict, repr=False)

    def value(self, xi: ParameterPoint) -> float:
        if self.ranges is not None:
            self.ranges.check(xi)
        key = _key(xi)
        if key not in self._cache:
            self._cache[key] = exact_coercivity(self.affine_sym, self.theta(xi), self.energy, self.dense_limit)[0]
        return self._cache[key]

    def lower_bound(self, xi: ParameterPoint) -> float:
        return self.value(xi)

    def upper_bound(self, xi: ParameterPoint) -> float:
        return self.value(xi)


__all__ = [
    "LP_TOL",
    "SCM_TOL",
    "SCM_M",
    "CoercivityBound",
    "coercivity_vector",
    "constraint_box",
    "ScmModel",
    "alpha_lb",
    "alpha_ub",
    "exact_coercivity",
    "scm_train",
    "ExactCoercivity",
]
