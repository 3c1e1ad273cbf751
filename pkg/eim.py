"""Interpolação empírica do vetor de coeficientes MPFA e decomposição afim.

Os fluxos dependem de ξ de forma não afim somente através de v̂(ξ). O EIM
aproxima ``v̂(ξ) ≈ Σ θ_m(ξ) ṽ^m`` e cada ṽ^m passa pelo mesmo mapa linear
de montagem, gerando termos ``A_m, b_m, l_m, c_m`` independentes de ξ. O
termo de poço é afim por zona e entra como termo extra exato.
"""

import logging
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from errors import DegenerateInputError
from mpfa import EntryRecipe, HFOperator, MpfaDiscretization, ParameterPoint, entry_recipe
from sampling import parallel_map

log = logging.getLogger(__name__)

EIM_TOL = 1e-12
EIM_MAX_TERMS = 40
STAGNATION_RATIO = 1e-14

CONVERGED, MAX_TERMS, STAGNATED = "converged", "max_terms", "stagnated"


@dataclass(frozen=True, eq=False)
class EimModel:
    """Base ``ṽ¹…ṽ^M`` (linhas de ``basis``), índices de interpolação e matriz B."""

    basis: np.ndarray
    indices: np.ndarray
    B: np.ndarray
    tolerance: float
    errors: np.ndarray
    selected: np.ndarray
    stop_reason: str

    @property
    def n_terms(self) -> int:
        return int(self.indices.size)

    @property
    def max_error(self) -> float:
        return float(self.errors[-1])

    def to_parts(self, prefix: str = "eim/") -> Dict[str, np.ndarray]:
        return {
            prefix + "basis": self.basis,
            prefix + "indices": self.indices.astype(np.int64),
            prefix + "B": self.B,
            prefix + "tolerance": np.array([self.tolerance]),
            prefix + "errors": self.errors,
            prefix + "selected": self.selected.astype(np.int64),
            prefix + "stop_reason": np.frombuffer(self.stop_reason.encode(), dtype=np.uint8),
        }

    @classmethod
    def from_parts(cls, parts: Dict[str, np.ndarray], prefix: str = "eim/") -> "EimModel":
        return cls(
            basis=np.array(parts[prefix + "basis"]),
            indices=np.array(parts[prefix + "indices"]),
            B=np.array(parts[prefix + "B"]),
            tolerance=float(parts[prefix + "tolerance"][0]),
            errors=np.array(parts[prefix + "errors"]),
            selected=np.array(parts[prefix + "selected"]),
            stop_reason=bytes(parts[prefix + "stop_reason"]).decode(),
        )


def _coefficients(B: np.ndarray, values: np.ndarray) -> np.ndarray:
    if B.shape[0] == 0:
        return np.zeros((0,) + np.shape(values)[1:])
    return sla.solve_triangular(B, values, lower=True, unit_diagonal=True, check_finite=False)


def eim_evaluate(model: EimModel, values: np.ndarray) -> np.ndarray:
    """θ(ξ) a partir de ``v̂(ξ)`` nos índices de interpolação (substituição direta)."""
    values = np.asarray(values, dtype=float)
    if values.shape[0] != model.n_terms:
        raise ValueError(f"Esperados {model.n_terms} valores, recebidos {values.shape[0]}")
    return _coefficients(model.B, values)


def interpolate(model: EimModel, vhat: np.ndarray) -> np.ndarray:
    """``I_M[v̂]`` para um vetor completo."""
    vhat = np.asarray(vhat, dtype=float)
    return eim_evaluate(model, vhat[model.indices]) @ model.basis


def _stack(snapshots: Sequence[np.ndarray]) -> Tuple[np.ndarray, np.ndarray, int]:
    """Empilha snapshots e mantém apenas as colunas ativas (não nulas em algum)."""
    S = sp.vstack([sp.csr_matrix(np.asarray(v, dtype=float).reshape(1, -1)) for v in snapshots]).tocsc()
    active = np.flatnonzero(np.diff(S.indptr))
    return S[:, active].toarray(), active, S.shape[1]


def eim_train(
    source: Callable[[ParameterPoint], np.ndarray],
    training: Sequence[ParameterPoint],
    tol: float = EIM_TOL,
    max_terms: int = EIM_MAX_TERMS,
    workers: int = 1,
    quiet: bool = True,
) -> EimModel:
    """Treinamento guloso do EIM sobre o conjunto de treinamento.

    O erro de cada snapshot é medido relativo a ``‖v̂(ξ)‖∞``; o primeiro
    snapshot escolhido é o de maior ``‖v̂‖∞`` e empates ficam com o menor
    índice.
    """

    if len(training) == 0:
        raise ValueError("Conjunto de treinamento vazio")
    snapshots = parallel_map(source, training, workers, desc="EIM snapshots", quiet=quiet)
    X, active, n_entries = _stack(snapshots)
    scale = np.max(np.abs(X), axis=1, initial=0.0)
    if not np.any(scale > 0):
        raise DegenerateInputError("Snapshot inicial do EIM é nulo")
    safe = np.where(scale > 0, scale, 1.0)

    basis: List[np.ndarray] = []
    local_idx: List[int] = []
    selected: List[int] = []
    errors = [1.0]
    R = X.copy()
    stop = MAX_TERMS
    while True:
        rel = np.max(np.abs(R), axis=1) / safe
        if not basis:
            pick = int(np.argmax(scale))
        else:
            errors.append(float(rel.max()))
            if errors[-1] < tol:
                stop = CONVERGED
                break
            pick = int(np.argmax(rel))
        if len(basis) >= max_terms:
            break
        r = R[pick]
        j = int(np.argmax(np.abs(r)))
        if abs(r[j]) < STAGNATION_RATIO * scale[pick]:
            stop = STAGNATED
            log.warning(f"EIM estagnou com M = {len(basis)}: resíduo {abs(r[j]):.3e}")
            break
        v = r / r[j]
        basis.append(v)
        local_idx.append(j)
        selected.append(pick)
        # resíduos contra a base atual
        Q = np.array(basis)
        B = Q[:, local_idx].T
        theta = _coefficients(B, X[:, local_idx].T)
        R = X - theta.T @ Q
        log.debug(f"EIM M = {len(basis)}: índice {active[j]}, ξ #{pick}")

    Q = np.array(basis)
    B = Q[:, local_idx].T if basis else np.zeros((0, 0))
    full = np.zeros((len(basis), n_entries))
    full[:, active] = Q
    model = EimModel(
        basis=full,
        indices=active[np.array(local_idx, dtype=np.int64)],
        B=np.ascontiguousarray(B),
        tolerance=tol,
        errors=np.array(errors),
        selected=np.array(selected, dtype=np.int64),
        stop_reason=stop,
    )
    log.info(f"EIM: M = {model.n_terms}, erro máximo {model.max_error:.3e} ({stop})")
    return model


@dataclass(frozen=True, eq=False)
class AffineCoefficients:
    """Avaliador θ(ξ): coeficientes EIM seguidos das mobilidades das zonas com poço."""

    recipe: EntryRecipe
    B: np.ndarray
    mu: float
    well_zones: np.ndarray

    @property
    def n_terms(self) -> int:
        return int(self.B.shape[0] + self.well_zones.size)

    def __call__(self, xi: ParameterPoint) -> np.ndarray:
        lam = xi.as_array() / self.mu
        theta = _coefficients(self.B, self.recipe.evaluate(lam)) if self.B.shape[0] else np.zeros(0)
        return np.concatenate([theta, lam[self.well_zones - 1]])

    def to_parts(self, prefix: str = "theta/") -> Dict[str, np.ndarray]:
        parts = self.recipe.to_parts(prefix + "recipe/")
        parts[prefix + "B"] = self.B
        parts[prefix + "mu"] = np.array([self.mu])
        parts[prefix + "well_zones"] = self.well_zones.astype(np.int64)
        return parts

    @classmethod
    def from_parts(cls, parts: Dict[str, np.ndarray], prefix: str = "theta/") -> "AffineCoefficients":
        return cls(
            recipe=EntryRecipe.from_parts(parts, prefix + "recipe/"),
            B=np.array(parts[prefix + "B"]),
            mu=float(parts[prefix + "mu"][0]),
            well_zones=np.array(parts[prefix + "well_zones"]),
        )


@dataclass(eq=False)
class AffineModel:
    """``A(ξ) = Σ θ_d(ξ) A_d`` e idem para b, l e c; M não depende de ξ."""

    a_terms: List[sp.csr_matrix]
    b_terms: List[np.ndarray]
    l_terms: List[np.ndarray]
    c_terms: np.ndarray
    theta: Callable[[ParameterPoint], np.ndarray]
    mass: sp.csr_matrix
    n_cells: int
    _sym: Optional[List[sp.csr_matrix]] = field(default=None, repr=False)

    @property
    def n_terms(self) -> int:
        return len(self.a_terms)

    @property
    def size(self) -> int:
        return self.mass.shape[0]

    @property
    def sym_terms(self) -> List[sp.csr_matrix]:
        if self._sym is None:
            self._sym = [sp.csr_matrix(0.5 * (A + A.T)) for A in self.a_terms]
        return self._sym

    def matrix(self, theta: np.ndarray) -> sp.csr_matrix:
        A = sp.csr_matrix(self.mass.shape)
        for t, A_d in zip(theta, self.a_terms):
            if t != 0.0:
                A = A + t * A_d
        return A.tocsr()

    def load(self, theta: np.ndarray) -> np.ndarray:
        return np.einsum("d,dn->n", theta, np.array(self.b_terms)) if self.b_terms else np.zeros(self.size)

    def qoi(self, theta: np.ndarray) -> Tuple[np.ndarray, float]:
        l = np.einsum("d,dn->n", theta, np.array(self.l_terms)) if self.l_terms else np.zeros(self.size)
        return l, float(np.dot(theta, self.c_terms))

    def operator(self, xi: ParameterPoint, dt: Optional[float] = None) -> HFOperator:
        """Operador HF afim em ξ (verdade usada pelo guloso e pela validação)."""
        theta = self.theta(xi)
        l, c = self.qoi(theta)
        return HFOperator(self.matrix(theta), self.mass, self.load(theta), l, c, self.n_cells, dt)

    def to_parts(self, prefix: str = "affine/") -> Dict[str, np.ndarray]:
        parts: Dict[str, np.ndarray] = {}
        for d, A in enumerate(self.a_terms):
            A = sp.csr_matrix(A)
            parts[f"{prefix}A{d}/data"] = A.data
            parts[f"{prefix}A{d}/indices"] = A.indices.astype(np.int64)
            parts[f"{prefix}A{d}/indptr"] = A.indptr.astype(np.int64)
        parts[prefix + "b"] = np.array(self.b_terms).reshape(self.n_terms, self.size)
        parts[prefix + "l"] = np.array(self.l_terms).reshape(self.n_terms, self.size)
        parts[prefix + "c"] = np.asarray(self.c_terms, dtype=float)
        parts[prefix + "mass"] = self.mass.diagonal()
        parts[prefix + "n_cells"] = np.array([self.n_cells], dtype=np.int64)
        if isinstance(self.theta, AffineCoefficients):
            parts.update(self.theta.to_parts(prefix + "theta/"))
        return parts

    @classmethod
    def from_parts(cls, parts: Dict[str, np.ndarray], prefix: str = "affine/") -> "AffineModel":
        mass = np.array(parts[prefix + "mass"])
        n = mass.size
        b = np.array(parts[prefix + "b"])
        a_terms = [
            sp.csr_matrix(
                (np.array(parts[f"{prefix}A{d}/data"]), np.array(parts[f"{prefix}A{d}/indices"]), np.array(parts[f"{prefix}A{d}/indptr"])),
                shape=(n, n),
            )
            for d in range(b.shape[0])
        ]
        return cls(
            a_terms=a_terms,
            b_terms=list(b),
            l_terms=list(np.array(parts[prefix + "l"])),
            c_terms=np.array(parts[prefix + "c"]),
            theta=AffineCoefficients.from_parts(parts, prefix + "theta/"),
            mass=sp.diags(mass, format="csr"),
            n_cells=int(parts[prefix + "n_cells"][0]),
        )


def build_affine_operators(model: EimModel, disc: MpfaDiscretization) -> AffineModel:
    """Monta ``A_d, b_d, l_d, c_d`` substituindo ṽ^d no mapa de fluxos."""

    a_terms, b_terms, l_terms, c_terms = [], [], [], []
    for v in model.basis:
        flux = disc.flux_operator(v)
        a_terms.append(flux.A)
        b_terms.append(flux.b)
        l_terms.append(flux.l)
        c_terms.append(flux.c)
    zones = []
    for zone, A_w, b_w in disc.well_terms():
        zones.append(zone)
        a_terms.append(A_w)
        b_terms.append(b_w)
        l_terms.append(np.zeros(disc.n_unknowns))
        c_terms.append(0.0)
    theta = AffineCoefficients(
        recipe=entry_recipe(disc.mesh, model.indices),
        B=model.B,
        mu=disc.props.mu,
        well_zones=np.array(zones, dtype=np.int64),
    )
    log.info(f"Decomposição afim: {len(a_terms)} termos ({model.n_terms} EIM, {len(zones)} de poço)")
    return AffineModel(a_terms, b_terms, l_terms, np.array(c_terms), theta, disc.mass_matrix(), disc.n_cells)


def train_affine_model(
    disc: MpfaDiscretization,
    training: Sequence[ParameterPoint],
    tol: float = EIM_TOL,
    max_terms: int = EIM_MAX_TERMS,
    workers: int = 1,
    quiet: bool = True,
) -> Tuple[EimModel, AffineModel]:
    model = eim_train(disc.coefficient_vector, training, tol, max_terms, workers, quiet)
    return model, build_affine_operators(model, disc)


def affine_error(affine: AffineModel, disc: MpfaDiscretization, xi: ParameterPoint) -> Tuple[float, float]:
    """Erros relativos (Frobenius em A, euclidiano em b) contra a montagem direta."""
    exact = disc.assemble(xi)
    approx = affine.operator(xi)
    ea = spla.norm(approx.A - exact.A) / max(spla.norm(exact.A), 1e-300)
    eb = np.linalg.norm(approx.b - exact.b) / max(np.linalg.norm(exact.b), 1e-300)
    return float(ea), float(eb)


__all__ = [
    "EIM_TOL",
    "EIM_MAX_TERMS",
    "CONVERGED",
    "MAX_TERMS",
    "STAGNATED",
    "EimModel",
    "eim_evaluate",
    "interpolate",
    "eim_train",
    "AffineCoefficients",
    "AffineModel",
    "build_affine_operators",
    "train_affine_model",
    "affine_error",
]
