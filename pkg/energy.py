import logging
from dataclasses import dataclass, field
from typing import Optional, Tuple

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from errors import EstimatorError, ModelError
from mpfa import ParameterPoint

log = logging.getLogger(__name__)

DENSE_EIG_LIMIT = 5000


def symmetric_part(A: sp.spmatrix) -> sp.csr_matrix:
    return sp.csr_matrix(0.5 * (A + A.T))


def spd_factor(G: sp.spmatrix):
    """Fatoração LU com pivôs na diagonal; pivôs positivos certificam G SPD."""

    try:
        lu = spla.splu(
            sp.csc_matrix(G),
            permc_spec="MMD_AT_PLUS_A",
            diag_pivot_thresh=0.0,
            options={"SymmetricMode": True},
        )
    except RuntimeError as e:
        raise ModelError(f"G* singular: {e}") from e
    pivots = lu.U.diagonal()
    if not np.all(np.isfinite(pivots)) or np.any(pivots <= 0):
        raise ModelError("G* não é SPD (há face de Dirichlet?)")
    return lu


@dataclass(frozen=True, eq=False)
class EnergyMatrix:
    """Matriz de energia G* com fatoração reutilizável (somente leitura)."""

    matrix: sp.csr_matrix
    dt: float
    xi_star: Optional[ParameterPoint] = None
    label: str = "M+dtA*"
    _lu: object = field(default=None, repr=False)

    @classmethod
    def from_matrix(cls, G: sp.spmatrix, dt: float, xi_star: Optional[ParameterPoint] = None, label: str = "M+dtA*") -> "EnergyMatrix":
        G = sp.csr_matrix(G)
        asym = abs(G - G.T).max() if G.nnz else 0.0
        if asym > 1e-12 * max(abs(G).max(), 1e-300):
            raise ModelError("G* não é simétrica")
        return cls(G, dt, xi_star, label, spd_factor(G))

    @property
    def size(self) -> int:
        return self.matrix.shape[0]

    def apply(self, v: np.ndarray) -> np.ndarray:
        return self.matrix @ v

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        """Aplica ``(G*)⁻¹`` a um vetor ou às colunas de uma matriz."""
        rhs = np.asarray(rhs, dtype=float)
        if rhs.ndim == 2 and rhs.shape[1] == 0:
            return rhs.copy()
        return self._lu.solve(rhs)

    def inner(self, u: np.ndarray, v: np.ndarray) -> float:
        return gstar_inner(self, u, v)

    def norm(self, v: np.ndarray) -> float:
        return gstar_norm(self, v)


def build_gstar(M: sp.spmatrix, A_star: sp.spmatrix, dt: float, xi_star: Optional[ParameterPoint] = None) -> EnergyMatrix:
    """Monta ``G* = M + Δt (A* + A*ᵀ)/2`` e verifica que é SPD."""

    G = sp.csr_matrix(M + dt * symmetric_part(A_star))
    energy = EnergyMatrix.from_matrix(G, dt, xi_star)
    log.info(f"G* montada: dimensão {energy.size}, nnz {G.nnz}")
    return energy


def gstar_inner(energy: EnergyMatrix, u: np.ndarray, v: np.ndarray) -> float:
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    if u.shape != (energy.size,) or v.shape != (energy.size,):
        raise ValueError(f"Dimensão incompatível com G*: {u.shape}, {v.shape}")
    return float(u @ (energy.matrix @ v))


def gstar_norm(energy: EnergyMatrix, v: np.ndarray) -> float:
    return float(np.sqrt(max(gstar_inner(energy, v, v), 0.0)))


def _dense(A) -> np.ndarray:
    return A.toarray() if sp.issparse(A) else np.asarray(A, dtype=float)


def generalized_eig(
    A: sp.spmatrix,
    B: sp.spmatrix,
    which: str = "min",
    dense_limit: int = DENSE_EIG_LIMIT,
    definite: bool = False,
) -> Tuple[float, np.ndarray]:
    """Autovalor extremo de ``A y = λ B y`` (A simétrica, B SPD) e autovetor.

    ``definite=True`` permite shift-invert em torno de zero no caminho esparso.
    """

    n = A.shape[0]
    if n <= dense_limit:
        index = 0 if which == "min" else n - 1
        try:
            w, V = sla.eigh(_dense(A), _dense(B), subset_by_index=[index, index])
        except (sla.LinAlgError, ValueError) as e:
            raise ModelError(f"Falha no problema de autovalores generalizado: {e}") from e
        lam, vec = float(w[0]), V[:, 0]
    else:
        v0 = np.ones(n)
        try:
            if which == "min" and definite:
                w, V = spla.eigsh(sp.csc_matrix(A), k=1, M=sp.csc_matrix(B), sigma=0.0, which="LM", v0=v0)
            else:
                w, V = spla.eigsh(sp.csc_matrix(A), k=1, M=sp.csc_matrix(B), which="SA" if which == "min" else "LA", v0=v0)
        except spla.ArpackError as e:
            raise ModelError(f"ARPACK não convergiu: {e}") from e
        lam, vec = float(w[0]), V[:, 0]
    scale = np.sqrt(float(vec @ (B @ vec)))
    return lam, vec / scale


def exact_alpha(A_sym: sp.spmatrix, energy: EnergyMatrix, dense_limit: int = DENSE_EIG_LIMIT) -> float:
    """Constante de coercividade exata ``inf vᵀA_sym v / ‖v‖²_{G*}`` (oráculo)."""
    return generalized_eig(A_sym, energy.matrix, "min", dense_limit, definite=True)[0]


def alpha_m(M: sp.spmatrix, energy: EnergyMatrix, dense_limit: int = DENSE_EIG_LIMIT) -> float:
    """``α_M``; zero quando M tem linhas nulas (incógnitas de face)."""

    if np.any(M.diagonal() == 0.0):
        return 0.0
    return generalized_eig(M, energy.matrix, "min", dense_limit, definite=True)[0]


def alpha_g_lb(alpha_lb: float, alpha_mass: float, dt: float) -> float:
    if alpha_lb < 0 or alpha_mass < 0 or dt < 0:
        raise EstimatorError(f"Limites negativos: α_LB={alpha_lb}, α_M={alpha_mass}")
    return dt * alpha_lb + alpha_mass


__all__ = [
    "DENSE_EIG_LIMIT",
    "symmetric_part",
    "spd_factor",
    "EnergyMatrix",
    "build_gstar",
    "gstar_inner",
    "gstar_norm",
    "generalized_eig",
    "exact_alpha",
    "alpha_m",
    "alpha_g_lb",
]
