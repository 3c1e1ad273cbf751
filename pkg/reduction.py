import logging
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np
import scipy.linalg as sla

from energy import EnergyMatrix

log = logging.getLogger(__name__)

PRIMAL, DUAL = "primal", "dual"
DEFAULT_RIC = 1.0 - 1e-8
DROP_TOL = 1e-12
RANK_TOL = 1e-13


@dataclass
class ReducedBasis:
    """Colunas G*-ortonormais ``Z`` e o histórico de crescimento."""

    Z: np.ndarray
    role: str = PRIMAL
    selected: List[Tuple[float, float]] = field(default_factory=list)
    increments: List[int] = field(default_factory=list)

    @property
    def dimension(self) -> int:
        return int(self.Z.shape[1])

    @property
    def size(self) -> int:
        return int(self.Z.shape[0])

    @classmethod
    def empty(cls, size: int, role: str = PRIMAL) -> "ReducedBasis":
        return cls(np.zeros((size, 0)), role)

    def orthonormality_error(self, energy: EnergyMatrix) -> float:
        if self.dimension == 0:
            return 0.0
        gram = self.Z.T @ (energy.matrix @ self.Z)
        return float(np.max(np.abs(gram - np.eye(self.dimension))))


def gram_schmidt(vectors: np.ndarray, energy: EnergyMatrix, against: Optional[np.ndarray] = None, drop_tol: float = DROP_TOL) -> np.ndarray:
    """Gram-Schmidt modificado com reortogonalização no produto G*.

    Cada coluna passa duas vezes contra ``against`` e contra as já aceitas;
    colunas com norma final abaixo de ``drop_tol`` vezes a original são
    descartadas.
    """

    V = np.asarray(vectors, dtype=float)
    if V.ndim == 1:
        V = V[:, None]
    if V.shape[0] != energy.size:
        raise ValueError(f"Vetores com {V.shape[0]} linhas, G* tem dimensão {energy.size}")
    G = energy.matrix
    base = np.zeros((energy.size, 0)) if against is None else np.asarray(against, dtype=float)
    G_base = G @ base if base.shape[1] else base
    accepted: List[np.ndarray] = []
    G_accepted: List[np.ndarray] = []
    dropped = 0
    for k in range(V.shape[1]):
        v = V[:, k].copy()
        Gv = G @ v
        norm0 = np.sqrt(max(float(v @ Gv), 0.0))
        if norm0 == 0.0 or not np.isfinite(norm0):
            dropped += 1
            continue
        for _ in range(2):
            if base.shape[1]:
                coef = base.T @ Gv
                v -= base @ coef
                Gv -= G_base @ coef
            for z, Gz in zip(accepted, G_accepted):
                coef = float(z @ Gv)
                v -= coef * z
                Gv -= coef * Gz
        Gv = G @ v
        norm = np.sqrt(max(float(v @ Gv), 0.0))
        if norm < drop_tol * norm0:
            dropped += 1
            continue
        accepted.append(v / norm)
        G_accepted.append(Gv / norm)
    if dropped:
        log.debug(f"Gram-Schmidt descartou {dropped} vetor(es) dependentes")
    if not accepted:
        return np.zeros((energy.size, 0))
    return np.column_stack(accepted)


def pod(S: np.ndarray, energy: EnergyMatrix, ric: float = DEFAULT_RIC) -> Tuple[np.ndarray, np.ndarray]:
    """POD pela matriz de correlação ``C = SᵀG*S``.

    Returns
    -------
    modes, eigenvalues
        Modos G*-ortonormais (colunas) e autovalores em ordem decrescente.
    """

    if not 0.0 < ric <= 1.0:
        raise ValueError(f"ric fora de (0, 1]: {ric}")
    S = np.asarray(S, dtype=float)
    if S.ndim == 1:
        S = S[:, None]
    if S.shape[1] == 0 or not np.any(S):
        return np.zeros((S.shape[0], 0)), np.zeros(0)
    C = S.T @ (energy.matrix @ S)
    C = 0.5 * (C + C.T)
    lam, V = sla.eigh(C)
    lam, V = lam[::-1], V[:, ::-1]
    lam = np.clip(lam, 0.0, None)
    if lam[0] <= 0.0:
        return np.zeros((S.shape[0], 0)), lam
    rank = int(np.sum(lam > RANK_TOL * lam[0]))
    captured = np.cumsum(lam[:rank]) / lam.sum()
    count = int(np.searchsorted(captured, ric * (1 - 1e-14))) + 1
    count = min(count, rank)
    modes = S @ V[:, :count] / np.sqrt(lam[:count])
    # reortogonaliza para absorver o erro de arredondamento da correlação
    modes = gram_schmidt(modes, energy)
    return modes, lam


def extend_basis(basis: ReducedBasis, vectors: np.ndarray, energy: EnergyMatrix) -> int:
    """Ortonormaliza ``vectors`` contra ``Z`` e anexa; devolve quantos entraram."""

    new = gram_schmidt(vectors, energy, against=basis.Z)
    if new.shape[1]:
        basis.Z = np.hstack([basis.Z, new])
    basis.increments.append(int(new.shape[1]))
    return int(new.shape[1])


def project(Z: np.ndarray, energy: EnergyMatrix, states: np.ndarray) -> np.ndarray:
    """Projeção G*-ortogonal ``Z Zᵀ G* x`` das linhas de ``states``."""
    states = np.atleast_2d(states)
    if Z.shape[1] == 0:
        return np.zeros_like(states)
    coeffs = (energy.matrix @ states.T).T @ Z
    return coeffs @ Z.T


def projection_error(Z: np.ndarray, energy: EnergyMatrix, states: np.ndarray) -> np.ndarray:
    return np.atleast_2d(states) - project(Z, energy, states)


__all__ = [
    "PRIMAL",
    "DUAL",
    "DEFAULT_RIC",
    "ReducedBasis",
    "gram_schmidt",
    "pod",
    "extend_basis",
    "project",
    "projection_error",
]
