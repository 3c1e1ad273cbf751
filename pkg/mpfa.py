import logging
from dataclasses import dataclass, fields
from functools import lru_cache
from itertools import combinations
from typing import Dict, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np
import scipy.sparse as sp

from errors import AssemblyError, ConfigurationError, DomainError, SingularFaceError
from mesh import DIRICHLET, INTERIOR, NEUMANN, Mesh

log = logging.getLogger(__name__)

SECONDS_PER_DAY = 86400.0


@dataclass(frozen=True)
class FluidRockProps:
    """Propriedades do fluido, da rocha, do poço e do contorno (SI)."""

    mu: float = 1.5e-5
    c_t: float = 1.4e-7
    phi: float = 0.2
    rho: float = 700.0
    g: float = 9.81
    p_bh: float = 4.13e7
    z_bh: float = 0.0
    r_w: float = 0.1
    skin: float = 0.0
    p_D: float = 1e5
    z_D: float = 80.0

    def __post_init__(self) -> None:
        for name in ("mu", "c_t", "phi", "rho", "g", "r_w"):
            if not getattr(self, name) > 0:
                raise ConfigurationError(f"Propriedade {name} precisa ser positiva")

    @property
    def rho_g(self) -> float:
        return self.rho * self.g


@dataclass(frozen=True)
class ParameterPoint:
    """Permeabilidades (m²) do reservatório e da rocha capeadora."""

    kappa1: float
    kappa2: float

    def as_array(self) -> np.ndarray:
        return np.array([self.kappa1, self.kappa2], dtype=float)

    def log10(self) -> np.ndarray:
        return np.log10(self.as_array())

    def mobilities(self, props: FluidRockProps) -> np.ndarray:
        return self.as_array() / props.mu


@dataclass(frozen=True)
class ParameterRanges:
    kappa1: Tuple[float, float] = (1e-13, 1e-12)
    kappa2: Tuple[float, float] = (1e-17, 1e-15)

    def __post_init__(self) -> None:
        for name in ("kappa1", "kappa2"):
            lo, hi = getattr(self, name)
            if not (0 < lo <= hi):
                raise ConfigurationError(f"Intervalo inválido para {name}: {lo}, {hi}")

    @property
    def bounds(self) -> np.ndarray:
        return np.array([self.kappa1, self.kappa2], dtype=float)

    def contains(self, xi: ParameterPoint, rtol: float = 1e-12) -> bool:
        b = self.bounds
        x = xi.as_array()
        return bool(np.all(x >= b[:, 0] * (1 - rtol)) and np.all(x <= b[:, 1] * (1 + rtol)))

    def check(self, xi: ParameterPoint) -> None:
        if not self.contains(xi):
            raise DomainError(f"Parâmetro fora dos intervalos configurados: {xi}")

    def log_midpoint(self) -> ParameterPoint:
        k1, k2 = np.sqrt(self.bounds.prod(axis=1))
        return ParameterPoint(float(k1), float(k2))


class HarmonicPoint(NamedTuple):
    x: np.ndarray
    omega_k: float
    omega_l: float


class Conormal(NamedTuple):
    alpha: np.ndarray
    stencil: Tuple[int, ...]


@dataclass(frozen=True)
class HFOperator:
    """Operador de alta fidelidade para um parâmetro fixo."""

    A: sp.csr_matrix
    M: sp.csr_matrix
    b: np.ndarray
    l: np.ndarray
    c: float
    n_cells: int
    dt: Optional[float] = None

    @property
    def size(self) -> int:
        return int(self.b.size)


def harmonic_weights(d_k, d_l, tau_k, tau_l) -> Tuple[np.ndarray, np.ndarray]:
    """Pesos ω do ponto de média harmônica (caso isotrópico), vetorizados."""

    d_k, d_l, tau_k, tau_l = np.broadcast_arrays(*(np.asarray(v, dtype=float) for v in (d_k, d_l, tau_k, tau_l)))
    den = d_l * tau_k + d_k * tau_l
    if np.any(den <= 0):
        raise SingularFaceError("Mobilidade nula dos dois lados de uma face")
    omega_k = d_l * tau_k / den
    return omega_k, 1.0 - omega_k


def harmonic_point(d_k: float, d_l: float, lam_k: float, lam_l: float, y_k, y_l) -> HarmonicPoint:
    """Ponto de média harmônica ``x_σ = ω_K y_K + ω_L y_L`` de uma face ``K|L``.

    Parameters
    ----------
    d_k, d_l:
        Distâncias ortogonais dos centros à face.
    lam_k, lam_l:
        Mobilidades isotrópicas das duas células.
    y_k, y_l:
        Projeções ortogonais dos centros sobre o plano da face.
    """

    if not (d_k > 0 and d_l > 0):
        raise AssemblyError("Distâncias à face precisam ser positivas")
    wk, wl = harmonic_weights(d_k, d_l, lam_k, lam_l)
    x = float(wk) * np.asarray(y_k, dtype=float) + float(wl) * np.asarray(y_l, dtype=float)
    return HarmonicPoint(x, float(wk), float(wl))


def conormal_decomposition(target, candidates, tol: float = 1e-9) -> Conormal:
    """Decompõe ``Λ_K n_{K,σ}`` sobre os vetores ``x_{σ'} - x_K``.

    Busca exaustiva em estênceis de até três vetores; preferência lexicográfica:
    coeficientes não negativos, estêncil menor, menor soma. Sem solução exata,
    usa mínimos quadrados sobre todas as faces.
    """

    t = np.asarray(target, dtype=float)
    V = np.asarray(candidates, dtype=float)
    m = V.shape[0]
    scale = float(np.linalg.norm(t))
    if scale == 0.0:
        return Conormal(np.zeros(m), ())
    if np.linalg.matrix_rank(V) < 3:
        raise AssemblyError("Vetores candidatos não geram o R³")

    best_key, best = None, None
    for size in (1, 2, 3):
        for subset in combinations(range(m), size):
            Vs = V[list(subset)].T
            coef = np.linalg.lstsq(Vs, t, rcond=None)[0]
            if np.linalg.norm(Vs @ coef - t) > tol * scale:
                continue
            nonneg = bool(np.all(coef >= -1e-12 * np.max(np.abs(coef))))
            weight = float(coef.sum()) if nonneg else float(np.abs(coef).sum())
            key = (0 if nonneg else 1, size, weight, subset)
            if best_key is None or key < best_key:
                best_key, best = key, (subset, coef)
        if best_key is not None and best_key[0] == 0:
            break

    alpha = np.zeros(m)
    if best is None:
        alpha = np.linalg.lstsq(V.T, t, rcond=None)[0]
        return Conormal(alpha, tuple(int(i) for i in np.flatnonzero(alpha)))
    subset, coef = best
    if best_key[0] == 0:
        coef = np.clip(coef, 0.0, None)
    alpha[list(subset)] = coef
    return Conormal(alpha, tuple(s for s, v in zip(subset, coef) if v != 0.0))


@lru_cache(maxsize=8192)
def _unit_conormal(vkey: bytes, nkey: bytes) -> np.ndarray:
    V = np.frombuffer(vkey).reshape(-1, 3)
    n = np.frombuffer(nkey)
    alpha = conormal_decomposition(n, V).alpha
    alpha.setflags(write=False)
    return alpha


def well_index(lam1: float, lam2: float, h1: float, h2: float, h3: float, r_w: float, skin: float = 0.0) -> float:
    """Índice de poço de Peaceman ``WI = 2π h3 √(λ1λ2) / (ln(r_e/r_w) + s)``."""

    if lam1 < 0 or lam2 < 0:
        raise ConfigurationError(f"Mobilidade negativa no poço: λ1 = {lam1}, λ2 = {lam2}")
    if lam1 == 0 or lam2 == 0:
        return 0.0
    ratio = lam2 / lam1
    r_e = 0.14 * np.sqrt(np.sqrt(ratio) * h1**2 + np.sqrt(1.0 / ratio) * h2**2)
    r_e /= 0.5 * (ratio**0.25 + ratio**-0.25)
    if r_e <= r_w:
        raise ConfigurationError(f"Raio de Peaceman {r_e:.4g} m não excede r_w = {r_w} m")
    denom = np.log(r_e / r_w) + skin
    if denom <= 0:
        raise ConfigurationError("ln(r_e/r_w) + s_d precisa ser positivo")
    return float(2.0 * np.pi * h3 * np.sqrt(lam1 * lam2) / denom)


@dataclass(frozen=True, eq=False)
class CellGeometry:
    """Geometria local das células necessária aos coeficientes MPFA."""

    centers: np.ndarray
    zone: np.ndarray
    normals: np.ndarray
    interior: np.ndarray
    nb_zone: np.ndarray
    y_self: np.ndarray
    y_other: np.ndarray
    d_self: np.ndarray
    d_other: np.ndarray
    face_centers: np.ndarray

    def to_parts(self, prefix: str) -> Dict[str, np.ndarray]:
        return {prefix + f.name: np.asarray(getattr(self, f.name)) for f in fields(self)}

    @classmethod
    def from_parts(cls, parts: Dict[str, np.ndarray], prefix: str) -> "CellGeometry":
        return cls(**{f.name: np.array(parts[prefix + f.name]) for f in fields(cls)})


def cell_geometry(mesh: Mesh, cells: Sequence[int]) -> CellGeometry:
    cells = np.asarray(cells, dtype=np.int64)
    faces = mesh.cell_faces[cells]
    normals = mesh.cell_face_normals[cells]
    centers = mesh.cell_centers[cells]
    fc = mesh.face_centers[faces]
    nb = mesh.neighbors[cells]
    interior = nb >= 0
    safe_nb = np.where(interior, nb, 0)

    def project(points: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        offset = np.einsum("kab,kab->ka", points - fc, normals)
        return points - offset[..., None] * normals, np.abs(offset)

    y_self, d_self = project(np.broadcast_to(centers[:, None, :], fc.shape))
    y_other, d_other = project(mesh.cell_centers[safe_nb])
    d_other = np.where(interior, d_other, 0.0)
    return CellGeometry(
        centers=centers,
        zone=mesh.zones[cells],
        normals=normals,
        interior=interior,
        nb_zone=np.where(interior, mesh.zones[safe_nb], 0),
        y_self=y_self,
        y_other=np.where(interior[..., None], y_other, fc),
        d_self=d_self,
        d_other=d_other,
        face_centers=fc,
    )


def cell_coefficients(geom: CellGeometry, lam_zone: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Coeficientes α ``(k, 6, 6)`` e α·ω ``(k, 6, 6, 2)`` de um lote de células."""

    lam_zone = np.asarray(lam_zone, dtype=float)
    lam_self = lam_zone[geom.zone - 1]
    lam_other = np.where(geom.interior, lam_zone[np.maximum(geom.nb_zone, 1) - 1], 0.0)
    d_other = np.where(geom.interior, geom.d_other, 1.0)
    wk, wl = harmonic_weights(geom.d_self, d_other, lam_self[:, None], np.where(geom.interior, lam_other, 1.0))
    wk = np.where(geom.interior, wk, 0.0)
    wl = np.where(geom.interior, wl, 0.0)

    x_sigma = np.where(
        geom.interior[..., None],
        wk[..., None] * geom.y_self + wl[..., None] * geom.y_other,
        geom.face_centers,
    )
    V = x_sigma - geom.centers[:, None, :]
    h = np.max(np.linalg.norm(V, axis=2), axis=1)

    k = geom.zone.size
    alpha = np.zeros((k, 6, 6))
    for c in range(k):
        if lam_self[c] == 0.0:
            continue
        vkey = (np.round(V[c] / h[c], 12) + 0.0).tobytes()
        for a in range(6):
            nkey = (np.round(geom.normals[c, a], 12) + 0.0).tobytes()
            alpha[c, a] = _unit_conormal(vkey, nkey) * (lam_self[c] / h[c])

    alpha_omega = np.empty((k, 6, 6, 2))
    alpha_omega[..., 0] = alpha * wk[:, None, :]
    alpha_omega[..., 1] = alpha * wl[:, None, :]
    return alpha, alpha_omega


@dataclass(frozen=True, eq=False)
class EntryRecipe:
    """Receita local para avaliar entradas selecionadas de v̂ sem a malha."""

    geometry: CellGeometry
    position: np.ndarray
    slot_a: np.ndarray
    slot_b: np.ndarray
    kind: np.ndarray

    def evaluate(self, lam_zone: np.ndarray) -> np.ndarray:
        alpha, alpha_omega = cell_coefficients(self.geometry, lam_zone)
        values = alpha[self.position, self.slot_a, self.slot_b]
        weighted = alpha_omega[self.position, self.slot_a, self.slot_b, np.maximum(self.kind - 1, 0)]
        return np.where(self.kind == 0, values, weighted)

    def to_parts(self, prefix: str) -> Dict[str, np.ndarray]:
        parts = self.geometry.to_parts(prefix + "geometry/")
        for name in ("position", "slot_a", "slot_b", "kind"):
            parts[prefix + name] = np.asarray(getattr(self, name), dtype=np.int64)
        return parts

    @classmethod
    def from_parts(cls, parts: Dict[str, np.ndarray], prefix: str) -> "EntryRecipe":
        return cls(
            geometry=CellGeometry.from_parts(parts, prefix + "geometry/"),
            **{name: np.array(parts[prefix + name]) for name in ("position", "slot_a", "slot_b", "kind")},
        )


def decode_entries(n_cells: int, indices: Sequence[int]) -> Tuple[np.ndarray, ...]:
    """Traduz índices de v̂ em ``(célula, slot a, slot b, tipo)``.

    ``tipo`` 0 é α, 1 é α·ω da própria célula, 2 é α·ω da vizinha.
    """

    j = np.asarray(indices, dtype=np.int64)
    n_alpha = 36 * n_cells
    if np.any((j < 0) | (j >= 3 * n_alpha)):
        raise AssemblyError("Índice fora do vetor de coeficientes")
    is_alpha = j < n_alpha
    pair = np.where(is_alpha, j, (j - n_alpha) // 2)
    kind = np.where(is_alpha, 0, 1 + (j - n_alpha) % 2)
    return pair // 36, (pair % 36) // 6, pair % 6, kind


def entry_recipe(mesh: Mesh, indices: Sequence[int]) -> EntryRecipe:
    cells, a, b, kind = decode_entries(mesh.n_cells, indices)
    unique, position = np.unique(cells, return_inverse=True)
    return EntryRecipe(cell_geometry(mesh, unique), position, a, b, kind)


@dataclass(frozen=True)
class FluxOperator:
    A: sp.csr_matrix
    b: np.ndarray
    l: np.ndarray
    c: float


class MpfaDiscretization:
    """Discretização MPFA média sobre uma malha rotulada.

    Os fluxos lineares ``F̃_{K,σ}`` dependem linearmente de v̂; o mapa
    ``v̂ ↦ (A, b, l, c)`` é montado uma vez e reaproveitado para qualquer ξ,
    inclusive para os vetores da base do EIM.
    """

    def __init__(self, mesh: Mesh, props: FluidRockProps) -> None:
        if not mesh.tagged:
            raise ConfigurationError("Malha sem rótulos de contorno")
        self.mesh = mesh
        self.props = props
        self.n_cells = mesh.n_cells
        self.n_unknowns = mesh.n_unknowns
        self.n_alpha = 36 * self.n_cells
        self.size = 3 * self.n_alpha
        self.geometry = cell_geometry(mesh, np.arange(self.n_cells))
        self._build_half_flux_terms()
        self._build_equations()

    def _build_half_flux_terms(self) -> None:
        mesh, rg = self.mesh, self.props.rho_g
        nc = self.n_cells
        K = np.repeat(np.arange(nc), 36)
        a = np.tile(np.repeat(np.arange(6), 6), nc)
        b = np.tile(np.arange(6), 6 * nc)
        j_alpha = np.arange(self.n_alpha)
        slot = K * 6 + a
        area = mesh.face_areas[mesh.cell_faces[K, a]]
        sprime = mesh.cell_faces[K, b]
        tag = mesh.face_tags[sprime]
        other = mesh.neighbors[K, b]
        z = mesh.cell_centers[:, 2]
        zf = mesh.face_centers[:, 2]

        H: List[Tuple[np.ndarray, ...]] = []
        h: List[Tuple[np.ndarray, ...]] = []
        # α (u_K - u_σ') para σ' no contorno, α u_K - α ω_K u_K - α ω_M u_M no interior
        H.append((slot, K, j_alpha, area))
        h.append((slot, j_alpha, area * rg * z[K]))

        m = tag == DIRICHLET
        p_dirichlet = self.props.p_D - rg * (zf[sprime[m]] - self.props.z_D)
        h.append((slot[m], j_alpha[m], -area[m] * (p_dirichlet + rg * zf[sprime[m]])))

        m = tag == NEUMANN
        H.append((slot[m], mesh.face_unknowns[sprime[m]], j_alpha[m], -area[m]))
        h.append((slot[m], j_alpha[m], -area[m] * rg * zf[sprime[m]]))

        m = tag == INTERIOR
        j_self = self.n_alpha + 2 * j_alpha[m]
        H.append((slot[m], K[m], j_self, -area[m]))
        h.append((slot[m], j_self, -area[m] * rg * z[K[m]]))
        H.append((slot[m], other[m], j_self + 1, -area[m]))
        h.append((slot[m], j_self + 1, -area[m] * rg * z[other[m]]))

        self._H = tuple(np.concatenate(parts) for parts in zip(*H))
        self._h = tuple(np.concatenate(parts) for parts in zip(*h))

    def _build_equations(self) -> None:
        mesh = self.mesh
        n_slots = 6 * self.n_cells
        slots = np.arange(n_slots)
        K = slots // 6
        sigma = mesh.cell_faces[K, slots % 6]
        interior = mesh.interior[sigma]
        neighbor = mesh.neighbors[K, slots % 6]
        neumann = mesh.face_tags[sigma] == NEUMANN

        rows = [K, neighbor[interior], mesh.face_unknowns[sigma[neumann]]]
        cols = [slots, slots[interior], slots[neumann]]
        vals = [np.where(interior, 0.5, 1.0), np.full(int(interior.sum()), -0.5), np.full(int(neumann.sum()), -1.0)]
        self.equations = sp.csr_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
            shape=(self.n_unknowns, n_slots),
        )

        owner = mesh.face_cells[sigma, 0] == K
        weight = np.where(interior, np.where(owner, 0.5, -0.5), 1.0)
        self.face_map = sp.csr_matrix((weight, (sigma, slots)), shape=(mesh.n_faces, n_slots))
        q = np.zeros(mesh.n_faces)
        q[mesh.gamma_faces] = mesh.gamma_signs
        self.qoi_weights = np.asarray(self.face_map.T @ q).ravel()

        face_slots = np.full((mesh.n_faces, 2), -1, dtype=np.int64)
        face_slots[sigma, np.where(owner, 0, 1)] = slots
        self.face_slots = face_slots

    def coefficient_vector(self, xi: ParameterPoint) -> np.ndarray:
        """Vetor v̂(ξ) na ordenação canônica ``(α..., α·ω...)``."""
        alpha, alpha_omega = cell_coefficients(self.geometry, xi.mobilities(self.props))
        return np.concatenate([alpha.ravel(), alpha_omega.ravel()])

    def coefficient_entries(self, xi: ParameterPoint, indices: Sequence[int]) -> np.ndarray:
        return entry_recipe(self.mesh, indices).evaluate(xi.mobilities(self.props))

    def half_fluxes(self, vhat: np.ndarray) -> Tuple[sp.csr_matrix, np.ndarray]:
        """Mapa afim ``p ↦ F̃ = H p + h`` por par (célula, face)."""
        rows, cols, js, ws = self._H
        H = sp.csr_matrix((ws * vhat[js], (rows, cols)), shape=(6 * self.n_cells, self.n_unknowns))
        hrows, hjs, hws = self._h
        h = np.bincount(hrows, weights=hws * vhat[hjs], minlength=6 * self.n_cells)
        return H, h

    def flux_operator(self, vhat: np.ndarray) -> FluxOperator:
        H, h = self.half_fluxes(vhat)
        A = (self.equations @ H).tocsr()
        b = -np.asarray(self.equations @ h).ravel()
        l = np.asarray(H.T @ self.qoi_weights).ravel()
        c = float(self.qoi_weights @ h)
        return FluxOperator(A, b, l, c)

    def face_fluxes(self, vhat: np.ndarray, p: np.ndarray) -> np.ndarray:
        """Fluxos médios ``F_{K,σ}`` vistos da célula ``face_cells[σ, 0]``."""
        H, h = self.half_fluxes(vhat)
        return np.asarray(self.face_map @ (H @ p + h)).ravel()

    def cell_fluxes(self, vhat: np.ndarray, p: np.ndarray) -> np.ndarray:
        """Fluxos médios ``F_{K,σ}`` por célula e slot local, ``(Nc, 6)``."""
        H, h = self.half_fluxes(vhat)
        half = H @ p + h
        slots = np.arange(6 * self.n_cells)
        sigma = self.mesh.cell_faces.ravel()
        owner_slot = self.face_slots[sigma, 0]
        partner = np.where(owner_slot == slots, self.face_slots[sigma, 1], owner_slot)
        interior = self.mesh.interior[sigma]
        flux = np.where(interior, 0.5 * half - 0.5 * half[np.where(interior, partner, 0)], half)
        return flux.reshape(self.n_cells, 6)

    def mass_matrix(self) -> sp.csr_matrix:
        diag = np.zeros(self.n_unknowns)
        diag[: self.n_cells] = self.mesh.cell_volumes * self.props.phi * self.props.c_t
        return sp.diags(diag, format="csr")

    def well_terms(self) -> List[Tuple[int, sp.csr_matrix, np.ndarray]]:
        """Termos afins do poço por zona: ``(zona, A_w, b_w)`` com θ = κ_zona/μ."""
        mesh, props = self.mesh, self.props
        terms = []
        for zone in (1, 2):
            cells = mesh.perforations[mesh.zones[mesh.perforations] == zone]
            if cells.size == 0:
                continue
            sizes = mesh.cell_sizes[cells]
            W = np.array([well_index(1.0, 1.0, s[0], s[1], s[2], props.r_w, props.skin) for s in sizes])
            drive = props.p_bh - props.rho_g * (props.z_bh - mesh.cell_centers[cells, 2])
            A_w = sp.csr_matrix((W, (cells, cells)), shape=(self.n_unknowns, self.n_unknowns))
            b_w = np.zeros(self.n_unknowns)
            b_w[cells] = W * drive
            terms.append((zone, A_w, b_w))
        return terms

    def assemble(self, xi: ParameterPoint, dt: Optional[float] = None) -> HFOperator:
        flux = self.flux_operator(self.coefficient_vector(xi))
        A, b = flux.A.copy(), flux.b.copy()
        lam = xi.mobilities(self.props)
        for zone, A_w, b_w in self.well_terms():
            A = A + lam[zone - 1] * A_w
            b = b + lam[zone - 1] * b_w
        return HFOperator(A.tocsr(), self.mass_matrix(), b, flux.l, flux.c, self.n_cells, dt)


def assemble(mesh: Mesh, xi: ParameterPoint, props: FluidRockProps, dt: Optional[float] = None) -> HFOperator:
    return MpfaDiscretization(mesh, props).assemble(xi, dt)


def coefficient_vector(mesh: Mesh, xi: ParameterPoint, props: FluidRockProps) -> np.ndarray:
    return MpfaDiscretization(mesh, props).coefficient_vector(xi)


def qoi_functional(disc: MpfaDiscretization, vhat: np.ndarray) -> Tuple[np.ndarray, float]:
    flux = disc.flux_operator(vhat)
    return flux.l, flux.c


__all__ = [
    "SECONDS_PER_DAY",
    "FluidRockProps",
    "ParameterPoint",
    "ParameterRanges",
    "HarmonicPoint",
    "Conormal",
    "HFOperator",
    "harmonic_weights",
    "harmonic_point",
    "conormal_decomposition",
    "well_index",
    "CellGeometry",
    "cell_geometry",
    "cell_coefficients",
    "EntryRecipe",
    "decode_entries",
    "entry_recipe",
    "FluxOperator",
    "MpfaDiscretization",
    "assemble",
    "coefficient_vector",
    "qoi_functional",
]
