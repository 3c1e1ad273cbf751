import logging
from dataclasses import dataclass, field, fields, replace
from functools import cached_property
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from errors import ConfigurationError

log = logging.getLogger(__name__)

INTERIOR, DIRICHLET, NEUMANN = 0, 1, 2

PLANES = ("xmin", "xmax", "ymin", "ymax", "zmin", "zmax")
PLANE_ALIASES = {"top": "zmax", "bottom": "zmin"}

# fração do diâmetro do domínio usada nas comparações geométricas
GEOMETRIC_TOL = 1e-9


@dataclass(frozen=True)
class Box:
    """Caixa alinhada aos eixos, fechada."""

    lower: Tuple[float, float, float]
    upper: Tuple[float, float, float]

    def __post_init__(self) -> None:
        lo = np.asarray(self.lower, dtype=float)
        hi = np.asarray(self.upper, dtype=float)
        if lo.shape != (3,) or hi.shape != (3,):
            raise ConfigurationError(f"Caixa precisa de 3 coordenadas: {self.lower} / {self.upper}")
        if np.any(~(hi > lo)):
            raise ConfigurationError(f"Caixa degenerada: {self.lower} / {self.upper}")
        object.__setattr__(self, "lower", tuple(float(v) for v in lo))
        object.__setattr__(self, "upper", tuple(float(v) for v in hi))

    @classmethod
    def z_interval(cls, z_low: float, z_high: float) -> "Box":
        """Camada horizontal ilimitada em x e y."""
        return cls((-np.inf, -np.inf, z_low), (np.inf, np.inf, z_high))

    def contains(self, points: np.ndarray, tol: float = 0.0) -> np.ndarray:
        pts = np.atleast_2d(points)
        lo = np.asarray(self.lower) - tol
        hi = np.asarray(self.upper) + tol
        return np.all((pts >= lo) & (pts <= hi), axis=1)

    def overlap_volume(self, extents: np.ndarray) -> float:
        lo = np.maximum(np.asarray(self.lower), extents[:, 0])
        hi = np.minimum(np.asarray(self.upper), extents[:, 1])
        return float(np.prod(np.clip(hi - lo, 0.0, None)))


@dataclass(frozen=True)
class ZoneSpec:
    """Zona 1 (reservatório) dada por uma caixa; o complemento é a zona 2."""

    reservoir: Box


@dataclass(frozen=True)
class InteriorSurface:
    """Faces de Γ_int com o sinal que orienta ``n_σ`` para fora da caixa."""

    faces: np.ndarray
    signs: np.ndarray


@dataclass(frozen=True, eq=False)
class Mesh:
    """Malha hexaédrica imutável.

    Cada face guarda em ``face_cells[:, 0]`` uma célula válida; ``face_normals``
    aponta para fora dessa célula. Faces de contorno têm ``face_cells[:, 1] == -1``.
    ``cell_faces`` usa a ordem local ``(xmin, xmax, ymin, ymax, zmin, zmax)``.
    """

    shape: Tuple[int, int, int]
    extents: np.ndarray
    cell_centers: np.ndarray
    cell_volumes: np.ndarray
    cell_sizes: np.ndarray
    zones: np.ndarray
    face_centers: np.ndarray
    face_areas: np.ndarray
    face_normals: np.ndarray
    face_cells: np.ndarray
    face_planes: np.ndarray
    cell_faces: np.ndarray
    face_tags: np.ndarray
    tagged: bool = False
    gamma_faces: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    gamma_signs: np.ndarray = field(default_factory=lambda: np.zeros(0))
    perforations: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))

    def __post_init__(self) -> None:
        for f in fields(self):
            value = getattr(self, f.name)
            if isinstance(value, np.ndarray):
                value.setflags(write=False)

    @property
    def n_cells(self) -> int:
        return int(self.cell_volumes.size)

    @property
    def n_faces(self) -> int:
        return int(self.face_areas.size)

    @cached_property
    def diameter(self) -> float:
        return float(np.linalg.norm(self.extents[:, 1] - self.extents[:, 0]))

    @property
    def tol(self) -> float:
        return GEOMETRIC_TOL * self.diameter

    @cached_property
    def interior(self) -> np.ndarray:
        return self.face_cells[:, 1] >= 0

    @cached_property
    def neumann_faces(self) -> np.ndarray:
        return np.flatnonzero(self.face_tags == NEUMANN)

    @property
    def n_neumann(self) -> int:
        return int(self.neumann_faces.size)

    @property
    def n_unknowns(self) -> int:
        return self.n_cells + self.n_neumann

    @cached_property
    def face_unknowns(self) -> np.ndarray:
        """Índice da incógnita de cada face de Neumann (``-1`` nas demais)."""
        out = np.full(self.n_faces, -1, dtype=np.int64)
        out[self.neumann_faces] = self.n_cells + np.arange(self.n_neumann)
        return out

    @cached_property
    def cell_face_signs(self) -> np.ndarray:
        owner = self.face_cells[self.cell_faces, 0]
        cells = np.arange(self.n_cells)[:, None]
        return np.where(owner == cells, 1.0, -1.0)

    @cached_property
    def cell_face_normals(self) -> np.ndarray:
        """Normais ``n_{K,σ}`` externas a cada célula, ``(Nc, 6, 3)``."""
        return self.face_normals[self.cell_faces] * self.cell_face_signs[..., None]

    @cached_property
    def cell_face_distances(self) -> np.ndarray:
        """Distâncias ortogonais ``d_{K,σ}``, ``(Nc, 6)``."""
        offset = self.face_centers[self.cell_faces] - self.cell_centers[:, None, :]
        return np.abs(np.einsum("kab,kab->ka", offset, self.cell_face_normals))

    @cached_property
    def neighbors(self) -> np.ndarray:
        pair = self.face_cells[self.cell_faces]
        cells = np.arange(self.n_cells)[:, None]
        return np.where(pair[..., 0] == cells, pair[..., 1], pair[..., 0])

    @cached_property
    def grid_planes(self) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        return tuple(
            np.linspace(self.extents[a, 0], self.extents[a, 1], self.shape[a] + 1) for a in range(3)
        )


def _axis_faces(axis: int, planes: Sequence[np.ndarray], counts: Tuple[int, int, int]) -> Dict[str, np.ndarray]:
    dims = list(counts)
    dims[axis] += 1
    k, j, i = np.meshgrid(np.arange(dims[2]), np.arange(dims[1]), np.arange(dims[0]), indexing="ij")
    ijk = [i.ravel(), j.ravel(), k.ravel()]
    n = ijk[0].size

    centers = np.empty((n, 3))
    area = np.ones(n)
    for b in range(3):
        if b == axis:
            centers[:, b] = planes[b][ijk[b]]
        else:
            centers[:, b] = 0.5 * (planes[b][ijk[b]] + planes[b][ijk[b] + 1])
            area = area * (planes[b][ijk[b] + 1] - planes[b][ijk[b]])

    def cell_id(idx: List[np.ndarray]) -> np.ndarray:
        return idx[0] + counts[0] * (idx[1] + counts[1] * idx[2])

    lower = list(ijk)
    lower[axis] = ijk[axis] - 1
    lo_valid = ijk[axis] > 0
    hi_valid = ijk[axis] < counts[axis]
    lo_cell = np.where(lo_valid, cell_id(lower), -1)
    hi_cell = np.where(hi_valid, cell_id(ijk), -1)

    face_cells = np.empty((n, 2), dtype=np.int64)
    face_cells[:, 0] = np.where(lo_valid, lo_cell, hi_cell)
    face_cells[:, 1] = np.where(lo_valid & hi_valid, hi_cell, -1)

    normals = np.zeros((n, 3))
    normals[:, axis] = np.where(lo_valid, 1.0, -1.0)
    face_planes = np.where(~lo_valid, 2 * axis, np.where(~hi_valid, 2 * axis + 1, -1))
    return {
        "centers": centers,
        "areas": area,
        "normals": normals,
        "cells": face_cells,
        "planes": face_planes.astype(np.int64),
        "dims": np.asarray(dims),
    }


def build_cartesian_mesh(
    nx: int,
    ny: int,
    nz: int,
    extents: Sequence[Sequence[float]],
    zone: ZoneSpec,
) -> Mesh:
    """Gera uma malha cartesiana hexaédrica com duas zonas.

    Parameters
    ----------
    nx, ny, nz:
        Número de células em cada direção.
    extents:
        Três intervalos fechados ``[[x0, x1], [y0, y1], [z0, z1]]`` em metros.
    zone:
        Caixa da zona 1; células cujo centro está fora dela recebem a zona 2.

    Returns
    -------
    Mesh
        Malha ainda sem rótulos de contorno.
    """

    counts = (int(nx), int(ny), int(nz))
    if min(counts) < 1:
        raise ConfigurationError(f"Número de células inválido: {counts}")
    ext = np.asarray(extents, dtype=float)
    if ext.shape != (3, 2) or np.any(~(ext[:, 1] > ext[:, 0])):
        raise ConfigurationError(f"Extensões degeneradas: {extents}")
    if zone.reservoir.overlap_volume(ext) <= 0.0:
        raise ConfigurationError("A zona 1 não intercepta o domínio com volume positivo")

    planes = [np.linspace(ext[a, 0], ext[a, 1], counts[a] + 1) for a in range(3)]
    k, j, i = np.meshgrid(np.arange(counts[2]), np.arange(counts[1]), np.arange(counts[0]), indexing="ij")
    ijk = [i.ravel(), j.ravel(), k.ravel()]
    n_cells = ijk[0].size

    centers = np.empty((n_cells, 3))
    sizes = np.empty((n_cells, 3))
    for a in range(3):
        centers[:, a] = 0.5 * (planes[a][ijk[a]] + planes[a][ijk[a] + 1])
        sizes[:, a] = planes[a][ijk[a] + 1] - planes[a][ijk[a]]
    volumes = np.prod(sizes, axis=1)

    blocks = [_axis_faces(a, planes, counts) for a in range(3)]
    offsets = np.cumsum([0] + [b["areas"].size for b in blocks])

    cell_faces = np.empty((n_cells, 6), dtype=np.int64)
    for a, block in enumerate(blocks):
        dims = block["dims"]
        local = ijk[0] + dims[0] * (ijk[1] + dims[1] * ijk[2])
        step = 1 if a == 0 else (dims[0] if a == 1 else dims[0] * dims[1])
        cell_faces[:, 2 * a] = offsets[a] + local
        cell_faces[:, 2 * a + 1] = offsets[a] + local + step

    zones = np.where(zone.reservoir.contains(centers), 1, 2).astype(np.int64)
    face_planes = np.concatenate([b["planes"] for b in blocks])
    tags = np.where(face_planes >= 0, NEUMANN, INTERIOR).astype(np.int64)

    mesh = Mesh(
        shape=counts,
        extents=ext,
        cell_centers=centers,
        cell_volumes=volumes,
        cell_sizes=sizes,
        zones=zones,
        face_centers=np.concatenate([b["centers"] for b in blocks]),
        face_areas=np.concatenate([b["areas"] for b in blocks]),
        face_normals=np.concatenate([b["normals"] for b in blocks]),
        face_cells=np.concatenate([b["cells"] for b in blocks]),
        face_planes=face_planes,
        cell_faces=cell_faces,
        face_tags=tags,
    )
    log.debug(f"Malha {counts} gerada: {mesh.n_cells} células, {mesh.n_faces} faces")
    return mesh


def _plane_ids(names: Iterable[str]) -> List[int]:
    ids = []
    for name in names:
        key = PLANE_ALIASES.get(str(name).lower(), str(name).lower())
        if key not in PLANES:
            raise ConfigurationError(f"Plano de contorno desconhecido: {name}")
        ids.append(PLANES.index(key))
    return sorted(set(ids))


def tag_boundaries(mesh: Mesh, dirichlet_spec: Iterable[str]) -> Mesh:
    """Marca faces de contorno como Dirichlet (planos nomeados) ou Neumann."""

    ids = _plane_ids(dirichlet_spec)
    if not ids:
        raise ConfigurationError("Nenhum plano de Dirichlet informado")
    boundary = mesh.face_planes >= 0
    tags = np.where(boundary, NEUMANN, INTERIOR)
    tags[np.isin(mesh.face_planes, ids) & boundary] = DIRICHLET
    tagged = replace(mesh, face_tags=tags.astype(np.int64), tagged=True)
    log.info(
        f"Contorno: {int(np.sum(tags == DIRICHLET))} faces de Dirichlet, "
        f"{tagged.n_neumann} faces de Neumann"
    )
    return tagged


def snap_box(mesh: Mesh, box: Box) -> Box:
    """Desloca os planos da caixa para os planos da grade mais próximos."""

    lower, upper = [], []
    for a in range(3):
        planes = mesh.grid_planes[a]
        lo = int(np.argmin(np.abs(planes - box.lower[a])))
        hi = int(np.argmin(np.abs(planes - box.upper[a])))
        if hi <= lo:
            hi = min(lo + 1, planes.size - 1)
            lo = hi - 1
        lower.append(planes[lo])
        upper.append(planes[hi])
    return Box(tuple(lower), tuple(upper))


def select_gamma_int(mesh: Mesh, box: Box, sides: Optional[Iterable[str]] = None) -> InteriorSurface:
    """Seleciona as faces interiores sobre a superfície da caixa de armazenamento.

    Parameters
    ----------
    mesh:
        Malha de referência.
    box:
        Caixa estritamente interior ao domínio.
    sides:
        Subconjunto de ``PLANES`` (lados da caixa); ``None`` usa os seis.

    Returns
    -------
    InteriorSurface
        Ids das faces (ordenados) e sinais que orientam a normal para fora da caixa.
    """

    tol = mesh.tol
    lo = np.asarray(box.lower)
    hi = np.asarray(box.upper)
    side_ids = list(range(6)) if sides is None else _plane_ids(sides)
    if sides is None:
        inside = not (np.any(lo <= mesh.extents[:, 0] + tol) or np.any(hi >= mesh.extents[:, 1] - tol))
    else:
        # superfície aberta: só os lados escolhidos precisam ser interiores
        values = [(hi if s % 2 else lo)[s // 2] for s in side_ids]
        inside = all(mesh.extents[s // 2, 0] + tol < v < mesh.extents[s // 2, 1] - tol for s, v in zip(side_ids, values))
    if not inside:
        raise ConfigurationError("A caixa de Γ_int precisa estar estritamente dentro do domínio")

    centers = mesh.face_centers
    faces, signs = [], []
    for side in side_ids:
        axis, upper_side = divmod(side, 2)
        value = hi[axis] if upper_side else lo[axis]
        others = [b for b in range(3) if b != axis]
        mask = mesh.interior & (np.abs(centers[:, axis] - value) <= tol)
        mask &= np.abs(np.abs(mesh.face_normals[:, axis]) - 1.0) <= 1e-12
        for b in others:
            mask &= (centers[:, b] >= lo[b] - tol) & (centers[:, b] <= hi[b] + tol)
        ids = np.flatnonzero(mask)
        outward = 1.0 if upper_side else -1.0
        faces.append(ids)
        signs.append(np.sign(mesh.face_normals[ids, axis]) * outward)

    face_ids = np.concatenate(faces)
    face_signs = np.concatenate(signs)
    if face_ids.size == 0:
        raise ConfigurationError("Γ_int vazio: nenhuma face interior sobre a caixa")
    order = np.argsort(face_ids, kind="stable")
    face_ids, face_signs = face_ids[order], face_signs[order]
    keep = np.concatenate([[True], np.diff(face_ids) > 0])
    return InteriorSurface(faces=face_ids[keep], signs=face_signs[keep])


def select_perforations(mesh: Mesh, well_box: Box) -> np.ndarray:
    """Células perfuradas: centros dentro da caixa do poço."""

    cells = np.flatnonzero(well_box.contains(mesh.cell_centers, tol=mesh.tol))
    if cells.size == 0:
        raise ConfigurationError("Caixa do poço não contém nenhum centro de célula")
    return cells.astype(np.int64)


def with_selections(mesh: Mesh, gamma: InteriorSurface, perforations: np.ndarray) -> Mesh:
    return replace(
        mesh,
        gamma_faces=np.asarray(gamma.faces, dtype=np.int64),
        gamma_signs=np.asarray(gamma.signs, dtype=float),
        perforations=np.asarray(perforations, dtype=np.int64),
    )


def check_mesh(mesh: Mesh, tol: float = 1e-10) -> None:
    """Verifica os invariantes geométricos e de incidência da malha."""

    problems = []
    interior = mesh.interior
    if np.any(mesh.face_cells[:, 0] < 0):
        problems.append("face sem célula dona")
    if np.any(interior & (mesh.face_planes >= 0)) or np.any(~interior & (mesh.face_planes < 0)):
        problems.append("contagem de células incidentes inconsistente")
    if np.any(mesh.cell_volumes <= 0) or np.any(mesh.face_areas <= 0):
        problems.append("medida não positiva")
    if np.any(np.abs(np.linalg.norm(mesh.face_normals, axis=1) - 1.0) > 1e-12):
        problems.append("normal não unitária")
    domain = float(np.prod(mesh.extents[:, 1] - mesh.extents[:, 0]))
    if abs(mesh.cell_volumes.sum() - domain) > tol * domain:
        problems.append("soma dos volumes difere do domínio")
    if np.any(mesh.cell_face_distances <= 0):
        problems.append("distância d_{K,σ} não positiva")
    closure = np.einsum("ka,kab->kb", mesh.face_areas[mesh.cell_faces], mesh.cell_face_normals)
    if np.max(np.abs(closure)) > tol * float(mesh.face_areas.max()):
        problems.append("superfície de célula não fechada")
    owners = mesh.face_cells[mesh.cell_faces]
    cells = np.arange(mesh.n_cells)[:, None]
    if not np.all((owners[..., 0] == cells) | (owners[..., 1] == cells)):
        problems.append("incidência célula-face inconsistente")
    if set(np.unique(mesh.zones)) - {1, 2}:
        problems.append("rótulo de zona inválido")
    if problems:
        raise ConfigurationError("Malha inválida: " + "; ".join(problems))


_MESH_ARRAYS = [f.name for f in fields(Mesh) if f.name not in ("shape", "tagged")]


def mesh_to_parts(mesh: Mesh, prefix: str = "mesh/") -> Dict[str, np.ndarray]:
    parts = {prefix + name: np.asarray(getattr(mesh, name)) for name in _MESH_ARRAYS}
    parts[prefix + "shape"] = np.asarray(mesh.shape, dtype=np.int64)
    parts[prefix + "tagged"] = np.asarray([int(mesh.tagged)], dtype=np.int64)
    return parts


def mesh_from_parts(parts: Dict[str, np.ndarray], prefix: str = "mesh/") -> Mesh:
    kwargs = {name: np.array(parts[prefix + name]) for name in _MESH_ARRAYS}
    shape = tuple(int(v) for v in parts[prefix + "shape"])
    return Mesh(shape=shape, tagged=bool(parts[prefix + "tagged"][0]), **kwargs)


__all__ = [
    "INTERIOR",
    "DIRICHLET",
    "NEUMANN",
    "PLANES",
    "Box",
    "ZoneSpec",
    "InteriorSurface",
    "Mesh",
    "build_cartesian_mesh",
    "tag_boundaries",
    "snap_box",
    "select_gamma_int",
    "select_perforations",
    "with_selections",
    "check_mesh",
    "mesh_to_parts",
    "mesh_from_parts",
]
