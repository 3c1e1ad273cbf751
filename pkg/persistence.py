"""Arquivo binário versionado dos modelos reduzidos e exportação CSV.

Layout (little-endian)::

    magic (8 bytes) | versão u32 | nº de blocos u32 | tamanho do diretório u64 | CRC do diretório u32
    diretório JSON  | payloads concatenados

Cada entrada do diretório traz nome, dtype, shape, offset, tamanho e CRC32
do payload. A leitura confere todos os CRCs e rejeita arquivos truncados.
"""

import json
import logging
import os
import struct
import zlib
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Dict, Optional, Tuple, Union

import numpy as np
import scipy.sparse as sp

from eim import AffineModel, EimModel
from energy import EnergyMatrix
from errors import ArchiveError, ChecksumError, TruncatedArchiveError, VersionError
from estimators import ResidualTable
from mesh import Mesh, mesh_from_parts, mesh_to_parts
from mpfa import FluidRockProps, ParameterPoint, ParameterRanges
from online import ReducedModel, ReducedOperator, VariantTables
from scm import ExactCoercivity, ScmModel

log = logging.getLogger(__name__)

MAGIC = b"RBDARCY\0"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<8sIIQI")

PathLike = Union[str, os.PathLike]


@dataclass
class Archive:
    meta: Dict[str, Any]
    parts: Dict[str, np.ndarray]


def _little_endian(arr: np.ndarray) -> np.ndarray:
    arr = np.ascontiguousarray(arr)
    if arr.dtype.hasobject:
        raise ArchiveError("Blocos de objetos Python não são suportados")
    if arr.dtype.byteorder == ">":
        arr = arr.astype(arr.dtype.newbyteorder("<"))
    return arr


def save(path: PathLike, parts: Dict[str, np.ndarray], meta: Optional[Dict[str, Any]] = None) -> None:
    """Grava ``parts`` (e ``meta`` serializável em JSON) de forma atômica."""

    path = Path(path)
    blocks, payloads, offset = [], [], 0
    for name in sorted(parts):
        arr = _little_endian(np.asarray(parts[name]))
        raw = arr.tobytes()
        blocks.append(
            {
                "name": name,
                "dtype": arr.dtype.str,
                "shape": list(arr.shape),
                "offset": offset,
                "nbytes": len(raw),
                "crc": zlib.crc32(raw),
            }
        )
        payloads.append(raw)
        offset += len(raw)
    directory = json.dumps({"meta": meta or {}, "blocks": blocks}, sort_keys=True).encode()
    header = _HEADER.pack(MAGIC, FORMAT_VERSION, len(blocks), len(directory), zlib.crc32(directory))

    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(header)
        fh.write(directory)
        for raw in payloads:
            fh.write(raw)
    os.replace(tmp, path)
    log.info(f"Arquivo {path} gravado: {len(blocks)} blocos, {offset} bytes de dados")


def read(path: PathLike) -> Archive:
    """Lê e valida um arquivo; erros tipados para CRC, versão e truncamento."""

    data = Path(path).read_bytes()
    if len(data) < _HEADER.size:
        raise TruncatedArchiveError(f"{path}: cabeçalho incompleto")
    magic, version, n_blocks, dir_len, dir_crc = _HEADER.unpack_from(data)
    if magic != MAGIC:
        raise ArchiveError(f"{path}: não é um arquivo de modelo reduzido")
    if version != FORMAT_VERSION:
        raise VersionError(f"{path}: versão {version}, esperada {FORMAT_VERSION}")
    start = _HEADER.size
    raw_dir = data[start : start + dir_len]
    if len(raw_dir) < dir_len:
        raise TruncatedArchiveError(f"{path}: diretório truncado")
    if zlib.crc32(raw_dir) != dir_crc:
        raise ChecksumError(f"{path}: CRC do diretório divergente")
    directory = json.loads(raw_dir.decode())
    blocks = directory["blocks"]
    if len(blocks) != n_blocks:
        raise ChecksumError(f"{path}: diretório com {len(blocks)} blocos, cabeçalho declara {n_blocks}")

    base = start + dir_len
    parts: Dict[str, np.ndarray] = {}
    for block in blocks:
        lo = base + block["offset"]
        raw = data[lo : lo + block["nbytes"]]
        if len(raw) < block["nbytes"]:
            raise TruncatedArchiveError(f"{path}: bloco {block['name']} truncado")
        if zlib.crc32(raw) != block["crc"]:
            raise ChecksumError(f"{path}: CRC divergente no bloco {block['name']}")
        arr = np.frombuffer(raw, dtype=np.dtype(block["dtype"])).reshape(block["shape"])
        parts[block["name"]] = arr.copy()
    log.debug(f"Arquivo {path} lido: {len(parts)} blocos")
    return Archive(directory["meta"], parts)


def load(path: PathLike) -> Dict[str, np.ndarray]:
    return read(path).parts


def export_csv(parts: Dict[str, np.ndarray], directory: PathLike) -> int:
    """Exporta blocos numéricos 1-D/2-D como CSV (inspeção; não é o formato canônico)."""

    out = Path(directory)
    out.mkdir(parents=True, exist_ok=True)
    count = 0
    for name, arr in sorted(parts.items()):
        arr = np.asarray(arr)
        if arr.ndim > 2 or arr.dtype.kind not in "fiub":
            continue
        fmt = "%.17g" if arr.dtype.kind == "f" else "%d"
        np.savetxt(out / (name.replace("/", "__") + ".csv"), np.atleast_1d(arr), delimiter=",", fmt=fmt)
        count += 1
    log.info(f"{count} blocos exportados em CSV para {out}")
    return count


# --- modelo completo -------------------------------------------------------


def _sparse_parts(A: sp.spmatrix, prefix: str) -> Dict[str, np.ndarray]:
    A = sp.csr_matrix(A)
    return {
        prefix + "data": A.data,
        prefix + "indices": A.indices.astype(np.int64),
        prefix + "indptr": A.indptr.astype(np.int64),
        prefix + "shape": np.array(A.shape, dtype=np.int64),
    }


def _sparse_from_parts(parts: Dict[str, np.ndarray], prefix: str) -> sp.csr_matrix:
    shape = tuple(int(v) for v in parts[prefix + "shape"])
    return sp.csr_matrix((parts[prefix + "data"], parts[prefix + "indices"], parts[prefix + "indptr"]), shape=shape)


def _point(values) -> Optional[ParameterPoint]:
    return None if values is None else ParameterPoint(*values)


def _energy_meta(energy: EnergyMatrix) -> Dict[str, Any]:
    xs = energy.xi_star
    return {"dt": energy.dt, "label": energy.label, "xi_star": None if xs is None else [xs.kappa1, xs.kappa2]}


def _energy_from(parts: Dict[str, np.ndarray], prefix: str, meta: Dict[str, Any]) -> EnergyMatrix:
    return EnergyMatrix.from_matrix(_sparse_from_parts(parts, prefix), meta["dt"], _point(meta["xi_star"]), meta["label"])


@dataclass(eq=False)
class ModelArchive:
    """Modelo reduzido com os artefatos de offline necessários para revalidar."""

    model: ReducedModel
    mesh: Mesh
    props: FluidRockProps
    affine: AffineModel
    energy: EnergyMatrix
    p0: np.ndarray
    eim: Optional[EimModel] = None
    variant_energy: Optional[EnergyMatrix] = None
    provenance: Dict[str, Any] = field(default_factory=dict)

    @property
    def xi_star(self) -> Optional[ParameterPoint]:
        return self.energy.xi_star


def _coercivity_kind(bound) -> str:
    if isinstance(bound, ScmModel):
        return "scm"
    if isinstance(bound, ExactCoercivity):
        return "exact"
    raise ArchiveError(f"Limite de coercividade sem persistência: {type(bound).__name__}")


def model_parts(archive: ModelArchive) -> Tuple[Dict[str, np.ndarray], Dict[str, Any]]:
    """Blocos e metadados de um :class:`ModelArchive`."""

    model = archive.model
    parts: Dict[str, np.ndarray] = {}
    parts.update(mesh_to_parts(archive.mesh))
    parts.update(archive.affine.to_parts("affine/"))
    parts.update(_sparse_parts(archive.energy.matrix, "energy/"))
    parts.update(model.rop.to_parts("rop/"))
    parts.update(model.primal_table.to_parts("tables/primal/"))
    parts["p0"] = np.asarray(archive.p0, dtype=float)
    if model.dual_table is not None:
        parts.update(model.dual_table.to_parts("tables/dual/"))
    if model.Z_pr is not None:
        parts["basis/primal"] = model.Z_pr
    if model.Z_du is not None:
        parts["basis/dual"] = model.Z_du
    if archive.eim is not None:
        parts.update(archive.eim.to_parts("eim/"))
    kind = _coercivity_kind(model.coercivity)
    if kind == "scm":
        parts.update(model.coercivity.to_parts("scm/"))

    meta: Dict[str, Any] = {
        "n_cells": archive.mesh.n_cells,
        "n_unknowns": archive.mesh.n_unknowns,
        "n_pr": model.n_pr,
        "n_du": model.n_du,
        "n_terms": archive.affine.n_terms,
        "dt": model.dt,
        "n_steps": model.n_steps,
        "final_time": model.dt * model.n_steps,
        "alpha_mass": model.alpha_mass,
        "goal": model.goal,
        "ranges": model.ranges.bounds.tolist(),
        "props": asdict(archive.props),
        "energy": _energy_meta(archive.energy),
        "coercivity": kind,
        "rounds": model.rounds,
        "provenance": archive.provenance,
        "variant": None,
    }
    v = model.variant
    if v is not None:
        if archive.variant_energy is None:
            raise ArchiveError("Variante sem a matriz de norma correspondente")
        vkind = _coercivity_kind(v.coercivity)
        parts.update(_sparse_parts(archive.variant_energy.matrix, "variant/energy/"))
        parts.update(v.primal.to_parts("variant/primal/"))
        if v.dual is not None:
            parts.update(v.dual.to_parts("variant/dual/"))
        if vkind == "scm":
            parts.update(v.coercivity.to_parts("variant/scm/"))
        meta["variant"] = {"label": v.label, "coercivity": vkind, "energy": _energy_meta(archive.variant_energy)}
    return parts, meta


def save_model(path: PathLike, archive: ModelArchive) -> None:
    parts, meta = model_parts(archive)
    save(path, parts, meta)


def _coercivity_from(kind: str, parts, prefix: str, affine: AffineModel, energy: EnergyMatrix, ranges: ParameterRanges):
    if kind == "scm":
        return ScmModel.from_parts(parts, affine.theta, prefix)
    return ExactCoercivity(affine.sym_terms, affine.theta, energy, ranges)


def load_model(path: PathLike) -> ModelArchive:
    """Reconstrói um :class:`ModelArchive` gravado por :func:`save_model`."""

    arc = read(path)
    parts, meta = arc.parts, arc.meta
    try:
        mesh = mesh_from_parts(parts)
        affine = AffineModel.from_parts(parts, "affine/")
        energy = _energy_from(parts, "energy/", meta["energy"])
        rb = meta["ranges"]
        ranges = ParameterRanges(tuple(rb[0]), tuple(rb[1]))
        coercivity = _coercivity_from(meta["coercivity"], parts, "scm/", affine, energy, ranges)

        variant, variant_energy = None, None
        vmeta = meta.get("variant")
        if vmeta is not None:
            variant_energy = _energy_from(parts, "variant/energy/", vmeta["energy"])
            variant = VariantTables(
                label=vmeta["label"],
                primal=ResidualTable.from_parts(parts, "variant/primal/"),
                dual=ResidualTable.from_parts(parts, "variant/dual/") if "variant/dual/dims" in parts else None,
                coercivity=_coercivity_from(vmeta["coercivity"], parts, "variant/scm/", affine, variant_energy, ranges),
            )

        model = ReducedModel(
            rop=ReducedOperator.from_parts(parts, "rop/"),
            primal_table=ResidualTable.from_parts(parts, "tables/primal/"),
            dual_table=ResidualTable.from_parts(parts, "tables/dual/") if "tables/dual/dims" in parts else None,
            theta=affine.theta,
            coercivity=coercivity,
            alpha_mass=float(meta["alpha_mass"]),
            dt=float(meta["dt"]),
            n_steps=int(meta["n_steps"]),
            ranges=ranges,
            variant=variant,
            Z_pr=parts.get("basis/primal"),
            Z_du=parts.get("basis/dual"),
            rounds=list(meta["rounds"]),
            goal=bool(meta["goal"]),
        )
        archive = ModelArchive(
            model=model,
            mesh=mesh,
            props=FluidRockProps(**meta["props"]),
            affine=affine,
            energy=energy,
            p0=parts["p0"],
            eim=EimModel.from_parts(parts, "eim/") if "eim/B" in parts else None,
            variant_energy=variant_energy,
            provenance=dict(meta.get("provenance", {})),
        )
    except KeyError as e:
        raise ArchiveError(f"{path}: bloco ou metadado ausente: {e}") from e
    log.info(f"Modelo carregado de {path}: N_pr = {model.n_pr}, N_du = {model.n_du}")
    return archive


__all__ = [
    "MAGIC",
    "FORMAT_VERSION",
    "Archive",
    "save",
    "read",
    "load",
    "export_csv",
    "ModelArchive",
    "model_parts",
    "save_model",
    "load_model",
]
