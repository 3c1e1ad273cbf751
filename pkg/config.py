"""Arquivos de caso em YAML, sobrescritas por ambiente e montagem do caso.

Erros de esquema saem como ``"<arquivo>:<linha>: <mensagem>"``.
"""

import logging
import math
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Dict, Optional, Tuple, Union

import yaml
from dotenv import load_dotenv

from errors import ConfigurationError
from estimators import ESTIMATORS
from mesh import (
    Box,
    Mesh,
    ZoneSpec,
    build_cartesian_mesh,
    select_gamma_int,
    select_perforations,
    snap_box,
    tag_boundaries,
    with_selections,
)
from mpfa import SECONDS_PER_DAY, FluidRockProps, ParameterRanges
from reduction import DEFAULT_RIC
from sampling import DEFAULT_SEED

log = logging.getLogger(__name__)

ENV_WORKERS = "RBDARCY_WORKERS"
ENV_SEED = "RBDARCY_SEED"

REQUIRED = object()
INF = math.inf

PathLike = Union[str, os.PathLike]


class _Reader:
    """Converte nós do YAML em valores validados, guardando as linhas."""

    def __init__(self, source: str) -> None:
        self.source = source
        self.lines: Dict[str, int] = {}
        self._loader = yaml.SafeLoader("")

    def fail(self, node: Optional[yaml.Node], msg: str) -> ConfigurationError:
        line = node.start_mark.line + 1 if node is not None else 1
        return ConfigurationError(f"{self.source}:{line}: {msg}")

    def value(self, node: yaml.Node) -> Any:
        return self._loader.construct_object(node, deep=True)

    def mapping(self, node: yaml.Node, where: str) -> Dict[str, Tuple[yaml.Node, yaml.Node]]:
        if not isinstance(node, yaml.MappingNode):
            raise self.fail(node, f"{where} precisa ser um mapeamento")
        out = {}
        for key_node, value_node in node.value:
            key = str(self.value(key_node))
            if key in out:
                raise self.fail(key_node, f"chave repetida '{where}.{key}'")
            out[key] = (key_node, value_node)
        return out


def _number(reader: _Reader, node: yaml.Node, where: str) -> float:
    raw = reader.value(node)
    if isinstance(raw, bool):
        raise reader.fail(node, f"{where} precisa ser numérico")
    try:
        # YAML 1.1 lê "1e-13" (sem ponto) como texto
        return float(raw)
    except (TypeError, ValueError):
        raise reader.fail(node, f"{where} precisa ser numérico, recebeu {raw!r}") from None


def _float(reader, node, where):
    return _number(reader, node, where)


def _positive(reader, node, where):
    value = _number(reader, node, where)
    if not value > 0:
        raise reader.fail(node, f"{where} precisa ser positivo")
    return value


def _int(reader, node, where):
    raw = reader.value(node)
    if isinstance(raw, bool) or not isinstance(raw, int):
        raise reader.fail(node, f"{where} precisa ser inteiro")
    return raw


def _count(reader, node, where):
    value = _int(reader, node, where)
    if value < 1:
        raise reader.fail(node, f"{where} precisa ser ≥ 1")
    return value


def _bool(reader, node, where):
    raw = reader.value(node)
    if not isinstance(raw, bool):
        raise reader.fail(node, f"{where} precisa ser true/false")
    return raw


def _text(reader, node, where):
    raw = reader.value(node)
    if not isinstance(raw, str):
        raise reader.fail(node, f"{where} precisa ser texto")
    return raw


def _list(item: Callable, length: Optional[int] = None) -> Callable:
    def read(reader, node, where):
        if not isinstance(node, yaml.SequenceNode):
            raise reader.fail(node, f"{where} precisa ser uma lista")
        if length is not None and len(node.value) != length:
            raise reader.fail(node, f"{where} precisa ter {length} elementos")
        return tuple(item(reader, n, f"{where}[{i}]") for i, n in enumerate(node.value))

    return read


def _optional(inner: Callable) -> Callable:
    def read(reader, node, where):
        if isinstance(node, yaml.ScalarNode) and reader.value(node) is None:
            return None
        return inner(reader, node, where)

    return read


def _interval(reader, node, where):
    lo, hi = _list(_float, 2)(reader, node, where)
    if not lo < hi:
        raise reader.fail(node, f"{where}: intervalo degenerado [{lo}, {hi}]")
    return (lo, hi)


def _range(reader, node, where):
    lo, hi = _list(_positive, 2)(reader, node, where)
    if not lo <= hi:
        raise reader.fail(node, f"{where}: limite inferior maior que o superior")
    return (lo, hi)


def _section(schema: Dict[str, Tuple[Callable, Any]]) -> Callable:
    def read(reader, node, where):
        items = reader.mapping(node, where)
        out = {}
        for key, (key_node, _) in items.items():
            if key not in schema:
                raise reader.fail(key_node, f"chave desconhecida '{where}.{key}'")
        for key, (check, default) in schema.items():
            name = f"{where}.{key}"
            if key in items:
                key_node, value_node = items[key]
                out[key] = check(reader, value_node, name)
                reader.lines[name] = key_node.start_mark.line + 1
            elif default is REQUIRED:
                raise reader.fail(node, f"chave obrigatória ausente '{name}'")
            else:
                out[key] = _defaults(check, default)
        return out

    read.schema = schema
    return read


def _defaults(check: Callable, default: Any) -> Any:
    """Valor padrão; seções ausentes são preenchidas pelo próprio esquema."""
    schema = getattr(check, "schema", None)
    if schema is None:
        return default
    out = {}
    for key, (inner, value) in schema.items():
        out[key] = _defaults(inner, default.get(key, value))
    return out


_BOX = {
    "lower": (_list(_float, 3), REQUIRED),
    "upper": (_list(_float, 3), REQUIRED),
    "snap": (_bool, False),
}
_GAMMA = dict(_BOX, sides=(_optional(_list(_text)), None))

SCHEMA: Dict[str, Tuple[Callable, Any]] = {
    "mesh": (
        _section(
            {
                "shape": (_list(_count, 3), (10, 10, 5)),
                "extents": (_list(_interval, 3), ((0.0, 2000.0), (0.0, 2000.0), (-1000.0, 0.0))),
                "reservoir": (
                    _section({"lower": (_list(_float, 3), REQUIRED), "upper": (_list(_float, 3), REQUIRED)}),
                    {"lower": (-INF, -INF, -800.0), "upper": (INF, INF, -400.0)},
                ),
                "dirichlet": (_list(_text), REQUIRED),
                "gamma_int": (
                    _section(_GAMMA),
                    {"lower": (800.0, 800.0, -800.0), "upper": (1200.0, 1200.0, -400.0), "snap": True, "sides": None},
                ),
                "well": (
                    _section(_BOX),
                    {"lower": (945.819, 946.32, -715.73), "upper": (1049.83, 1049.62, -537.624), "snap": True},
                ),
            }
        ),
        REQUIRED,
    ),
    "physics": (
        _section({f: (_float, getattr(FluidRockProps, f)) for f in FluidRockProps.__dataclass_fields__}),
        {},
    ),
    "time": (_section({"final_time_days": (_positive, 200.0), "step_days": (_positive, 10.0)}), {}),
    "parameters": (_section({"kappa1": (_range, (1e-13, 1e-12)), "kappa2": (_range, (1e-17, 1e-15))}), {}),
    "sampling": (
        _section({"training_size": (_count, 100), "test_size": (_count, 50), "seed": (_int, DEFAULT_SEED)}),
        {},
    ),
    "eim": (_section({"tolerance": (_positive, 1e-12), "max_terms": (_count, 40)}), {}),
    "scm": (
        _section(
            {
                "enabled": (_bool, True),
                "m1": (_count, 5),
                "m2": (_count, 5),
                "tolerance": (_positive, 1e-4),
                "max_iterations": (_count, 100),
            }
        ),
        {},
    ),
    "greedy": (
        _section(
            {
                "max_dimension": (_count, 100),
                "tolerance": (_positive, 1e-8),
                "relative": (_bool, True),
                "ric": (_positive, DEFAULT_RIC),
                "estimator": (_text, "delta_s_tilde"),
                "track_true_errors": (_bool, False),
                "max_rounds": (_count, 200),
            }
        ),
        {},
    ),
    "solver": (_section({"tolerance": (_positive, 1e-12), "dense_eig_limit": (_count, 5000)}), {}),
    "run": (_section({"workers": (_count, 1)}), {}),
}


@dataclass
class Config:
    """Configuração validada; ``lines`` guarda a linha de cada chave lida."""

    values: Dict[str, Dict[str, Any]]
    source: str = "<config>"
    lines: Dict[str, int] = field(default_factory=dict)

    def __getitem__(self, section: str) -> Dict[str, Any]:
        return self.values[section]

    def error(self, key: str, msg: str) -> ConfigurationError:
        return ConfigurationError(f"{self.source}:{self.lines.get(key, 1)}: {msg}")


def parse_config(text: str, source: str = "<config>") -> Config:
    """Valida o texto YAML de um caso."""

    reader = _Reader(source)
    try:
        root = yaml.compose(text, Loader=yaml.SafeLoader)
    except yaml.YAMLError as e:
        mark = getattr(e, "problem_mark", None)
        line = mark.line + 1 if mark is not None else 1
        raise ConfigurationError(f"{source}:{line}: YAML inválido: {getattr(e, 'problem', e)}") from e
    if root is None:
        raise ConfigurationError(f"{source}:1: arquivo de configuração vazio")
    values = _section(SCHEMA)(reader, root, "config")
    _check_consistency(reader, values)
    return Config(values, source, reader.lines)


def _check_consistency(reader: _Reader, values: Dict[str, Any]) -> None:
    greedy = values["greedy"]
    if not greedy["ric"] <= 1.0:
        raise ConfigurationError(f"{reader.source}:{reader.lines.get('config.greedy.ric', 1)}: ric precisa estar em (0, 1]")
    if greedy["estimator"] not in ESTIMATORS:
        line = reader.lines.get("config.greedy.estimator", 1)
        raise ConfigurationError(f"{reader.source}:{line}: estimador desconhecido '{greedy['estimator']}'")


def load_config(path: PathLike) -> Config:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as e:
        raise ConfigurationError(f"{path}: não foi possível ler a configuração ({e.strerror})") from e
    cfg = parse_config(text, str(path))
    log.info(f"Configuração {path} carregada")
    return cfg


def _env_int(name: str, minimum: int) -> Optional[int]:
    raw = os.environ.get(name)
    if raw is None or raw.strip() == "":
        return None
    try:
        value = int(raw)
    except ValueError:
        raise ConfigurationError(f"{name}: valor inteiro inválido {raw!r}") from None
    if value < minimum:
        raise ConfigurationError(f"{name}: valor precisa ser ≥ {minimum}")
    return value


def apply_environment(cfg: Config, dotenv_path: Optional[PathLike] = None) -> Config:
    """Aplica ``RBDARCY_WORKERS`` e ``RBDARCY_SEED`` (lidos também de ``.env``)."""

    load_dotenv(dotenv_path)
    workers = _env_int(ENV_WORKERS, 1)
    seed = _env_int(ENV_SEED, 0)
    if workers is not None:
        cfg["run"]["workers"] = workers
        log.debug(f"{ENV_WORKERS} = {workers}")
    if seed is not None:
        cfg["sampling"]["seed"] = seed
        log.debug(f"{ENV_SEED} = {seed}")
    return cfg


@dataclass(eq=False)
class Case:
    """Caso pronto para o offline: malha rotulada, propriedades e tempo."""

    config: Config
    mesh: Mesh
    props: FluidRockProps
    ranges: ParameterRanges
    dt: float
    n_steps: int

    @property
    def final_time(self) -> float:
        return self.dt * self.n_steps


def _box(spec: Dict[str, Any]) -> Box:
    return Box(tuple(spec["lower"]), tuple(spec["upper"]))


def build_case(cfg: Config) -> Case:
    """Malha com Γ_int e perfurações, propriedades, intervalos, Δt e N."""

    m = cfg["mesh"]
    try:
        props = FluidRockProps(**cfg["physics"])
    except ConfigurationError as e:
        raise cfg.error("config.physics", str(e)) from e

    step, total = cfg["time"]["step_days"], cfg["time"]["final_time_days"]
    n_steps = int(round(total / step))
    if n_steps < 1 or abs(n_steps * step - total) > 1e-9 * total:
        raise cfg.error("config.time.final_time_days", f"T = {total} dias não é múltiplo de Δt = {step} dias")

    try:
        mesh = build_cartesian_mesh(*m["shape"], m["extents"], ZoneSpec(_box(m["reservoir"])))
        mesh = tag_boundaries(mesh, m["dirichlet"])
        gamma_box = _box(m["gamma_int"])
        if m["gamma_int"]["snap"]:
            gamma_box = snap_box(mesh, gamma_box)
        gamma = select_gamma_int(mesh, gamma_box, m["gamma_int"]["sides"])
        well_box = _box(m["well"])
        if m["well"]["snap"]:
            well_box = snap_box(mesh, well_box)
        perforations = select_perforations(mesh, well_box)
    except ConfigurationError as e:
        raise cfg.error("config.mesh", str(e)) from e
    mesh = with_selections(mesh, gamma, perforations)

    p = cfg["parameters"]
    ranges = ParameterRanges(tuple(p["kappa1"]), tuple(p["kappa2"]))
    log.info(
        f"Caso: {mesh.n_cells} células, {mesh.n_unknowns} incógnitas, |Γ_int| = {gamma.faces.size} faces, "
        f"{perforations.size} células perfuradas, N = {n_steps}"
    )
    return Case(cfg, mesh, props, ranges, step * SECONDS_PER_DAY, n_steps)


__all__ = [
    "ENV_WORKERS",
    "ENV_SEED",
    "SCHEMA",
    "Config",
    "parse_config",
    "load_config",
    "apply_environment",
    "Case",
    "build_case",
]
