"""Esquemas CSV, curvas de erro e tabelas de efetividade."""

import csv
import logging
import math
import os
from collections import defaultdict
from pathlib import Path
from typing import Callable, Dict, Iterable, List, Optional, Sequence, Union

import numpy as np

from mpfa import ParameterPoint

log = logging.getLogger(__name__)

EXACT = "exact"

GREEDY_COLUMNS = [
    "round",
    "n_pr",
    "n_du",
    "kappa1",
    "kappa2",
    "estimator",
    "max_estimator",
    "max_true_error",
    "max_output_error",
    "stop",
]

ONLINE_COLUMNS = [
    "kappa1",
    "kappa2",
    "horizon",
    "n_pr",
    "n_du",
    "output",
    "output_plain",
    "delta_pr",
    "delta_du",
    "delta_s",
    "delta_s_tilde",
    "alpha_lb",
    "wall_time",
    "gho1",
    "gho2",
    "ghoqoi1",
    "ghoqoi2",
    "ghonew1",
    "ghonew2",
]

VALIDATION_COLUMNS = [
    "set",
    "round",
    "n_pr",
    "n_du",
    "kappa1",
    "kappa2",
    "horizon",
    "delta_pr",
    "err_pr",
    "rel_err_pr",
    "eff_pr",
    "delta_du",
    "err_du",
    "eff_du",
    "hf_output",
    "output",
    "output_plain",
    "delta_s",
    "err_s",
    "eff_s",
    "delta_s_tilde",
    "err_s_plain",
    "eff_s_tilde",
    "reliable",
]

SCM_COLUMNS = ["set", "kappa1", "kappa2", "alpha", "alpha_lb", "alpha_ub", "ratio"]

PathLike = Union[str, os.PathLike]


def write_rows(path: PathLike, rows: Iterable[Dict], columns: Sequence[str]) -> int:
    """Grava ``rows`` com as colunas fixas; campos ausentes ficam vazios."""

    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    count = 0
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(columns), extrasaction="ignore", restval="")
        writer.writeheader()
        for row in rows:
            writer.writerow({k: _cell(v) for k, v in row.items()})
            count += 1
    log.info(f"{count} linhas gravadas em {path}")
    return count


def _cell(value):
    if isinstance(value, (bool, np.bool_)):
        return int(value)
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return value


def _parse(value: str):
    if value == "":
        return None
    try:
        number = float(value)
    except ValueError:
        return value
    return int(number) if number.is_integer() and "." not in value and "e" not in value.lower() else number


def read_rows(path: PathLike) -> List[Dict]:
    """Lê um CSV gravado por :func:`write_rows`; números voltam como int/float."""

    with open(path, newline="", encoding="utf-8") as fh:
        return [{k: _parse(v) for k, v in row.items()} for row in csv.DictReader(fh)]


def _numeric(value) -> Optional[float]:
    if isinstance(value, (int, float)) and not isinstance(value, bool) and math.isfinite(value):
        return float(value)
    return None


def _order(value):
    if isinstance(value, (int, float)) and not isinstance(value, bool):
        return (0, float(value), "")
    return (1, 0.0, "" if value is None else str(value))


def _group(rows: Iterable[Dict], keys: Sequence[str]) -> Dict[tuple, List[Dict]]:
    groups: Dict[tuple, List[Dict]] = defaultdict(list)
    for row in rows:
        groups[tuple(row.get(k) for k in keys)].append(row)
    return dict(sorted(groups.items(), key=lambda kv: tuple(_order(v) for v in kv[0])))


def _max(rows: List[Dict], column: str) -> float:
    values = [v for v in (_numeric(r.get(column)) for r in rows) if v is not None]
    return max(values) if values else float("nan")


def error_curves(rows: Iterable[Dict]) -> List[Dict]:
    """Máximos por (conjunto, 𝖭_pr): erros verdadeiros e estimadores.

    Serve para as curvas de erro em função da dimensão da base.
    """

    out = []
    for (name, n_pr), group in _group(rows, ("set", "n_pr")).items():
        out.append(
            {
                "set": name,
                "n_pr": n_pr,
                "n_du": max(int(r.get("n_du") or 0) for r in group),
                "max_err_pr": _max(group, "err_pr"),
                "max_rel_err_pr": _max(group, "rel_err_pr"),
                "max_delta_pr": _max(group, "delta_pr"),
                "max_err_du": _max(group, "err_du"),
                "max_delta_du": _max(group, "delta_du"),
                "max_err_s": _max(group, "err_s"),
                "max_err_s_plain": _max(group, "err_s_plain"),
                "max_delta_s": _max(group, "delta_s"),
                "max_delta_s_tilde": _max(group, "delta_s_tilde"),
            }
        )
    return out


EFFECTIVITIES = {"eff_pr": "delta_pr", "eff_du": "delta_du", "eff_s": "delta_s", "eff_s_tilde": "delta_s_tilde"}


def effectivity_table(rows: Iterable[Dict]) -> List[Dict]:
    """Efetividades máxima e média por 𝖭_pr; entradas ``exact`` são ignoradas."""

    out = []
    for (n_pr,), group in _group(rows, ("n_pr",)).items():
        row: Dict = {"n_pr": n_pr, "samples": len(group)}
        for column, name in EFFECTIVITIES.items():
            values = np.array([v for v in (_numeric(r.get(column)) for r in group) if v is not None])
            row[f"max_{name}"] = float(values.max()) if values.size else float("nan")
            row[f"mean_{name}"] = float(values.mean()) if values.size else float("nan")
            row[f"exact_{name}"] = sum(1 for r in group if r.get(column) == EXACT)
        out.append(row)
    return out


def scm_ratio_table(
    sets: Dict[str, Sequence[ParameterPoint]],
    bound,
    exact: Callable[[ParameterPoint], float],
) -> List[Dict]:
    """Razão ``r = (α - α_LB) / (α_UB - α_LB)`` do SCM (informativa)."""

    rows = []
    for name, points in sets.items():
        for xi in points:
            lb, ub = bound.lower_bound(xi), bound.upper_bound(xi)
            alpha = exact(xi)
            gap = ub - lb
            ratio = (alpha - lb) / gap if gap > 0 else float("nan")
            rows.append(
                {"set": name, "kappa1": xi.kappa1, "kappa2": xi.kappa2, "alpha": alpha, "alpha_lb": lb, "alpha_ub": ub, "ratio": ratio}
            )
    return rows


def summarize(rows: Iterable[Dict]) -> Dict[str, float]:
    """Resumo da validação: violações e piores efetividades."""

    rows = list(rows)
    violations = sum(1 for r in rows if r.get("reliable") in (0, False))
    return {
        "samples": len(rows),
        "violations": violations,
        "max_eff_pr": _max(rows, "eff_pr"),
        "max_eff_s_tilde": _max(rows, "eff_s_tilde"),
        "max_rel_err_pr": _max(rows, "rel_err_pr"),
    }


__all__ = [
    "EXACT",
    "GREEDY_COLUMNS",
    "ONLINE_COLUMNS",
    "VALIDATION_COLUMNS",
    "SCM_COLUMNS",
    "write_rows",
    "read_rows",
    "error_curves",
    "effectivity_table",
    "scm_ratio_table",
    "summarize",
]
