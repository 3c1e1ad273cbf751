"""Linha de comando: offline, online, validação e relatórios."""

import argparse
import logging
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np
from tqdm import tqdm

from config import Case, Config, apply_environment, build_case, load_config
from eim import train_affine_model
from energy import EnergyMatrix, alpha_m, build_gstar, symmetric_part
from errors import ArchiveError, ConfigurationError, RbError
from estimators import ESTIMATORS, OUTPUT_VARIANTS, effectivity, is_reliable, true_errors
from greedy import GreedyResult, OfflineProblem, needs_variant, pod_greedy_goal, pod_greedy_primal
from hf import hydrostatic_init
from mpfa import MpfaDiscretization, ParameterPoint
from online import ReducedModel, evaluate
from persistence import ModelArchive, load_model, save_model
from report import (
    EXACT,
    GREEDY_COLUMNS,
    ONLINE_COLUMNS,
    SCM_COLUMNS,
    VALIDATION_COLUMNS,
    effectivity_table,
    error_curves,
    read_rows,
    scm_ratio_table,
    summarize,
    write_rows,
)
from scm import ExactCoercivity, ScmModel, scm_train
from sampling import parallel_map, parameter_grid, test_set, training_set

log = logging.getLogger(__name__)

EXIT_OK, EXIT_UNRELIABLE, EXIT_CONFIG, EXIT_NUMERICAL = 0, 1, 2, 3


class TqdmHandler(logging.Handler):
    """Handler que escreve via ``tqdm.write`` para não quebrar as barras."""

    def emit(self, record: logging.LogRecord) -> None:
        try:
            tqdm.write(self.format(record), file=sys.stderr)
        except Exception:
            self.handleError(record)


def setup_logging(verbose: bool = False) -> None:
    root = logging.getLogger()
    for handler in list(root.handlers):
        if isinstance(handler, TqdmHandler):
            root.removeHandler(handler)
    handler = TqdmHandler()
    handler.setFormatter(logging.Formatter("%(levelname)s %(name)s: %(message)s"))
    root.addHandler(handler)
    root.setLevel(logging.DEBUG if verbose else logging.INFO)


def _quiet() -> bool:
    return not sys.stderr.isatty()


# --- offline ----------------------------------------------------------------


@dataclass(eq=False)
class OfflineRun:
    archive: ModelArchive
    greedy: GreedyResult
    training: List[ParameterPoint]
    test: List[ParameterPoint]


def _coercivity(cfg: Config, affine, energy: EnergyMatrix, training, ranges, xi_star, workers, quiet):
    scm = cfg["scm"]
    dense = cfg["solver"]["dense_eig_limit"]
    if not scm["enabled"]:
        log.info("SCM desativado: coercividade exata")
        return ExactCoercivity(affine.sym_terms, affine.theta, energy, ranges, dense)
    return scm_train(
        affine.sym_terms,
        affine.theta,
        energy,
        training,
        ranges,
        m1=scm["m1"],
        m2=scm["m2"],
        tol=scm["tolerance"],
        xi_star=xi_star,
        max_iterations=scm["max_iterations"],
        dense_limit=dense,
        workers=workers,
        quiet=quiet,
    )


def run_offline(case: Case, estimator: Optional[str] = None, quiet: bool = True) -> OfflineRun:
    """EIM → G* → α_M → SCM → POD-Greedy sobre um caso montado."""

    cfg = case.config
    estimator = estimator or cfg["greedy"]["estimator"]
    if estimator not in ESTIMATORS:
        raise ConfigurationError(f"Estimador desconhecido: {estimator}")
    workers = cfg["run"]["workers"]
    seed = cfg["sampling"]["seed"]
    dense = cfg["solver"]["dense_eig_limit"]

    disc = MpfaDiscretization(case.mesh, case.props)
    p0 = hydrostatic_init(case.mesh, case.props)
    training = training_set(case.ranges, cfg["sampling"]["training_size"], seed)
    test = test_set(case.ranges, cfg["sampling"]["test_size"], seed)

    eim, affine = train_affine_model(disc, training, cfg["eim"]["tolerance"], cfg["eim"]["max_terms"], workers, quiet)
    log.info(f"EIM: M = {eim.n_terms}, erro máximo {eim.max_error:.3e} ({eim.stop_reason})")

    xi_star = case.ranges.log_midpoint()
    A_star = affine.operator(xi_star).A
    energy = build_gstar(affine.mass, A_star, case.dt, xi_star)
    a_mass = alpha_m(affine.mass, energy, dense)
    coercivity = _coercivity(cfg, affine, energy, training, case.ranges, xi_star, workers, quiet)

    variant_energy, variant_coercivity = None, None
    if needs_variant(estimator):
        variant_energy = EnergyMatrix.from_matrix(symmetric_part(A_star), case.dt, xi_star, label="A*sym")
        variant_coercivity = _coercivity(cfg, affine, variant_energy, training, case.ranges, xi_star, workers, quiet)

    problem = OfflineProblem(
        affine=affine,
        energy=energy,
        p0=p0,
        dt=case.dt,
        n_steps=case.n_steps,
        ranges=case.ranges,
        training=training,
        coercivity=coercivity,
        alpha_mass=a_mass,
        xi_star=xi_star,
        variant_energy=variant_energy,
        variant_coercivity=variant_coercivity,
        workers=workers,
        quiet=quiet,
        solver_tol=cfg["solver"]["tolerance"],
    )
    g = cfg["greedy"]
    drive = pod_greedy_goal if estimator in OUTPUT_VARIANTS else pod_greedy_primal
    result = drive(
        problem,
        max_dimension=g["max_dimension"],
        tol=g["tolerance"],
        ric=g["ric"],
        estimator=estimator,
        relative=g["relative"],
        track_true_errors=g["track_true_errors"],
        max_rounds=g["max_rounds"],
    )
    archive = ModelArchive(
        model=result.model,
        mesh=case.mesh,
        props=case.props,
        affine=affine,
        energy=energy,
        p0=p0,
        eim=eim,
        variant_energy=variant_energy,
        provenance={
            "config": Path(cfg.source).name,
            "seed": seed,
            "training_size": len(training),
            "test_size": len(test),
            "estimator": estimator,
            "stop_reason": result.stop_reason,
            "eim_terms": eim.n_terms,
        },
    )
    return OfflineRun(archive, result, training, test)


def cmd_offline(args: argparse.Namespace) -> int:
    cfg = _load(args)
    case = build_case(cfg)
    run = run_offline(case, args.estimator, quiet=_quiet())
    out = Path(args.out)
    archive_path = Path(args.archive) if args.archive else out / "model.rbd"
    save_model(archive_path, run.archive)
    write_rows(out / "greedy.csv", run.greedy.diagnostics, GREEDY_COLUMNS)
    model = run.archive.model
    log.info(f"Offline concluído: N_pr = {model.n_pr}, N_du = {model.n_du}, parada = {run.greedy.stop_reason}")
    return EXIT_OK


def _load(args: argparse.Namespace) -> Config:
    cfg = apply_environment(load_config(args.config))
    if getattr(args, "workers", None) is not None:
        cfg["run"]["workers"] = args.workers
    if getattr(args, "seed_override", None) is not None:
        cfg["sampling"]["seed"] = args.seed_override
    return cfg


# --- online -----------------------------------------------------------------


def _archive(args: argparse.Namespace) -> ModelArchive:
    if not args.archive:
        raise ArchiveError("Informe --archive")
    path = Path(args.archive)
    if not path.is_file():
        raise ArchiveError(f"Arquivo de modelo não encontrado: {path}")
    return load_model(path)


def _points_from_csv(path: str) -> List[ParameterPoint]:
    rows = read_rows(path)
    try:
        return [ParameterPoint(float(r["kappa1"]), float(r["kappa2"])) for r in rows]
    except (KeyError, TypeError, ValueError) as e:
        raise ConfigurationError(f"{path}: colunas kappa1/kappa2 inválidas") from e


def _samples(archive: ModelArchive, seed: Optional[int]) -> Dict[str, List[ParameterPoint]]:
    prov = archive.provenance
    seed = prov.get("seed") if seed is None else seed
    ranges = archive.model.ranges
    return {
        "training": training_set(ranges, int(prov.get("training_size", 100)), int(seed)),
        "test": test_set(ranges, int(prov.get("test_size", 50)), int(seed)),
    }


def cmd_online(args: argparse.Namespace) -> int:
    archive = _archive(args)
    model = archive.model.online_view()
    if args.grid:
        points = parameter_grid(model.ranges, args.grid[0], args.grid[1])
    elif args.points:
        points = _points_from_csv(args.points)
    else:
        points = _samples(archive, args.seed_override)["test"]
    horizon = args.horizon
    results = parallel_map(lambda xi: evaluate(model, xi, horizon), points, args.workers or 1, desc="online", quiet=_quiet())
    write_rows(Path(args.out) / "online.csv", (r.record() for r in results), ONLINE_COLUMNS)
    mean = np.mean([r.wall_time for r in results]) if results else 0.0
    log.info(f"Online: {len(results)} parâmetros, {mean * 1e3:.3f} ms por avaliação")
    return EXIT_OK


# --- validação --------------------------------------------------------------


def _eff(estimate: float, error: float):
    value, exact = effectivity(estimate, error)
    return EXACT if exact else value


def validation_row(problem: OfflineProblem, model: ReducedModel, xi: ParameterPoint, name: str, rnd: int) -> Dict:
    """Estimativas, erros verdadeiros e efetividades de um ξ."""

    traj, dual, outputs = problem.hf_solutions(xi)
    res = evaluate(model, xi)
    red_p = model.lift_primal(res.primal_states)
    if model.Z_du is not None and res.dual_states is not None:
        red_d = model.lift_dual(res.dual_states)
    else:
        red_d = np.zeros_like(dual.states)
    err = true_errors(problem.energy, traj.states, red_p, dual.states, red_d, outputs[-1], res.output, res.output_plain)
    est = res.estimates
    goal = np.isfinite(est.delta_s)
    scale_s = abs(outputs[-1])
    reliable = is_reliable(est.delta_pr, err.primal, err.primal_norm)
    if goal:
        reliable &= is_reliable(est.delta_du, err.dual, 1.0)
        reliable &= is_reliable(est.delta_s, err.output_corrected, scale_s)
        reliable &= is_reliable(est.delta_s_tilde, err.output_plain, scale_s)
    return {
        "set": name,
        "round": rnd,
        "n_pr": model.n_pr,
        "n_du": model.n_du,
        "kappa1": xi.kappa1,
        "kappa2": xi.kappa2,
        "horizon": res.horizon,
        "delta_pr": est.delta_pr,
        "err_pr": err.primal,
        "rel_err_pr": err.primal / err.primal_norm if err.primal_norm > 0 else float("nan"),
        "eff_pr": _eff(est.delta_pr, err.primal),
        "delta_du": est.delta_du,
        "err_du": err.dual if goal else float("nan"),
        "eff_du": _eff(est.delta_du, err.dual) if goal else float("nan"),
        "hf_output": outputs[-1],
        "output": res.output,
        "output_plain": res.output_plain,
        "delta_s": est.delta_s,
        "err_s": err.output_corrected,
        "eff_s": _eff(est.delta_s, err.output_corrected) if goal else float("nan"),
        "delta_s_tilde": est.delta_s_tilde,
        "err_s_plain": err.output_plain,
        "eff_s_tilde": _eff(est.delta_s_tilde, err.output_plain) if goal else float("nan"),
        "reliable": bool(reliable),
    }


def _truth(archive: ModelArchive) -> OfflineProblem:
    model = archive.model
    return OfflineProblem(
        affine=archive.affine,
        energy=archive.energy,
        p0=archive.p0,
        dt=model.dt,
        n_steps=model.n_steps,
        ranges=model.ranges,
        training=[],
        coercivity=model.coercivity,
        alpha_mass=model.alpha_mass,
    )


def _rounds(model: ReducedModel, per_round: bool) -> List[ReducedModel]:
    if not per_round or not model.rounds:
        return [model]
    models = []
    for rec in model.rounds:
        n_pr, n_du = int(rec["n_pr"]), int(rec["n_du"])
        models.append(model if (n_pr, n_du) == (model.n_pr, model.n_du) else model.truncated(n_pr, n_du))
    return models


def run_validation(archive: ModelArchive, sets: Dict[str, Sequence[ParameterPoint]], per_round: bool = False, workers: int = 1) -> List[Dict]:
    problem = _truth(archive)
    rows: List[Dict] = []
    models = _rounds(archive.model, per_round)
    for rnd, model in enumerate(models, start=1):
        for name, points in sets.items():
            rows.extend(
                parallel_map(lambda xi: validation_row(problem, model, xi, name, rnd), list(points), workers, desc=f"{name} #{rnd}", quiet=_quiet())
            )
    return rows


def cmd_validate(args: argparse.Namespace) -> int:
    archive = _archive(args)
    samples = _samples(archive, args.seed_override)
    if args.points:
        samples = {"points": _points_from_csv(args.points)}
    out = Path(args.out)
    rows = run_validation(archive, samples, args.per_round, args.workers or 1)
    write_rows(out / "validation.csv", rows, VALIDATION_COLUMNS)

    coercivity = archive.model.coercivity
    if args.scm_ratio and isinstance(coercivity, ScmModel):
        oracle = ExactCoercivity(archive.affine.sym_terms, archive.affine.theta, archive.energy, archive.model.ranges)
        write_rows(out / "scm_ratio.csv", scm_ratio_table(samples, coercivity, oracle.value), SCM_COLUMNS)

    summary = summarize(rows)
    log.info(
        f"Validação: {summary['samples']} avaliações, {summary['violations']} violações, "
        f"max η_pr = {summary['max_eff_pr']:.3g}, max η̃_s = {summary['max_eff_s_tilde']:.3g}"
    )
    if summary["violations"]:
        log.error(f"Estimador não confiável em {summary['violations']} avaliações")
        return EXIT_UNRELIABLE
    return EXIT_OK


# --- relatórios -------------------------------------------------------------


def cmd_report(args: argparse.Namespace) -> int:
    rows: List[Dict] = []
    for path in args.inputs:
        if not Path(path).is_file():
            raise ConfigurationError(f"CSV não encontrado: {path}")
        rows.extend(read_rows(path))
    out = Path(args.out)
    curves = error_curves(rows)
    table = effectivity_table(rows)
    write_rows(out / "error_curves.csv", curves, list(curves[0]) if curves else ["set", "n_pr"])
    write_rows(out / "effectivities.csv", table, list(table[0]) if table else ["n_pr"])
    log.info(f"Relatório: {len(curves)} pontos de curva, {len(table)} linhas de efetividade")
    return EXIT_OK


# --- parser -----------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rbdarcy", description="Base reduzida certificada para Darcy compressível (MPFA)")
    parser.add_argument("--verbose", "-v", action="store_true", help="log em nível DEBUG")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser) -> None:
        p.add_argument("--out", default="out", help="diretório de saída")
        p.add_argument("--workers", type=int, default=None, help="número de threads por ξ")
        p.add_argument("--seed-override", type=int, default=None, help="semente das amostragens")

    p = sub.add_parser("offline", help="EIM, SCM e POD-Greedy; grava o arquivo do modelo")
    p.add_argument("--config", required=True)
    p.add_argument("--archive", default=None, help="caminho do arquivo (padrão: <out>/model.rbd)")
    p.add_argument("--estimator", choices=ESTIMATORS, default=None)
    common(p)
    p.set_defaults(func=cmd_offline)

    p = sub.add_parser("online", help="avaliações certificadas a partir do arquivo")
    p.add_argument("--archive", required=True)
    p.add_argument("--grid", type=int, nargs=2, metavar=("N1", "N2"), default=None)
    p.add_argument("--points", default=None, help="CSV com colunas kappa1,kappa2")
    p.add_argument("--horizon", type=int, default=None, help="passo final n ≤ N")
    common(p)
    p.set_defaults(func=cmd_online)

    p = sub.add_parser("validate", help="comparação com a alta fidelidade e efetividades")
    p.add_argument("--archive", required=True)
    p.add_argument("--points", default=None, help="CSV com colunas kappa1,kappa2")
    p.add_argument("--per-round", action="store_true", help="repete a validação para cada rodada do guloso")
    p.add_argument("--scm-ratio", action="store_true", help="grava a razão de qualidade do SCM")
    common(p)
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("report", help="curvas de erro e tabelas de efetividade")
    p.add_argument("inputs", nargs="+", help="CSVs gerados por validate")
    p.add_argument("--out", default="out")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    setup_logging(args.verbose)
    try:
        return args.func(args)
    except (ConfigurationError, ArchiveError) as e:
        log.error(f"{e}")
        return EXIT_CONFIG
    except RbError as e:
        log.error(f"Falha numérica: {e}")
        return EXIT_NUMERICAL
    except ValueError as e:
        log.error(f"Argumento inválido: {e}")
        return EXIT_CONFIG


__all__ = [
    "TqdmHandler",
    "setup_logging",
    "OfflineRun",
    "run_offline",
    "run_validation",
    "validation_row",
    "build_parser",
    "main",
    "cmd_offline",
    "cmd_online",
    "cmd_validate",
    "cmd_report",
]
