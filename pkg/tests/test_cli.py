import logging

import numpy as np
import pytest

from cli import EXIT_CONFIG, EXIT_OK, TqdmHandler, main, run_offline, setup_logging
from energy import symmetric_part
from persistence import load_model
from report import read_rows

from .conftest import TINY_CONFIG


@pytest.fixture(scope="module")
def offline_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("offline")
    assert main(["offline", "--config", str(TINY_CONFIG), "--out", str(out)]) == EXIT_OK
    return out


def test_offline_writes_archive_and_diagnostics(offline_dir):
    archive = load_model(offline_dir / "model.rbd")
    assert archive.provenance["estimator"] == "delta_s_tilde"
    assert archive.provenance["config"] == "tiny.yaml"
    rows = read_rows(offline_dir / "greedy.csv")
    assert rows and rows[0]["round"] == 1


def test_online_grid(offline_dir, tmp_path):
    code = main(["online", "--archive", str(offline_dir / "model.rbd"), "--grid", "2", "2", "--out", str(tmp_path)])
    assert code == EXIT_OK
    rows = read_rows(tmp_path / "online.csv")
    assert len(rows) == 4
    assert all(r["delta_pr"] >= 0 for r in rows)


def test_online_points_file(offline_dir, tmp_path):
    points = tmp_path / "pontos.csv"
    points.write_text("kappa1,kappa2\n5e-13,1e-16\n2e-13,5e-16\n")
    code = main(["online", "--archive", str(offline_dir / "model.rbd"), "--points", str(points), "--horizon", "4", "--out", str(tmp_path)])
    assert code == EXIT_OK
    rows = read_rows(tmp_path / "online.csv")
    assert [r["horizon"] for r in rows] == [4, 4]


def test_validate_and_report(offline_dir, tmp_path):
    code = main(["validate", "--archive", str(offline_dir / "model.rbd"), "--out", str(tmp_path)])
    assert code == EXIT_OK
    rows = read_rows(tmp_path / "validation.csv")
    assert {r["set"] for r in rows} == {"training", "test"}
    assert all(r["reliable"] == 1 for r in rows)

    assert main(["report", str(tmp_path / "validation.csv"), "--out", str(tmp_path / "rel")]) == EXIT_OK
    assert (tmp_path / "rel" / "error_curves.csv").is_file()
    assert (tmp_path / "rel" / "effectivities.csv").is_file()


def test_missing_archive(tmp_path):
    assert main(["online", "--archive", str(tmp_path / "nada.rbd"), "--out", str(tmp_path)]) == EXIT_CONFIG


def test_missing_config(tmp_path):
    assert main(["offline", "--config", str(tmp_path / "nada.yaml"), "--out", str(tmp_path)]) == EXIT_CONFIG


def test_missing_report_input(tmp_path):
    assert main(["report", str(tmp_path / "nada.csv"), "--out", str(tmp_path)]) == EXIT_CONFIG


def test_unknown_estimator_rejected_by_parser(tmp_path):
    with pytest.raises(SystemExit):
        main(["offline", "--config", str(TINY_CONFIG), "--estimator", "gho7", "--out", str(tmp_path)])


def test_setup_logging_installs_single_handler():
    setup_logging()
    setup_logging(verbose=True)
    root = logging.getLogger()
    assert sum(isinstance(h, TqdmHandler) for h in root.handlers) == 1
    assert root.level == logging.DEBUG
    setup_logging()
    assert root.level == logging.INFO


def test_variant_energy_is_symmetric_flux_block(tiny_case):
    run = run_offline(tiny_case, estimator="gho1")
    archive = run.archive
    assert archive.variant_energy is not None
    A_star = archive.affine.operator(tiny_case.ranges.log_midpoint()).A
    expected = symmetric_part(A_star).toarray()
    got = archive.variant_energy.matrix.toarray()
    assert np.allclose(got, expected, rtol=1e-12, atol=1e-12 * np.abs(expected).max())
    assert not np.allclose(got, archive.energy.matrix.toarray())
    assert run.greedy.dual is None
