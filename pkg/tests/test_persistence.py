from unittest import mock

import numpy as np
import pytest

from errors import ArchiveError, ChecksumError, TruncatedArchiveError, VersionError
from mpfa import ParameterPoint
from online import evaluate
from persistence import FORMAT_VERSION, export_csv, load_model, read, save, save_model

PARTS = {
    "a/values": np.arange(6, dtype=float).reshape(2, 3),
    "a/ids": np.array([3, 1, 2], dtype=np.int64),
    "b": np.array([1.5]),
}
XI = ParameterPoint(6e-13, 8e-16)


@pytest.fixture
def archive_path(tmp_path):
    path = tmp_path / "parts.rbd"
    save(path, PARTS, {"note": "teste"})
    return path


def test_save_and_read(archive_path):
    arc = read(archive_path)
    assert arc.meta == {"note": "teste"}
    assert set(arc.parts) == set(PARTS)
    for name, arr in PARTS.items():
        assert np.array_equal(arc.parts[name], arr)
        assert arc.parts[name].dtype == arr.dtype


def test_big_endian_input_stored_little_endian(tmp_path):
    path = tmp_path / "be.rbd"
    save(path, {"x": np.arange(3, dtype=">f8")})
    back = read(path).parts["x"]
    assert back.dtype.byteorder in ("<", "=")
    assert np.array_equal(back, [0.0, 1.0, 2.0])


def test_corrupted_payload(archive_path):
    data = bytearray(archive_path.read_bytes())
    data[-1] ^= 0xFF
    archive_path.write_bytes(bytes(data))
    with pytest.raises(ChecksumError):
        read(archive_path)


def test_truncated_file(archive_path):
    data = archive_path.read_bytes()
    archive_path.write_bytes(data[:-5])
    with pytest.raises(TruncatedArchiveError):
        read(archive_path)
    archive_path.write_bytes(data[:10])
    with pytest.raises(TruncatedArchiveError):
        read(archive_path)


def test_version_mismatch(archive_path):
    data = bytearray(archive_path.read_bytes())
    data[8:12] = (FORMAT_VERSION + 1).to_bytes(4, "little")
    archive_path.write_bytes(bytes(data))
    with pytest.raises(VersionError):
        read(archive_path)


def test_foreign_file(tmp_path):
    path = tmp_path / "foreign.rbd"
    path.write_bytes(b"PK\x03\x04" + b"\x00" * 64)
    with pytest.raises(ArchiveError):
        read(path)


def test_failed_write_keeps_previous_file(archive_path):
    before = archive_path.read_bytes()
    with mock.patch("persistence.os.replace", side_effect=OSError("disco cheio")):
        with pytest.raises(OSError):
            save(archive_path, {"c": np.zeros(2)})
    assert archive_path.read_bytes() == before


def test_export_csv(tmp_path):
    count = export_csv(PARTS, tmp_path / "csv")
    assert count == 3
    assert (tmp_path / "csv" / "a__values.csv").is_file()


def test_model_roundtrip_preserves_online_results(tmp_path, tiny_run):
    path = tmp_path / "model.rbd"
    save_model(path, tiny_run.archive)
    loaded = load_model(path)
    assert loaded.model.n_pr == tiny_run.archive.model.n_pr
    assert loaded.model.n_du == tiny_run.archive.model.n_du
    assert loaded.provenance == tiny_run.archive.provenance
    a = evaluate(tiny_run.archive.model, XI)
    b = evaluate(loaded.model, XI)
    assert b.output == pytest.approx(a.output, rel=1e-14)
    assert b.estimates.delta_pr == pytest.approx(a.estimates.delta_pr, rel=1e-12)
    assert b.estimates.delta_s_tilde == pytest.approx(a.estimates.delta_s_tilde, rel=1e-12)


def test_offline_is_deterministic(tmp_path, tiny_case, tiny_run):
    from cli import run_offline

    first, second = tmp_path / "one.rbd", tmp_path / "two.rbd"
    save_model(first, tiny_run.archive)
    save_model(second, run_offline(tiny_case).archive)
    assert first.read_bytes() == second.read_bytes()


def test_incomplete_model_archive(tmp_path):
    path = tmp_path / "partial.rbd"
    save(path, {"p0": np.zeros(3)}, {})
    with pytest.raises(ArchiveError):
        load_model(path)
