import numpy as np
import pytest

from langevin_w2 import io
from langevin_w2.analysis import LemmaCheckReport
from langevin_w2.chain import EnsembleSnapshot


@pytest.fixture
def snapshots():
    rng = np.random.default_rng(0)
    return [EnsembleSnapshot(k, rng.standard_normal((7, 3))) for k in (1, 10, 100)]


def test_binary_round_trip_is_exact(tmp_path, snapshots):
    path = tmp_path / "s.bin"
    io.write_snapshots_binary(path, snapshots)
    raw = path.read_bytes()
    assert raw[:4] == b"W2L1"
    assert len(raw) == 4 + 16 + 21 * 5 * 8
    back = io.read_snapshots_binary(path)
    assert [s.k for s in back] == [1, 10, 100]
    for a, b in zip(snapshots, back):
        assert a.points.tobytes() == b.points.tobytes()


def test_binary_rejects_bad_files(tmp_path, snapshots):
    path = tmp_path / "s.bin"
    io.write_snapshots_binary(path, snapshots)
    raw = path.read_bytes()
    (tmp_path / "bad_magic.bin").write_bytes(b"XXXX" + raw[4:])
    (tmp_path / "short.bin").write_bytes(raw[:-8])
    with pytest.raises(io.FormatError):
        io.read_snapshots_binary(tmp_path / "bad_magic.bin")
    with pytest.raises(io.FormatError):
        io.read_snapshots_binary(tmp_path / "short.bin")


def test_csv_round_trip_is_exact(tmp_path, snapshots):
    path = tmp_path / "s.csv"
    io.write_snapshots_csv(path, snapshots)
    assert path.read_text().splitlines()[0] == "k,chain_id,x_0,x_1,x_2"
    for a, b in zip(snapshots, io.read_snapshots_csv(path)):
        assert np.array_equal(a.points, b.points)


def test_report_csv_columns_and_floats(tmp_path):
    rows = [{"experiment": "e", "grid_value": 0.1, "k": 3, "w2": 1 / 3, "stderr": None, "method": "m", "seed": 7}]
    path = tmp_path / "r.csv"
    io.write_report_csv(path, rows)
    lines = path.read_text().splitlines()
    assert lines[0] == "experiment,grid_value,k,w2,stderr,method,seed"
    assert float(lines[1].split(",")[3]) == 1 / 3
    assert io.read_report_csv(path)[0]["stderr"] == ""


def test_lemma_reports_round_trip(tmp_path):
    reports = [
        LemmaCheckReport("a", 10, -0.25, True, 0.0, {"x": [1.5, 2.0]}),
        LemmaCheckReport("b", 1, 1e-300, False, 1e-12, {}),
    ]
    path = tmp_path / "checks.jsonl"
    io.write_lemma_reports(path, reports)
    assert io.read_lemma_reports(path) == reports
