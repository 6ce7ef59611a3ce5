import numpy as np
import pytest

from vsm import io
from vsm.errors import DataError
from vsm.grid import Grid1D, GridDensity
from vsm.measure import EmpiricalMeasure


def test_binary_round_trip_and_header(tmp_path):
    a = np.random.default_rng(0).normal(size=(3, 4, 5))
    p = tmp_path / "a.bin"
    io.write_binary(p, a)
    raw = p.read_bytes()
    assert raw[:4] == b"VSM1"
    assert np.frombuffer(raw[4:36], dtype="<i8").tolist() == [3, 3, 4, 5]
    assert len(raw) == 36 + 8 * a.size
    assert np.array_equal(io.read_binary(p), a)


def test_binary_rejects_garbage(tmp_path):
    p = tmp_path / "x.bin"
    p.write_bytes(b"NOPE" + bytes(16))
    with pytest.raises(DataError):
        io.read_binary(p)


def test_ensemble_csv_long_format(tmp_path):
    states = np.arange(12.0).reshape(2, 3, 2)  # R=2, N=3, two times
    p = tmp_path / "e.csv"
    io.write_ensemble_csv(p, [0.0, 0.5], states)
    lines = p.read_text().splitlines()
    assert lines[0] == "replication,t,particle,value"
    assert len(lines) == 1 + 12
    assert lines[1] == "0,0.0,0,0.0"
    assert lines[5] == "0,0.5,1,3.0"
    cols = io.read_columns(p)
    assert np.array_equal(cols["value"][cols["replication"] == 1][:3], states[1, :, 0])


def test_float_columns_round_trip(tmp_path):
    x = np.random.default_rng(1).normal(size=100)
    p = tmp_path / "x.csv"
    io.write_columns(p, ["x"], [x])
    assert np.array_equal(io.read_columns(p)["x"], x)


def test_measure_and_density_csv(tmp_path):
    io.write_measure_csv(tmp_path / "m.csv", EmpiricalMeasure.from_samples([2.0, 1.0]))
    assert (tmp_path / "m.csv").read_text().splitlines() == ["atom,weight", "1.0,0.5", "2.0,0.5"]
    g = Grid1D(2.0, 3)
    d = GridDensity(g, [0.0, 1.0, 0.0], 0.25)
    io.write_density_csv(tmp_path / "d.csv", d)
    assert (tmp_path / "d.csv").read_text().splitlines()[2] == "1.0,1.0"
    io.write_density_snapshots(tmp_path / "s.csv", [d, d])
    assert (tmp_path / "s.csv").read_text().splitlines()[1] == "0.25,0.0,0.0"


def test_atomic_open_leaves_nothing_on_error(tmp_path):
    target = tmp_path / "out.csv"
    with pytest.raises(RuntimeError):
        with io.atomic_open(target) as fh:
            fh.write("partial")
            raise RuntimeError("boom")
    assert list(tmp_path.iterdir()) == []


def test_unequal_columns(tmp_path):
    with pytest.raises(DataError):
        io.write_columns(tmp_path / "x.csv", ["a", "b"], [[1, 2], [1]])
