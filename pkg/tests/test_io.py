import struct

import numpy as np
import pytest

from fnse import fields as F
from fnse import io
from fnse.stats import McEstimate

G = F.PeriodicGrid(2, 8)


def field(grid=G, comps=2, seed=0):
    return F.PeriodicField(grid, np.random.default_rng(seed).normal(size=(comps,) + grid.shape))


def test_field_round_trip_is_bit_exact(tmp_path):
    for grid, comps in ((G, 2), (F.PeriodicGrid(1, 16), 1), (F.PeriodicGrid(3, 4), 3)):
        f = field(grid, comps)
        io.write_field(tmp_path / "u.fnse", f, -0.125)
        g, t = io.read_field(tmp_path / "u.fnse")
        assert t == -0.125 and g.grid == grid
        assert np.array_equal(g.values, f.values)


def test_field_layout_component_fastest(tmp_path):
    f = field()
    io.write_field(tmp_path / "u.fnse", f, 0.0)
    raw = (tmp_path / "u.fnse").read_bytes()
    head, body = raw.split(b"\n", 1)
    assert head == b"FNSE-FIELD v1 dim=2 n=8 comps=2 t=0.0"
    assert len(body) == 8 * 2 * 64
    # node (i, j) = (1, 2) in row-major order, component 1
    off = ((1 * 8 + 2) * 2 + 1) * 8
    assert struct.unpack("<d", body[off:off + 8])[0] == f.values[1, 1, 2]


def test_field_read_errors(tmp_path):
    p = tmp_path / "bad.fnse"
    p.write_bytes(b"NOT-A-FIELD\n")
    with pytest.raises(ValueError):
        io.read_field(p)
    io.write_field(p, field(), 0.0)
    p.write_bytes(p.read_bytes()[:-8])
    with pytest.raises(ValueError, match="expected"):
        io.read_field(p)


def test_csv_checksum_trailer(tmp_path):
    p = tmp_path / "a.csv"
    ck = io.write_csv(p, ["a", "b"], [[1, 0.1], [2, True]])
    lines = p.read_text().splitlines()
    assert lines[0] == "a,b" and lines[1] == "1,0.1" and lines[2] == "2,1"
    assert lines[-1] == f"# checksum: {ck}" and ck.startswith("sha256:")
    header, rows, got = io.read_csv(p)
    assert header == ["a", "b"] and rows == [["1", "0.1"], ["2", "1"]] and got == ck
    # the checksum covers the data rows only
    assert io.write_csv(tmp_path / "b.csv", ["x", "y"], [[1, 0.1], [2, True]]) == ck


def test_csv_tamper_detected(tmp_path):
    p = tmp_path / "a.csv"
    io.write_csv(p, ["a"], [[1.5], [2.5]])
    p.write_text(p.read_text().replace("2.5", "2.6"))
    with pytest.raises(ValueError, match="mismatch"):
        io.read_csv(p)
    assert io.read_csv(p, verify=False)[1][1] == ["2.6"]
    p.write_text("a\n1\n")
    with pytest.raises(ValueError, match="trailer"):
        io.read_csv(p)


def test_floats_written_exactly(tmp_path):
    v = [0.1 + 0.2, 1 / 3, np.float64(2.0) ** -40]
    io.write_csv(tmp_path / "f.csv", ["v"], [[x] for x in v])
    rows = io.read_csv(tmp_path / "f.csv")[1]
    assert [float(r[0]) for r in rows] == [float(x) for x in v]


def test_field_and_estimate_csv(tmp_path):
    f = field()
    io.write_field_csv(tmp_path / "f.csv", f)
    header, rows, _ = io.read_csv(tmp_path / "f.csv")
    assert header == ["i", "j", "x", "y", "u1", "u2"] and len(rows) == 64
    assert float(rows[10][5]) == f.values[1, 1, 2]
    pts = np.array([[0.0, 1.0], [2.0, 3.0]])
    est = McEstimate(np.array([1.0, 2.0]), np.array([0.1, 0.2]), 10)
    io.write_estimate_csv(tmp_path / "e.csv", pts, est)
    header, rows, _ = io.read_csv(tmp_path / "e.csv")
    assert header == ["node", "x1", "x2", "mean1", "stderr1"]
    assert rows[1] == ["1", "2.0", "3.0", "2.0", "0.2"]


def test_solution_directory_round_trip(tmp_path):
    s = F.FieldSeries([0.0, -0.5], [field(seed=1), field(seed=2)])
    io.write_solution(tmp_path / "sol", s, p=2.0, iterations=3, stderr=[0.0, 0.01])
    back, rows = io.read_solution(tmp_path / "sol")
    assert list(back.times) == [0.0, -0.5]
    for a, b in zip(back.fields, s.fields):
        assert np.array_equal(a.values, b.values)
    assert rows[1][2] == "u_0001.fnse" and rows[1][5] == "3" and rows[1][6] == "0.01"
    assert float(rows[0][3]) == F.sobolev_norm(s.fields[0], 0, 2.0)
