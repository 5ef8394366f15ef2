import csv
import json
import struct

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from cmaflow.field import ScalarField, TorusGeometry, trig_field
from cmaflow.flow import FlowState, initial_state
from cmaflow.kahler import NonlinearityF, metric_from_potential
from cmaflow.snapshot import MAGIC, SnapshotError, read_snapshot, write_csv, write_json, write_snapshot


def _state(g, values, t=0.25):
    phi = ScalarField(g, values)
    return FlowState(t, phi, metric_from_potential(phi, floor=-np.inf), None)


@given(arrays(np.float64, (8, 8), elements=st.floats(-1e-3, 1e-3, allow_subnormal=True)),
       st.floats(0, 10))
def test_round_trip_is_bitwise(tmp_path_factory, vals, t):
    g = TorusGeometry(1, 8)
    path = tmp_path_factory.mktemp("snap") / "s.cmaf"
    write_snapshot(_state(g, vals, t), path)
    back = read_snapshot(path)
    assert back.t == t
    assert back.phi.values.tobytes() == np.ascontiguousarray(vals).tobytes()
    assert back.phidot is None


def test_layout_and_recomputed_phidot(tmp_path):
    g = TorusGeometry(2, 4)
    phi = trig_field(g, [(0.01, (1, 0, 0, 1))])
    F = NonlinearityF(a=1.0)
    st0 = initial_state(phi, F)
    p = tmp_path / "a.cmaf"
    write_snapshot(st0, p)
    raw = p.read_bytes()
    assert raw[:4] == MAGIC
    assert struct.unpack_from("<IIId", raw, 4) == (1, 2, 4, 0.0)
    assert len(raw) == 24 + 8 * 4 ** 4
    back = read_snapshot(p, F)
    assert np.array_equal(back.phidot.values, st0.phidot.values)
    # index order x1, y1, x2, y2 with the last axis fastest
    assert np.frombuffer(raw[24:32], "<f8")[0] == phi.values[0, 0, 0, 0]
    assert np.frombuffer(raw[32:40], "<f8")[0] == phi.values[0, 0, 0, 1]


@pytest.fixture
def good_file(tmp_path):
    g = TorusGeometry(1, 4)
    p = tmp_path / "good.cmaf"
    write_snapshot(_state(g, np.zeros(g.shape)), p)
    return p


def _mutate(path, fn):
    raw = bytearray(path.read_bytes())
    raw = fn(raw)
    path.write_bytes(bytes(raw))
    return path


def test_bad_magic(good_file):
    _mutate(good_file, lambda r: b"XXXX" + r[4:])
    with pytest.raises(SnapshotError, match="bad magic"):
        read_snapshot(good_file)


def test_unsupported_version(good_file):
    _mutate(good_file, lambda r: r[:4] + struct.pack("<I", 2) + r[8:])
    with pytest.raises(SnapshotError, match="unsupported version 2"):
        read_snapshot(good_file)


def test_truncated_header(good_file):
    _mutate(good_file, lambda r: r[:10])
    with pytest.raises(SnapshotError, match="truncated"):
        read_snapshot(good_file)


def test_truncated_payload(good_file):
    _mutate(good_file, lambda r: r[:-8])
    with pytest.raises(SnapshotError, match="truncated"):
        read_snapshot(good_file)


def test_payload_size_mismatch(good_file):
    _mutate(good_file, lambda r: r + b"\0" * 8)
    with pytest.raises(SnapshotError, match="dimension mismatch"):
        read_snapshot(good_file)


@pytest.mark.parametrize("n,N", [(3, 4), (1, 6)])
def test_invalid_dimensions(good_file, n, N):
    _mutate(good_file, lambda r: r[:8] + struct.pack("<II", n, N) + r[16:])
    with pytest.raises(SnapshotError, match="dimension mismatch"):
        read_snapshot(good_file)


def test_no_temporary_files_left(tmp_path, good_file):
    write_snapshot(read_snapshot(good_file), tmp_path / "b.cmaf")
    assert sorted(p.name for p in tmp_path.iterdir()) == ["b.cmaf", "good.cmaf"]


def test_csv_round_trip(tmp_path):
    rows = [[0.1, 1 / 3, 7], [np.float64(2e-17), -0.0, 8]]
    write_csv(tmp_path / "s.csv", ["a", "b", "c"], rows)
    with open(tmp_path / "s.csv") as fh:
        r = list(csv.reader(fh))
    assert r[0] == ["a", "b", "c"]
    assert float(r[1][1]) == 1 / 3 and float(r[2][0]) == 2e-17


def test_json_is_strict_and_sorted(tmp_path):
    write_json(tmp_path / "r.json", {"b": np.float64(np.nan), "a": np.arange(2), "c": np.bool_(True),
                                     "d": float("inf")})
    text = (tmp_path / "r.json").read_text()
    d = json.loads(text)
    assert list(d) == ["a", "b", "c", "d"]
    assert d == {"a": [0, 1], "b": "nan", "c": True, "d": "inf"}
    assert "NaN" not in text and "Infinity" not in text
