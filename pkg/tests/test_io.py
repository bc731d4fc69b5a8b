import json

import numpy as np
import pytest

from eulerci import io
from eulerci.fields import TimeSeries


def _series(nt=3, c=3, n=16, seed=0):
    rng = np.random.default_rng(seed)
    return TimeSeries(-0.25, 0.125, rng.normal(size=(nt, c, n, n, n)))


def test_pfld_roundtrip_is_bitwise(tmp_path):
    ts = _series()
    io.write_pfld(tmp_path / "a.pfld", ts)
    back = io.read_pfld(tmp_path / "a.pfld", ts.dt)
    assert back.t0 == ts.t0 and np.array_equal(back.data, ts.data)
    assert (tmp_path / "a.pfld").stat().st_size == 32 + ts.data.size * 8


def test_pfld_rejects_bad_files(tmp_path):
    io.write_pfld(tmp_path / "a.pfld", _series())
    buf = (tmp_path / "a.pfld").read_bytes()
    (tmp_path / "magic.pfld").write_bytes(b"XFLD" + buf[4:])
    (tmp_path / "short.pfld").write_bytes(buf[:-8])
    (tmp_path / "head.pfld").write_bytes(buf[:20])
    for name in ("magic", "short", "head", "missing"):
        with pytest.raises(io.FieldIOError):
            io.read_pfld(tmp_path / f"{name}.pfld", 0.125)


def test_tuple_roundtrip(tmp_path, zero_seed):
    import copy
    t = copy.deepcopy(zero_seed.slice(zero_seed.times[0], zero_seed.times[5]))
    t.v.data[:] = np.random.default_rng(3).normal(size=t.v.data.shape)
    t.E[:] = -np.arange(6.0)
    path = io.save_tuple(t, tmp_path / "sub" / "lev.pfld")
    assert json.loads(io.sidecar(path).read_text())["q"] == 0
    back = io.load_tuple(path)
    assert back.q == t.q and back.dt == t.dt and back.meta == t.meta
    for k, ts in t.fields().items():
        assert np.array_equal(back.fields()[k].data, ts.data)
    assert np.array_equal(back.E, t.E)


def test_tuple_needs_fourteen_components(tmp_path, zero_seed):
    io.write_pfld(tmp_path / "x.pfld", _series())
    io.write_json(tmp_path / "x.json", {"dt": 0.125, "q": 0, "E": [0] * 3, "dE": [0] * 3})
    with pytest.raises(io.FieldIOError):
        io.load_tuple(tmp_path / "x.pfld")
    with pytest.raises(io.FieldIOError):
        io.load_tuple(tmp_path / "nothing.pfld")


def test_jsonable():
    out = io.jsonable({1: np.float64(np.inf), "a": np.arange(2), "b": (np.bool_(True), np.int64(4))})
    assert out == {"1": "inf", "a": [0, 1], "b": [True, 4]}
    json.dumps(out)


def test_slice_csv(tmp_path):
    ts = _series(c=1)
    io.write_slice_csv(tmp_path / "s.csv", ts, ts.times[1], axis=0, index=2)
    rows = (tmp_path / "s.csv").read_text().splitlines()
    assert rows[0] == "i,j,x_i,x_j,c0" and len(rows) == 1 + 16 * 16
    i, j, *_, c = rows[1 + 3 * 16 + 5].split(",")
    assert (int(i), int(j)) == (3, 5)
    assert float(c) == ts.data[1, 0, 2, 3, 5]
