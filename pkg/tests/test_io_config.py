import json

import numpy as np
import pytest
from hypothesis import given, strategies as st

from chb6.config import ConfigError, RunConfig, build_field
from chb6.io import fmt, read_field, write_csv, write_field
from chb6.spectral import GridSpec

BASE = {"grid": {"sizes": [16, 16]}, "time": {"T": 0.01, "n_steps": 5}, "initial": {"type": "constant", "value": 1.0}}


def test_field_roundtrip(tmp_path):
    g = GridSpec((8, 4), (1.0, 2.0))
    vals = np.arange(2 * 32, dtype=float).reshape((2,) + g.shape)
    header = write_field(tmp_path / "f", g, vals, step=3)
    meta = json.loads(header.read_text())
    assert meta["dtype"] == "f64le" and meta["sizes"] == [8, 4] and meta["step"] == 3
    assert (tmp_path / "f.bin").stat().st_size == 64 * 8
    g2, v2 = read_field(tmp_path / "f.json")
    assert g2 == g
    assert np.array_equal(v2, vals)


def test_field_payload_is_row_major_le(tmp_path):
    g = GridSpec((4, 4), (1.0, 1.0))
    vals = np.arange(16, dtype=float).reshape(g.shape)
    write_field(tmp_path / "f", g, vals)
    assert np.array_equal(np.frombuffer((tmp_path / "f.bin").read_bytes(), "<f8"), np.arange(16.0))


def test_field_errors(tmp_path):
    g = GridSpec((4, 4), (1.0, 1.0))
    with pytest.raises(ValueError):
        write_field(tmp_path / "f", g, np.zeros((3, 3)))
    write_field(tmp_path / "f", g, np.zeros(g.shape))
    (tmp_path / "f.bin").write_bytes(b"\0" * 8)
    with pytest.raises(ValueError):
        read_field(tmp_path / "f")


@given(st.floats(allow_nan=False, allow_infinity=False))
def test_fmt_roundtrip(x):
    assert float(fmt(x)) == x


def test_fmt_nan_and_csv(tmp_path):
    assert fmt(float("nan")) == ""
    assert fmt(3) == "3"
    assert fmt(None) == ""
    p = write_csv(tmp_path / "a.csv", ["a", "b"], [[1, 0.1], [2, float("nan")]])
    assert p.read_text() == "a,b\n1,0.1\n2,\n"


def test_config_minimal():
    cfg = RunConfig.from_dict(BASE)
    assert cfg.grid.sizes == (16, 16)
    assert cfg.time.dt == pytest.approx(0.002)
    assert cfg.ctrl is None
    np.testing.assert_array_equal(cfg.initial_field(), 1.0)
    with pytest.raises(ConfigError, match="control"):
        cfg.require_control()


@pytest.mark.parametrize("key", ["grid", "time", "initial"])
def test_config_missing_required(key):
    raw = {k: v for k, v in BASE.items() if k != key}
    with pytest.raises(ConfigError, match=key):
        RunConfig.from_dict(raw)


@pytest.mark.parametrize(
    "patch, needle",
    [
        ({"bogus": 1}, "bogus"),
        ({"grid": {"sizes": [15, 16]}}, "even"),
        ({"grid": {"sizes": [16]}}, "dim"),
        ({"time": {"T": 1.0}}, "n_steps"),
        ({"physics": {"eta": -1}}, "eta"),
        ({"control": {"beta": [1, 0, 0, 0]}}, "beta4"),
        ({"initial": {"type": "weird"}}, "type"),
        ({"targets": {"v_X": {"type": "constant"}}}, "v_X"),
        ({"options": {"colour": 1}}, "colour"),
    ],
)
def test_config_rejections(patch, needle):
    with pytest.raises(ConfigError, match=needle):
        RunConfig.from_dict({**BASE, **patch})


def test_config_load_and_overrides(tmp_path):
    p = tmp_path / "c.json"
    p.write_text(json.dumps(BASE))
    assert RunConfig.load(p, {"seed": 9}).seed == 9
    p.write_text("{not json")
    with pytest.raises(ConfigError):
        RunConfig.load(p)


def test_field_catalog(tmp_path):
    g = GridSpec.square(8)
    x, y = g.coordinates()
    m = build_field({"type": "mode", "mode": [1, 2], "amplitude": 0.5, "phase": "sin"}, g, None)
    np.testing.assert_allclose(m, 0.5 * np.sin(x + 2 * y))
    v = build_field({"type": "mode", "mode": [0, 1], "component": 1}, g, 2)
    assert not np.any(v[0]) and np.allclose(v[1], np.cos(y) + 0 * x)
    c = build_field({"type": "constant", "value": [1.0, 2.0]}, g, 2)
    assert c[1].min() == 2.0
    r1 = build_field({"type": "random", "seed": 4}, g, None)
    assert np.array_equal(r1, build_field({"type": "random", "seed": 4}, g, None))
    write_field(tmp_path / "phi", g, r1)
    f = build_field({"type": "file", "path": "phi.json"}, g, None, base_dir=tmp_path)
    assert np.array_equal(f, r1)
    with pytest.raises(ConfigError):
        build_field({"type": "file", "path": "phi.json"}, GridSpec.square(16), None, base_dir=tmp_path)


def test_relaxed_initial_datum():
    raw = {**BASE, "initial": {"type": "mode", "mode": [1, 0], "amplitude": 0.3, "relax": {"T": 0.01, "n_steps": 10}}}
    phi = RunConfig.from_dict(raw).initial_field()
    assert 0 < np.max(np.abs(phi)) < 0.3
