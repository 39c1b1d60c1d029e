import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from prescurv.fieldio import FieldFormatError, read_field, read_meta, write_field, write_meta
from prescurv.mesh import GridError, build_annulus, build_rectangle


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 2**32 - 1), st.sampled_from(["annulus", "rectangle"]))
def test_round_trip_bit_exact(tmp_path_factory, seed, kind):
    d = tmp_path_factory.mktemp("rt")
    g = build_annulus(0.05, 0.5, 9, 8) if kind == "annulus" else build_rectangle(1.0, 0.3, 9, 11)
    rng = np.random.default_rng(seed)
    f = rng.standard_normal(g.shape) * 10.0 ** rng.integers(-300, 300, g.shape)
    write_meta(d, g)
    write_field(d / "f.csv", f, g, "f")
    back, grid, name = read_field(d / "f.csv", g)
    assert np.array_equal(back, f)
    assert grid == g and name == "f"


def test_header_and_rows(tmp_path):
    g = build_annulus(0.05, 0.5, 9, 8)
    write_field(tmp_path / "sigma.csv", np.zeros(g.shape), g)
    lines = (tmp_path / "sigma.csv").read_text().splitlines()
    assert lines[0] == "# kind=annulus r_in=0.05 r_out=0.5 n_r=9 n_theta=8 field=sigma"
    assert len(lines) == 1 + g.size
    assert lines[1].split(",")[:2] == ["0", "0"]


def test_meta_round_trip(tmp_path):
    g = build_rectangle(2.0, 1.0, 9, 13)
    write_meta(tmp_path, g)
    assert read_meta(tmp_path) == g
    assert json.loads((tmp_path / "meta.json").read_text())["grid"]["kind"] == "rectangle"


def test_meta_mismatch_rejected(tmp_path):
    g = build_annulus(0.05, 0.5, 9, 8)
    write_field(tmp_path / "f.csv", np.ones(g.shape), g)
    write_meta(tmp_path, build_annulus(0.05, 0.5, 9, 16))
    with pytest.raises(FieldFormatError, match="meta.json"):
        read_field(tmp_path / "f.csv")


def test_expected_grid_mismatch_rejected(tmp_path):
    g = build_annulus(0.05, 0.5, 9, 8)
    write_field(tmp_path / "f.csv", np.ones(g.shape), g)
    with pytest.raises(FieldFormatError):
        read_field(tmp_path / "f.csv", build_annulus(0.05, 0.6, 9, 8))


def test_nan_rejected_on_read(tmp_path):
    g = build_rectangle(1.0, 1.0, 9, 9)
    write_field(tmp_path / "f.csv", np.ones(g.shape), g)
    text = (tmp_path / "f.csv").read_text().splitlines()
    parts = text[5].split(",")
    parts[-1] = "nan"
    text[5] = ",".join(parts)
    (tmp_path / "f.csv").write_text("\n".join(text) + "\n")
    with pytest.raises(FieldFormatError, match="non-finite"):
        read_field(tmp_path / "f.csv")


def test_nan_rejected_on_write(tmp_path):
    g = build_rectangle(1.0, 1.0, 9, 9)
    f = np.ones(g.shape)
    f[2, 2] = np.nan
    with pytest.raises(FieldFormatError):
        write_field(tmp_path / "f.csv", f, g)


def test_missing_header_rejected(tmp_path):
    (tmp_path / "f.csv").write_text("0,0,0,0,1\n")
    with pytest.raises(FieldFormatError, match="header"):
        read_field(tmp_path / "f.csv")


def test_truncated_file_rejected(tmp_path):
    g = build_rectangle(1.0, 1.0, 9, 9)
    write_field(tmp_path / "f.csv", np.ones(g.shape), g)
    lines = (tmp_path / "f.csv").read_text().splitlines()
    (tmp_path / "f.csv").write_text("\n".join(lines[:-3]) + "\n")
    with pytest.raises(FieldFormatError, match="rows"):
        read_field(tmp_path / "f.csv")


def test_wrong_shape_rejected_on_write(tmp_path):
    g = build_rectangle(1.0, 1.0, 9, 9)
    with pytest.raises(GridError):
        write_field(tmp_path / "f.csv", np.ones((9, 10)), g)
