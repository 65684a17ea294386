import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from degenbvp.grids import (
    DIRECTIONS,
    KIND_GAMMA,
    KIND_NONE,
    KIND_OUTER,
    GridError,
    GridField,
    Lattice,
    StripGrid,
    attach,
    build_cutcell_grid,
    export_csv,
    load_field_values,
    save_field,
    shift,
    zero_field,
)


def test_strip_grid_geometry():
    g = StripGrid(16, 8, 2.0, "minus")
    assert g.shape == (9, 16)
    assert g.hx == pytest.approx(2 * np.pi / 16)
    assert g.y[0] == 0.0 and g.y[-1] == pytest.approx(-2.0)
    assert g.weights().sum() == pytest.approx(2 * np.pi * 2.0)
    mask = g.dirichlet_mask()
    assert mask[0].all() and mask[-1].all() and not mask[1:-1].any()
    assert not StripGrid(16, 8, 1.0, top="neumann").dirichlet_mask()[-1].any()


@pytest.mark.parametrize("kwargs", [dict(nx=2, ny=8, extent=1.0), dict(nx=8, ny=8, extent=0.0),
                                    dict(nx=8, ny=8, extent=1.0, side="left"),
                                    dict(nx=8, ny=8, extent=1.0, top="robin")])
def test_strip_grid_rejects_bad_input(kwargs):
    with pytest.raises(GridError):
        StripGrid(**kwargs)


def test_shift_moves_values_and_fills():
    a = np.arange(12.0).reshape(3, 4)
    e = shift(a, "E", fill=-1)
    assert e[1, 0] == a[1, 1] and np.all(e[:, -1] == -1)
    n = shift(a, "N", fill=-1)
    assert n[0, 2] == a[1, 2] and np.all(n[-1] == -1)


def test_cutcell_disk_regions(disk):
    spec = disk.problem
    plus = build_cutcell_grid(spec, "plus", 64, 64)
    minus = build_cutcell_grid(spec, "minus", 64, 64)
    full = build_cutcell_grid(spec, "full", 64, 64)
    assert not np.any(plus.active & minus.active)
    assert np.all(full.active >= (plus.active | minus.active))
    # plus region is the unit disk; minus the annulus out to radius 2
    assert plus.weights.sum() == pytest.approx(np.pi, rel=2e-3)
    assert minus.weights.sum() == pytest.approx(3 * np.pi, rel=2e-3)
    for d in DIRECTIONS:
        assert np.all(plus.crossing[d][plus.active] != KIND_OUTER)
        legs = plus.legs[d][plus.active]
        assert np.all((legs > 0) & (legs <= 1))


def test_cutcell_crossings_lie_on_boundaries(disk):
    g = build_cutcell_grid(disk.problem, "minus", 48, 48)
    for d in DIRECTIONS:
        _, x, y = g.crossing_points(d, KIND_GAMMA)
        np.testing.assert_allclose(np.hypot(x, y), 1.0, atol=1e-10)
        _, x, y = g.crossing_points(d, KIND_OUTER)
        np.testing.assert_allclose(np.hypot(x, y), 2.0, atol=1e-10)


def test_cutcell_needs_box_covering_the_region(disk):
    with pytest.raises(GridError):
        build_cutcell_grid(disk.problem, "minus", 32, 32, box=(-1.5, 1.5, -1.5, 1.5))
    with pytest.raises(GridError):
        build_cutcell_grid(disk.problem, "sideways", 32, 32)


def test_field_shape_checked():
    with pytest.raises(GridError):
        GridField(np.zeros((3, 3)), StripGrid(8, 4, 1.0))


def test_field_arithmetic_requires_same_grid():
    a = zero_field(StripGrid(8, 4, 1.0))
    b = zero_field(StripGrid(8, 4, 1.0))
    with pytest.raises(GridError):
        a + b


def test_save_load_roundtrip_strip(tmp_path):
    g = StripGrid(12, 6, 1.5, "minus")
    X, Y = g.mesh()
    u = GridField(np.sin(X) * Y, g)
    sidecar = save_field(u, tmp_path / "u", extra={"eps": 0.1})
    values, meta = load_field_values(sidecar)
    assert np.array_equal(values, u.values)
    assert meta["side"] == "minus" and meta["eps"] == 0.1 and meta["dtype"] == "float64-le"
    assert (tmp_path / "u.bin").stat().st_size == 8 * values.size


def test_save_load_roundtrip_cutcell_boundary(tmp_path, disk):
    g = build_cutcell_grid(disk.problem, "plus", 32, 32)
    bnd = g.boundary_template()
    for d in DIRECTIONS:
        bnd[d] = np.where(g.crossing[d] != KIND_NONE, 0.25, 0.0)
    u = GridField(np.where(g.active, 1.0, 0.0), g, bnd)
    save_field(u, tmp_path / "u")
    values, meta = load_field_values(tmp_path / "u")
    v = attach(values, meta, g)
    for d in DIRECTIONS:
        assert np.array_equal(v.boundary[d][g.active], u.boundary[d][g.active])


def test_lattice_roundtrip_in_describe():
    lat = Lattice.covering((-1, 1, -2, 2), 10, 20)
    desc = lat.describe()
    assert desc["nx"] == 10 and desc["spacings"] == [0.2, 0.2]


def test_export_csv(tmp_path):
    g = StripGrid(4, 2, 1.0)
    u = GridField(np.arange(12.0).reshape(3, 4), g)
    export_csv(u, tmp_path / "u.csv")
    lines = (tmp_path / "u.csv").read_text().splitlines()
    assert lines[0] == "x,y,value" and len(lines) == 13


@settings(max_examples=30, deadline=None)
@given(a=st.floats(-5, 5), b=st.floats(-5, 5), seed=st.integers(0, 2 ** 16))
def test_field_operations_are_linear(a, b, seed):
    g = StripGrid(8, 4, 1.0)
    r = np.random.default_rng(seed)
    u = GridField(r.normal(size=g.shape), g)
    v = GridField(r.normal(size=g.shape), g)
    w = a * u + b * v
    np.testing.assert_allclose(w.values, a * u.values + b * v.values, atol=1e-12)
    np.testing.assert_allclose((u - u).values, 0.0)
