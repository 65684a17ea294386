import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from degenbvp.benchmarks import disk_problem
from degenbvp.expressions import parse_field_expression
from degenbvp.grids import Lattice, save_field, GridField
from degenbvp.problem import (
    CircleBoundary,
    ProblemError,
    apply_operator,
    b0_pointwise,
    homogenize,
    load_problem,
    min_eigenvalue,
    problem_from_dict,
    verify_structural_conditions,
)

DISK = {
    "name": "disk",
    "phi": "1 - x^2 - y^2",
    "A": [["1", "0"], ["0", "1"]],
    "B": ["x", "y"],
    "C": "-1",
    "F": "cos(x) + 0.5*y",
    "outer": {"type": "circle", "center": [0, 0], "radius": 2},
}


def test_load_problem_file(tmp_path):
    p = tmp_path / "disk.json"
    p.write_text(json.dumps(DISK))
    spec = load_problem(p)
    assert spec.name == "disk"
    assert spec.phi(0.0, 0.0) == 1.0
    assert spec.box == pytest.approx((-2.1, 2.1, -2.1, 2.1))
    A, B, C, phi = spec.coefficient_arrays(np.array([0.5]), np.array([0.25]))
    assert A.shape == (1, 2, 2) and B.shape == (1, 2)
    assert B[0].tolist() == [0.5, 0.25] and C[0] == -1.0


def test_json_syntax_error_has_line_and_column(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text('{\n  "phi": "x",\n  "B": [1, 2,]\n}')
    with pytest.raises(json.JSONDecodeError) as info:
        load_problem(p)
    assert info.value.lineno == 3 and info.value.colno > 1


@pytest.mark.parametrize("patch, message", [
    ({"phi": None}, "phi"),
    ({"B": None}, "B"),
    ({"outer": None}, "outer"),
    ({"A": [["1", "x"], ["0", "1"]]}, "symmetric"),
    ({"C": "1 +"}, "C"),
    ({"outer": {"type": "ellipse"}}, "ellipse"),
])
def test_problem_validation(patch, message):
    data = {k: v for k, v in DISK.items()}
    for k, v in patch.items():
        if v is None:
            data.pop(k)
        else:
            data[k] = v
    with pytest.raises(ProblemError, match=message):
        problem_from_dict(data)


def test_gridded_source_is_bilinear(tmp_path):
    lat = Lattice.covering((-2.5, 2.5, -2.5, 2.5), 10, 10)
    X, Y = lat.mesh()
    save_field(GridField(2 * X - Y + 1, lat), tmp_path / "F")
    data = dict(DISK, F={"file": "F"})
    p = tmp_path / "p.json"
    p.write_text(json.dumps(data))
    spec = load_problem(p)
    x = np.array([0.13, -1.7])
    y = np.array([0.9, 0.05])
    np.testing.assert_allclose(spec.source(x, y), 2 * x - y + 1, atol=1e-12)


def test_levelset_outer_boundary():
    data = dict(DISK, outer={"type": "levelset", "expr": "4 - x^2 - y^2/0.81", "box": [-2.2, 2.2, -2, 2]})
    spec = problem_from_dict(data)
    bx, by = spec.outer.boundary_points(128)
    np.testing.assert_allclose(bx ** 2 + by ** 2 / 0.81, 4, rtol=1e-3)


def test_disk_structural_conditions(disk, disk_curve):
    rep = verify_structural_conditions(disk.problem, disk_curve)
    assert rep.passed
    assert rep.lambda0_min == pytest.approx(1.0)
    assert rep.C_max == pytest.approx(-1.0)
    assert rep.transversality_min == pytest.approx(2.0, rel=1e-6)  # -B.grad(phi) = 2 r^2


def test_zero_drift_violates_transversality(disk_curve):
    spec = disk_problem(beta=0.0).problem
    rep = verify_structural_conditions(spec, disk_curve)
    assert not rep.passed and not rep.transversality_ok
    assert rep.to_dict()["verdict"] == "fail"


def test_positive_zeroth_order_flagged(disk_curve):
    rep = verify_structural_conditions(disk_problem(C="0.5").problem, disk_curve)
    assert not rep.sign_C_ok


def test_b0_closed_form_disk():
    for beta in (0.5, 1.0, 3.0):
        spec = disk_problem(beta=beta).problem
        t = np.linspace(0, 2 * np.pi, 17)
        vals = b0_pointwise(spec.phi, spec.A, spec.B, np.cos(t), np.sin(t))
        np.testing.assert_allclose(vals, -beta / 2, rtol=1e-13)


def test_apply_operator_on_quadratic(disk):
    spec = disk.problem
    u = parse_field_expression("x^2")
    Lu = apply_operator(spec, u, eps=0.1, side="minus")
    x, y = 0.3, -0.7
    phi = 1 - x * x - y * y
    expected = (phi - 0.1) * (2 - x * x) + x * 2 * x
    assert Lu(x, y) == pytest.approx(expected)


def test_homogenize_lifts_boundary_data():
    g = "4 - x^2 - y^2"
    spec = problem_from_dict(dict(DISK, g=g))
    h = homogenize(spec)
    assert h.g.is_constant(0.0)
    x, y = 0.4, 0.1
    Lg = apply_operator(spec, parse_field_expression(g))
    assert h.F(x, y) == pytest.approx(spec.F(x, y) - Lg(x, y))
    with pytest.raises(ProblemError):
        homogenize(problem_from_dict(dict(DISK, g="1")))


def test_homogenize_idempotent():
    spec = homogenize(problem_from_dict(dict(DISK, g="(4 - x^2 - y^2)*x")))
    again = homogenize(spec)
    assert again is spec


def test_circle_boundary_points():
    c = CircleBoundary((1.0, -1.0), 0.5)
    x, y = c.boundary_points(64)
    np.testing.assert_allclose(c.level(x, y), 0, atol=1e-14)
    assert c.level(1.0, -1.0) > 0


sym = st.floats(-3, 3, allow_nan=False)


@settings(max_examples=80, deadline=None)
@given(a=st.floats(0.05, 4), c=st.floats(0.05, 4), b=sym,
       v=st.tuples(sym, sym).filter(lambda v: abs(v[0]) + abs(v[1]) > 1e-3))
def test_rayleigh_quotient_bounded_below_by_min_eigenvalue(a, c, b, v):
    A = np.array([[a, b], [b, c]])
    lam = float(min_eigenvalue(A[None])[0])
    vec = np.array(v)
    q = vec @ A @ vec / (vec @ vec)
    assert q >= lam - 1e-10 * (1 + abs(lam) + abs(b))
    assert lam == pytest.approx(np.linalg.eigvalsh(A)[0], abs=1e-10 * (1 + abs(b) + a + c))
