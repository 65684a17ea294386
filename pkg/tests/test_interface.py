import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from degenbvp.interface import InterfaceError, extract_interface, project_to_zero
from degenbvp.expressions import parse_field_expression


def test_unit_circle(disk_curve):
    c = disk_curve
    assert c.length == pytest.approx(2 * np.pi, abs=1e-8)
    np.testing.assert_allclose(np.hypot(c.points[:, 0], c.points[:, 1]), 1.0, atol=1e-12)
    # normal is grad(phi)/|grad(phi)| and phi = 1 - r^2 grows inward
    np.testing.assert_allclose(c.normals, -c.points, atol=1e-9)
    np.testing.assert_allclose(np.einsum("ij,ij->i", c.normals, c.tangents), 0, atol=1e-9)
    np.testing.assert_allclose(np.abs(c.curvature), 1.0, atol=1e-9)
    np.testing.assert_allclose(c.curvature_rate, 0.0, atol=1e-9)
    np.testing.assert_allclose(c.grad_norm, 2.0, atol=1e-9)
    assert c.closure_error < 1e-8


def test_uniform_arc_length(disk_curve):
    c = disk_curve
    steps = np.linalg.norm(np.diff(np.vstack([c.points, c.points[:1]]), axis=0), axis=1)
    chord = 2 * np.sin(np.pi / c.n)
    np.testing.assert_allclose(steps, chord, rtol=1e-8)


def test_position_interpolates_between_samples(disk_curve):
    s = np.array([0.1234, 3.0, 6.2])
    p = disk_curve.position(s)
    np.testing.assert_allclose(np.hypot(p[:, 0], p[:, 1]), 1.0, atol=1e-12)
    p0 = disk_curve.position(np.array([0.0]))
    np.testing.assert_allclose(p0[0], disk_curve.points[0], atol=1e-10)


def test_ellipse_length():
    a, b = 1.5, 0.75
    c = extract_interface(f"1 - x^2/{a*a} - y^2/{b*b}", 512, box=(-2, 2, -2, 2))
    from scipy.special import ellipe

    exact = 4 * a * ellipe(1 - (b / a) ** 2)
    assert c.length == pytest.approx(exact, rel=1e-8)
    # curvature of an ellipse peaks at the ends of the major axis
    assert np.max(np.abs(c.curvature)) == pytest.approx(a / b ** 2, rel=1e-5)


@pytest.mark.parametrize("phi, why", [
    ("(1 - x^2 - y^2)^2", "gradient"),
    ("x^2 + y^2 + 1", "empty"),
    ("y", "closed"),
])
def test_rejects_bad_level_sets(phi, why):
    with pytest.raises(InterfaceError):
        extract_interface(phi, 128, box=(-2, 2, -2, 2))


def test_rejects_two_components():
    with pytest.raises(InterfaceError):
        extract_interface("0.25 - (x^2 - 1)^2 - y^2", 128, box=(-2, 2, -2, 2))


def test_project_to_zero():
    phi = parse_field_expression("1 - x^2 - 4*y^2")
    pts = np.array([[1.1, 0.0], [0.0, 0.4], [0.6, 0.3]])
    q = project_to_zero(phi, pts)
    np.testing.assert_allclose(phi(q[:, 0], q[:, 1]), 0, atol=1e-12)


@settings(max_examples=10, deadline=None)
@given(theta=st.floats(0, 2 * np.pi), dx=st.floats(-0.5, 0.5), dy=st.floats(-0.5, 0.5))
def test_length_invariant_under_rigid_motion(theta, dx, dy):
    c, s = float(np.cos(theta)), float(np.sin(theta))
    # ellipse with semi-axes 1.2, 0.7 rotated by theta and shifted by (dx, dy)
    u = f"({c!r}*(x - {dx!r}) + {s!r}*(y - {dy!r}))"
    v = f"(-{s!r}*(x - {dx!r}) + {c!r}*(y - {dy!r}))"
    curve = extract_interface(f"1 - {u}^2/1.44 - {v}^2/0.49", 256, box=(-2.5, 2.5, -2.5, 2.5),
                              resolution=200)
    from scipy.special import ellipe

    assert curve.length == pytest.approx(4 * 1.2 * ellipe(1 - (0.7 / 1.2) ** 2), rel=1e-7)
