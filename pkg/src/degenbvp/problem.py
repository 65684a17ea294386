"""Boundary value problem instances.

A :class:`ProblemSpec` holds the operator

    L u = phi * (A^{ij} u_ij + C u) + B^l u_l

on a simply connected domain, the interface ``{phi = 0}``, a source ``F`` and
boundary data ``g`` (with ``g = 0`` on the outer boundary).
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .expressions import ExpressionError, FieldExpression, parse_field_expression
from .grids import GridField, Lattice, attach, load_field_values

__all__ = [
    "ProblemError",
    "ProblemSpec",
    "CircleBoundary",
    "LevelSetBoundary",
    "StructuralReport",
    "load_problem",
    "problem_from_dict",
    "verify_structural_conditions",
    "homogenize",
    "apply_operator",
    "b0_pointwise",
]


class ProblemError(ValueError):
    pass


@dataclass(frozen=True)
class CircleBoundary:
    center: tuple = (0.0, 0.0)
    radius: float = 1.0

    def level(self, x, y):
        cx, cy = self.center
        return self.radius**2 - (np.asarray(x) - cx) ** 2 - (np.asarray(y) - cy) ** 2

    def box(self, margin: float = 0.05):
        cx, cy = self.center
        r = self.radius * (1 + margin)
        return (cx - r, cx + r, cy - r, cy + r)

    def boundary_points(self, n: int = 512):
        t = 2 * np.pi * np.arange(n) / n
        cx, cy = self.center
        return cx + self.radius * np.cos(t), cy + self.radius * np.sin(t)

    def to_dict(self):
        return {"type": "circle", "center": list(self.center), "radius": self.radius}


@dataclass(frozen=True)
class LevelSetBoundary:
    """Outer boundary ``{level = 0}``; ``level > 0`` inside the domain."""

    expr: FieldExpression
    bounds: tuple

    def level(self, x, y):
        return self.expr(x, y)

    def box(self, margin: float = 0.0):
        xmin, xmax, ymin, ymax = self.bounds
        mx, my = margin * (xmax - xmin) / 2, margin * (ymax - ymin) / 2
        return (xmin - mx, xmax + mx, ymin - my, ymax + my)

    def boundary_points(self, n: int = 512):
        from skimage import measure

        lat = Lattice.covering(self.bounds, 256, 256)
        X, Y = lat.mesh()
        pts = []
        for c in measure.find_contours(self.expr(X, Y), 0.0):
            pts.append(np.column_stack([lat.x0 + c[:, 1] * lat.hx, lat.y0 + c[:, 0] * lat.hy]))
        if not pts:
            raise ProblemError("outer level set has an empty zero set inside its box")
        p = np.concatenate(pts)
        gx, gy = self.expr.gradient()
        for _ in range(5):
            v = self.expr(p[:, 0], p[:, 1])
            dx, dy = gx(p[:, 0], p[:, 1]), gy(p[:, 0], p[:, 1])
            g2 = dx * dx + dy * dy
            p = p - np.column_stack([v * dx / g2, v * dy / g2])
        step = max(1, len(p) // n)
        return p[::step, 0], p[::step, 1]

    def to_dict(self):
        return {"type": "levelset", "expr": self.expr.text, "box": list(self.bounds)}


@dataclass(frozen=True, eq=False)
class ProblemSpec:
    phi: FieldExpression
    A: tuple  # ((A11, A12), (A21, A22))
    B: tuple  # (B1, B2)
    C: FieldExpression
    F: object  # FieldExpression or GridField on a lattice
    g: FieldExpression
    outer: object
    bounds: tuple | None = None
    name: str = "problem"
    meta: dict = field(default_factory=dict)

    @property
    def box(self):
        return self.bounds if self.bounds is not None else self.outer.box()

    def source(self, x, y):
        """Evaluate ``F``; gridded sources are bilinearly interpolated."""
        if isinstance(self.F, FieldExpression):
            return self.F(x, y)
        from scipy.interpolate import RegularGridInterpolator

        lat = self.F.grid
        interp = RegularGridInterpolator(
            (lat.y, lat.x), self.F.values, bounds_error=False, fill_value=0.0
        )
        x, y = np.broadcast_arrays(np.asarray(x, float), np.asarray(y, float))
        return interp(np.column_stack([y.ravel(), x.ravel()])).reshape(x.shape)

    def coefficient_arrays(self, x, y):
        """``A`` (..., 2, 2), ``B`` (..., 2), ``C`` and ``phi`` sampled at points."""
        x, y = np.broadcast_arrays(np.asarray(x, float), np.asarray(y, float))
        A = np.empty(x.shape + (2, 2))
        for i in range(2):
            for j in range(2):
                A[..., i, j] = self.A[i][j](x, y)
        B = np.stack([self.B[0](x, y), self.B[1](x, y)], axis=-1)
        return A, B, self.C(x, y), self.phi(x, y)

    def to_dict(self) -> dict:
        if not isinstance(self.F, FieldExpression):
            raise ProblemError("gridded sources are serialized through their sidecar file")
        return {
            "name": self.name,
            "phi": self.phi.text,
            "A": [[self.A[0][0].text, self.A[0][1].text], [self.A[1][0].text, self.A[1][1].text]],
            "B": [self.B[0].text, self.B[1].text],
            "C": self.C.text,
            "F": self.F.text,
            "g": self.g.text,
            "outer": self.outer.to_dict(),
            **({"box": list(self.bounds)} if self.bounds is not None else {}),
        }


def _expr(data, key, default=None):
    if key not in data:
        if default is None:
            raise ProblemError(f"problem is missing field {key!r}")
        return parse_field_expression(default)
    try:
        return parse_field_expression(data[key])
    except ExpressionError as exc:
        raise ProblemError(f"field {key!r}: {exc}") from exc


def problem_from_dict(data: dict, base_dir=None) -> ProblemSpec:
    """Build a :class:`ProblemSpec` from the JSON problem-file layout."""
    if not isinstance(data, dict):
        raise ProblemError("problem file must hold a JSON object")
    phi = _expr(data, "phi")
    A_raw = data.get("A", [["1", "0"], ["0", "1"]])
    B_raw = data.get("B")
    if B_raw is None:
        raise ProblemError("problem is missing field 'B'")
    try:
        A = tuple(tuple(parse_field_expression(A_raw[i][j]) for j in range(2)) for i in range(2))
        B = tuple(parse_field_expression(B_raw[k]) for k in range(2))
    except (IndexError, TypeError) as exc:
        raise ProblemError("A must be a 2x2 list and B a 2-list of expressions") from exc
    except ExpressionError as exc:
        raise ProblemError(f"coefficient: {exc}") from exc
    C = _expr(data, "C", "0")
    g = _expr(data, "g", "0")
    F_raw = data.get("F", "0")
    if isinstance(F_raw, dict):
        path = Path(F_raw.get("file", ""))
        if base_dir is not None and not path.is_absolute():
            path = Path(base_dir) / path
        values, meta = load_field_values(path)
        lat = Lattice(*meta["origin"], *meta["spacings"], meta["nx"], meta["ny"])
        F = attach(values, meta, lat)
    else:
        F = _expr(data, "F", "0")
    outer_raw = data.get("outer")
    if not isinstance(outer_raw, dict):
        raise ProblemError("problem is missing the 'outer' boundary object")
    kind = outer_raw.get("type", "circle")
    if kind == "circle":
        outer = CircleBoundary(tuple(map(float, outer_raw.get("center", (0, 0)))),
                               float(outer_raw.get("radius", 1.0)))
    elif kind == "levelset":
        if "box" not in outer_raw:
            raise ProblemError("levelset outer boundary needs a 'box'")
        outer = LevelSetBoundary(_expr(outer_raw, "expr"), tuple(map(float, outer_raw["box"])))
    else:
        raise ProblemError(f"unknown outer boundary type {kind!r}")
    bounds = tuple(map(float, data["box"])) if "box" in data else None
    spec = ProblemSpec(phi, A, B, C, F, g, outer, bounds, name=str(data.get("name", "problem")))
    _check_symmetric(spec)
    return spec


def load_problem(path) -> ProblemSpec:
    """Read a JSON problem file. ``json.JSONDecodeError`` carries line/column."""
    path = Path(path)
    data = json.loads(path.read_text())
    return problem_from_dict(data, base_dir=path.parent)


def _check_symmetric(spec: ProblemSpec, n: int = 64):
    if spec.A[0][1].text == spec.A[1][0].text:
        return
    lat = Lattice.covering(spec.box, n, n)
    X, Y = lat.mesh()
    a12, a21 = spec.A[0][1](X, Y), spec.A[1][0](X, Y)
    if not np.allclose(a12, a21, rtol=1e-12, atol=1e-12):
        raise ProblemError("A must be symmetric: A12 and A21 differ")


# --------------------------------------------------------------------------
# operator application


def apply_operator(spec: ProblemSpec, u: FieldExpression, eps: float = 0.0, side: str = "plus"):
    """Symbolic ``L^{+-eps} u`` (``eps = 0`` gives ``L u``)."""
    (uxx, uxy), (_, uyy) = u.hessian()
    ux, uy = u.gradient()
    principal = (spec.A[0][0] * uxx + spec.A[0][1] * uxy + spec.A[1][0] * uxy
                 + spec.A[1][1] * uyy + spec.C * u)
    weight = spec.phi + (eps if side == "plus" else -eps)
    return weight * principal + spec.B[0] * ux + spec.B[1] * uy


# --------------------------------------------------------------------------
# structural conditions


@dataclass(frozen=True)
class StructuralReport:
    lambda0_min: float
    transversality_min: float
    C_max: float
    ellipticity_ok: bool
    transversality_ok: bool
    sign_C_ok: bool

    @property
    def passed(self) -> bool:
        return self.ellipticity_ok and self.transversality_ok and self.sign_C_ok

    def to_dict(self) -> dict:
        return {
            "lambda0_min": self.lambda0_min,
            "transversality_min": self.transversality_min,
            "C_max": self.C_max,
            "ellipticity_ok": self.ellipticity_ok,
            "transversality_ok": self.transversality_ok,
            "sign_C_ok": self.sign_C_ok,
            "verdict": "pass" if self.passed else "fail",
        }


def min_eigenvalue(A: np.ndarray) -> np.ndarray:
    a, b, d = A[..., 0, 0], 0.5 * (A[..., 0, 1] + A[..., 1, 0]), A[..., 1, 1]
    return 0.5 * (a + d) - np.sqrt(0.25 * (a - d) ** 2 + b * b)


def verify_structural_conditions(spec: ProblemSpec, curve, lattice_n: int = 256) -> StructuralReport:
    """Sample ellipticity, transversality of the drift on the interface, and the sign of C."""
    lat = Lattice.covering(spec.box, lattice_n - 1, lattice_n - 1)
    X, Y = lat.mesh()
    inside = spec.outer.level(X, Y) >= 0
    xs = np.concatenate([X[inside], curve.points[:, 0]])
    ys = np.concatenate([Y[inside], curve.points[:, 1]])
    A, B, C, _ = spec.coefficient_arrays(xs, ys)
    lam = float(np.min(min_eigenvalue(A)))
    c_max = float(np.max(C))

    gx, gy = spec.phi.gradient()
    px, py = curve.points[:, 0], curve.points[:, 1]
    _, Bg, _, _ = spec.coefficient_arrays(px, py)
    trans = -(Bg[:, 0] * gx(px, py) + Bg[:, 1] * gy(px, py))
    t_min = float(np.min(trans))
    return StructuralReport(lam, t_min, c_max, lam > 0, t_min > 0, c_max <= 0)


def coefficient_norms(spec: ProblemSpec, lattice_n: int = 128) -> dict:
    """Sup norms of ``phi``, ``A``, ``B``, ``C`` and their derivatives up to third order.

    Derivatives are symbolic and sampled on a lattice over the closed domain;
    ``"C<k>"`` is the largest absolute partial derivative of order ``<= k``
    over all coefficients.
    """
    lat = Lattice.covering(spec.box, lattice_n - 1, lattice_n - 1)
    X, Y = lat.mesh()
    inside = spec.outer.level(X, Y) >= 0
    xs, ys = X[inside], Y[inside]
    exprs = [spec.phi, spec.C, *spec.B, *(a for row in spec.A for a in row)]
    norms, running = {}, 0.0
    level = exprs
    for k in range(4):
        peak = max(float(np.max(np.abs(np.broadcast_to(e(xs, ys), xs.shape)))) for e in level)
        running = max(running, peak)
        norms[f"C{k}"] = running
        level = [e.diff(v) for e in level for v in "xy"]
    return norms


def b0_pointwise(phi: FieldExpression, A, B, x, y) -> np.ndarray:
    """Normal drift ``B.grad(phi) / (grad(phi)^T A grad(phi))`` at the given points."""
    gx, gy = phi.gradient()
    px, py = gx(x, y), gy(x, y)
    num = B[0](x, y) * px + B[1](x, y) * py
    den = (A[0][0](x, y) * px * px + (A[0][1](x, y) + A[1][0](x, y)) * px * py
           + A[1][1](x, y) * py * py)
    return num / den


# --------------------------------------------------------------------------
# homogenization


def homogenize(spec: ProblemSpec, tol: float = 1e-8, n_samples: int = 1024) -> ProblemSpec:
    """Shift the unknown by ``g``: the returned problem has zero data and source ``F - L g``.

    Solving the returned problem and adding ``g`` back solves ``spec``.
    """
    bx, by = spec.outer.boundary_points(n_samples)
    gb = spec.g(bx, by)
    worst = float(np.max(np.abs(gb))) if gb.size else 0.0
    if worst > tol:
        raise ProblemError(f"g must vanish on the outer boundary (max |g| = {worst:.3e})")
    if spec.g.is_constant(0.0):
        return spec
    Lg = apply_operator(spec, spec.g)
    if isinstance(spec.F, FieldExpression):
        F_new = spec.F - Lg
    else:
        lat = spec.F.grid
        X, Y = lat.mesh()
        F_new = GridField(spec.F.values - Lg(X, Y), lat)
    meta = dict(spec.meta)
    meta["lifted_by"] = spec.g.text
    return replace(spec, F=F_new, g=parse_field_expression("0"), meta=meta)
