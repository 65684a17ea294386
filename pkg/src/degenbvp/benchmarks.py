"""Built-in problem instances.

Every known fact attached to an instance carries a provenance tag:

* ``closed-form`` -- follows from hand evaluation of the construction;
* ``source-text`` -- a value stated for the crown example in the reference
  derivation;
* ``extension`` -- chosen here to exercise the solver, not backed by theory.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .canonical import CanonicalCoefficients
from .expressions import FieldExpression, parse_field_expression
from .problem import CircleBoundary, ProblemSpec, apply_operator, b0_pointwise

__all__ = [
    "BenchmarkError",
    "Fact",
    "BenchmarkInstance",
    "crown_problem",
    "disk_problem",
    "strip_problem",
    "manufactured_problem",
    "list_benchmarks",
    "get_benchmark",
    "REGISTRY",
]


class BenchmarkError(ValueError):
    pass


@dataclass(frozen=True)
class Fact:
    value: object
    provenance: str
    note: str = ""

    def to_dict(self):
        v = self.value
        if isinstance(v, (np.floating, np.integer)):
            v = v.item()
        return {"value": v, "provenance": self.provenance, "note": self.note}


@dataclass(frozen=True, eq=False)
class BenchmarkInstance:
    name: str
    problem: object  # ProblemSpec (cut-cell form) or CanonicalCoefficients (strip form)
    facts: dict = field(default_factory=dict)
    tolerances: dict = field(default_factory=dict)
    expected: FieldExpression | None = None
    defaults: dict = field(default_factory=dict)
    meta: dict = field(default_factory=dict)

    @property
    def kind(self) -> str:
        return "strip" if isinstance(self.problem, CanonicalCoefficients) else "domain"

    def facts_dict(self) -> dict:
        return {k: f.to_dict() for k, f in sorted(self.facts.items())}


# --------------------------------------------------------------------------
# spherical crown


def _crown_fields():
    def omega(X, Y):
        return 1.0 / np.cos(Y) ** 2 + 0.0 * X

    def b(X, Y):
        # -(sin^2 y + 2 cos^2 y)/cos y * (y / sin y); y/sin y written via sinc so b(0) = -2
        return -(np.sin(Y) ** 2 + 2 * np.cos(Y) ** 2) / np.cos(Y) / np.sinc(Y / np.pi) + 0.0 * X

    def zero(X, Y):
        return np.zeros(np.broadcast_shapes(np.shape(X), np.shape(Y)))

    return omega, zero, b, zero


def crown_source_transform(f):
    """Canonical right-hand side for a source ``f(phi_angle, theta)`` of the crown equation."""
    f = parse_field_expression(f) if not callable(f) else f

    def fc(X, Y):
        theta = np.pi / 2 - Y
        return np.asarray(f(X, theta), dtype=float) / (np.cos(Y) * np.sinc(Y / np.pi))

    return fc


def crown_problem(lam: float = 0.5, theta_pole: float = 0.05, f=None) -> BenchmarkInstance:
    """Linearized rigidity equation of the spherical crown in strip variables.

    ``cos t [(sin t z_t)_t + (z_p / sin t)_p] + 2 sin^2 t z_t = f`` on
    ``t in [theta_pole, arccos(-lam)]`` with ``y = pi/2 - t`` and ``x`` the
    azimuth. Degeneracy sits at ``t = pi/2`` (``y = 0``); the cap side is the
    plus side with a symmetry (Neumann) row at ``theta_pole``; ``z = 0`` at
    ``t = arccos(-lam)``. ``f`` is a function of ``(azimuth, t)``; ``None``
    means ``f = 0``.
    """
    if not 0 < lam < 1:
        raise BenchmarkError(f"lambda must lie in (0, 1), got {lam!r}")
    if not 0 < theta_pole < np.pi / 2:
        raise BenchmarkError("theta_pole must lie in (0, pi/2)")
    theta_star = float(np.arccos(-lam))
    omega, a, b, c = _crown_fields()
    if f is None:
        fc = c
    else:
        fc = crown_source_transform(f)
    cc = CanonicalCoefficients(omega, a, b, c, fc, y_plus=np.pi / 2 - theta_pole,
                               y_minus=theta_star - np.pi / 2, top="neumann")
    # equation in (t, azimuth) with factor cos t, for the interface drift check
    xi_form = {
        "phi": parse_field_expression("cos(x)"),
        "A": ((parse_field_expression("sin(x)"), parse_field_expression("0")),
              (parse_field_expression("0"), parse_field_expression("1/sin(x)"))),
        "B": (parse_field_expression("cos(x)^2 + 2*sin(x)^2"), parse_field_expression("0")),
    }
    b0_xi = float(b0_pointwise(xi_form["phi"], xi_form["A"], xi_form["B"], np.pi / 2, 0.0))
    facts = {
        "theta_star": Fact(theta_star, "source-text", "theta_* = arccos(-lambda)"),
        "interface_theta": Fact(np.pi / 2, "source-text", "degenerate exactly at the equator"),
        "b0": Fact(-2.0, "closed-form", "normal drift at the equator"),
        "b0_from_equation": Fact(b0_xi, "closed-form", "b0 formula applied to the (t, azimuth) form"),
        "b0_strip": Fact(float(b(0.0, 0.0)), "closed-form", "strip drift b(x, 0)"),
    }
    if f is None:
        facts["solution"] = Fact(0.0, "closed-form", "zero source admits only the zero solution")
    else:
        facts["source"] = Fact(str(f), "extension", "nonzero crown sources are a solver exercise")
    return BenchmarkInstance(
        "crown", cc, facts,
        tolerances={"sup_norm": 1e-8, "b0": 1e-6},
        expected=parse_field_expression("0") if f is None else None,
        defaults={"grid": (128, 128)},
        meta={"lambda": lam, "theta_pole": theta_pole, "xi_form": xi_form},
    )


# --------------------------------------------------------------------------
# disk family


DEFAULT_DISK_SOURCE = "cos(x) + 0.5*y"


def disk_problem(r_gamma: float = 1.0, beta: float = 1.0, F=DEFAULT_DISK_SOURCE,
                 C="-1") -> BenchmarkInstance:
    """``phi = r^2 - |xi|^2``, ``A = I``, ``B = beta * xi`` on the disk of radius ``2 r``."""
    if not r_gamma > 0:
        raise BenchmarkError("interface radius must be positive")
    R = 2.0 * r_gamma
    r2 = repr(float(r_gamma) ** 2)
    bt = repr(float(beta))
    spec = ProblemSpec(
        phi=parse_field_expression(f"{r2} - x^2 - y^2"),
        A=((parse_field_expression("1"), parse_field_expression("0")),
           (parse_field_expression("0"), parse_field_expression("1"))),
        B=(parse_field_expression(f"{bt}*x"), parse_field_expression(f"{bt}*y")),
        C=parse_field_expression(C),
        F=parse_field_expression(F),
        g=parse_field_expression("0"),
        outer=CircleBoundary((0.0, 0.0), R),
        bounds=(-1.05 * R, 1.05 * R, -1.05 * R, 1.05 * R),
        name="disk",
    )
    facts = {
        "b0": Fact(-beta / 2.0, "closed-form", "beta*xi.(-2 xi) / |2 xi|^2 on |xi| = r"),
        "interface_radius": Fact(r_gamma, "closed-form"),
        "outer_radius": Fact(R, "closed-form"),
        "source": Fact(str(F), "extension", "generic smooth source"),
    }
    return BenchmarkInstance("disk", spec, facts, tolerances={"b0": 1e-6},
                             defaults={"grid": (256, 256), "eps_floor": 1e-6},
                             meta={"r_gamma": r_gamma, "beta": beta})


# --------------------------------------------------------------------------
# strip family


DEFAULT_STRIP_SOURCE = "1 + 0.5*cos(x) + sin(2*x)*y"


def strip_problem(f=DEFAULT_STRIP_SOURCE, omega="1", a="0", b="-1", c="0", d: float = 1.0,
                  d_minus: float | None = None) -> BenchmarkInstance:
    """Constant-coefficient strip ``[-pi, pi) x (-d, d)`` with Dirichlet rows at ``y = 0, +-d``."""
    fields = [parse_field_expression(e) for e in (omega, a, b, c, f)]
    cc = CanonicalCoefficients(*fields, y_plus=float(d),
                               y_minus=float(d if d_minus is None else d_minus))
    facts = {"b0": Fact(float(np.mean(fields[2](np.zeros(4), np.zeros(4)))), "closed-form"),
             "source": Fact(str(f), "extension", "generic smooth source")}
    return BenchmarkInstance("strip", cc, facts, defaults={"grid": (64, 64), "eps_floor": 1e-4,
                                                             "eps_ratio": 10 ** -0.5, "cauchy_tol": None},
                             meta={"exprs": dict(zip(("omega", "a", "b", "c", "f"), fields))})


# --------------------------------------------------------------------------
# manufactured solutions


def manufactured_problem(u_star, base: BenchmarkInstance, eps: float | None = None,
                         tol: float = 1e-10, n_check: int = 256) -> BenchmarkInstance:
    """Instance whose exact solution is ``u_star``.

    Strip bases need ``eps``: the source is the regularized strip operator
    applied to ``u_star`` on the plus side. Domain bases get ``F = L u_star``.
    """
    u = parse_field_expression(u_star)
    if base.kind == "strip":
        if eps is None:
            raise BenchmarkError("strip manufactured problems need eps")
        ex = base.meta.get("exprs")
        if ex is None:
            raise BenchmarkError("strip base must carry symbolic coefficients")
        cc = base.problem
        xs = -np.pi + 2 * np.pi * np.arange(n_check) / n_check
        worst = max(float(np.max(np.abs(u(xs, 0.0)))), float(np.max(np.abs(u(xs, cc.y_plus)))))
        if worst > tol:
            raise BenchmarkError(f"u_star does not vanish on the Dirichlet rows (max {worst:.3e})")
        (uxx, _), (_, uyy) = u.hessian()
        ux, uy = u.gradient()
        y = parse_field_expression("y")
        f = ((y + eps) * (ex["omega"] * uxx + uyy + ex["c"] * u)
             + ex["a"] * ux + ex["b"] * uy)
        new = CanonicalCoefficients(ex["omega"], ex["a"], ex["b"], ex["c"], f,
                                    y_plus=cc.y_plus, y_minus=0.0, top=cc.top)
        facts = {"solution": Fact(u.text, "closed-form", "manufactured"),
                 "eps": Fact(eps, "extension")}
        return BenchmarkInstance(f"{base.name}-manufactured", new, facts, expected=u,
                                 defaults=dict(base.defaults),
                                 meta={"exprs": {**ex, "f": f}, "eps": eps, "base": base.name})
    spec = base.problem
    from .interface import extract_interface

    curve = extract_interface(spec.phi, n_check, box=spec.box, outer=spec.outer)
    on_gamma = float(np.max(np.abs(u(curve.points[:, 0], curve.points[:, 1]))))
    bx, by = spec.outer.boundary_points(n_check)
    on_outer = float(np.max(np.abs(u(bx, by))))
    if max(on_gamma, on_outer) > tol:
        raise BenchmarkError(
            f"u_star does not vanish on the interface/outer boundary (max {max(on_gamma, on_outer):.3e})"
        )
    F = apply_operator(spec, u)
    from dataclasses import replace

    new = replace(spec, F=F, name=f"{spec.name}-manufactured")
    facts = {"solution": Fact(u.text, "closed-form", "manufactured")}
    return BenchmarkInstance(f"{base.name}-manufactured", new, facts, expected=u,
                             defaults=dict(base.defaults), meta=dict(base.meta))


# --------------------------------------------------------------------------
# registry


REGISTRY = {
    "crown": (crown_problem, "spherical crown rigidity equation, lambda = 1/2, zero source"),
    "disk": (disk_problem, "disk of radius 2, interface |xi| = 1, A = I, B = xi, C = -1"),
    "disk-unforced": (lambda: disk_problem(F="0"), "disk benchmark with F = 0"),
    "strip": (strip_problem, "constant-coefficient strip, b = -1, generic smooth source"),
    "strip-quadratic": (
        lambda: strip_problem(f="-1.2", d_minus=0.0),
        "strip with constant source -1.2; exact solution y(1-y) at eps = 0.1",
    ),
}


def list_benchmarks() -> list:
    return [(name, desc) for name, (_, desc) in sorted(REGISTRY.items())]


def get_benchmark(name: str, **params) -> BenchmarkInstance:
    if name not in REGISTRY:
        raise BenchmarkError(f"unknown benchmark {name!r}; known: {', '.join(sorted(REGISTRY))}")
    return REGISTRY[name][0](**params)
