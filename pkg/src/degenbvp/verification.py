"""Discrete norms and empirical checks of the a priori estimates.

The "boundedness" verdicts are an engineering proxy: a quantity that should
stay bounded as eps -> 0 passes when the max/min of its samples across the
sweep is at most 3.
"""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np

from .continuation import GluedSolution, StripPairGrid, l2_norm
from .grids import KIND_NONE, CutCellGrid, GridField, StripGrid

__all__ = [
    "VerificationError",
    "NormReport",
    "EstimateRow",
    "BoundednessCheck",
    "FluxFit",
    "EstimateReport",
    "ResidualReport",
    "ConvergenceReport",
    "discrete_norms",
    "gradient",
    "second_differences",
    "weighted_h2_norm",
    "strip_flux",
    "domain_flux",
    "uniform_h1_check",
    "weighted_h2_check",
    "flux_decay_fit",
    "estimate_report",
    "weak_residual",
    "bump_centers",
    "convergence_study",
]

RATIO_LIMIT = 3.0
SLOPE_LIMIT = 0.45


class VerificationError(ValueError):
    pass


# --------------------------------------------------------------------------
# derivatives and norms


def _weights(grid):
    w = grid.weights
    return w() if callable(w) else w


def _axis_derivative(u, h, axis):
    """Second-order first derivative along a non-periodic axis (one-sided at the ends)."""
    return np.gradient(u, h, axis=axis, edge_order=2)


def gradient(u: GridField):
    """``(u_x, u_y)`` on the grid nodes.

    Strips: periodic central differences in ``x``. Cut-cell grids: nonuniform
    central differences over the boundary legs, using the boundary values at
    crossings.
    """
    grid = u.grid
    v = u.values
    if isinstance(grid, StripGrid):
        ux = (np.roll(v, -1, axis=1) - np.roll(v, 1, axis=1)) / (2 * grid.hx)
        uy = grid.sign * _axis_derivative(v, grid.hy, 0)
        return ux, uy
    if isinstance(grid, StripPairGrid):
        ux = (np.roll(v, -1, axis=1) - np.roll(v, 1, axis=1)) / (2 * grid.hx)
        uy = np.gradient(v, grid.y, axis=0, edge_order=2)
        return ux, uy
    if isinstance(grid, CutCellGrid):
        return _cutcell_gradient(u)
    raise VerificationError(f"unsupported grid {type(grid).__name__}")


def _cutcell_gradient(u: GridField):
    grid = u.grid
    lat = grid.lattice
    v = np.where(grid.active, u.values, 0.0)
    bnd = u.boundary or grid.boundary_template()
    out = []
    for p, m, h, axis in (("E", "W", lat.hx, 1), ("N", "S", lat.hy, 0)):
        hp = grid.legs[p] * h
        hm = grid.legs[m] * h
        up = np.roll(v, -1, axis=axis)
        um = np.roll(v, 1, axis=axis)
        up = np.where(grid.crossing[p] != KIND_NONE, bnd[p], up)
        um = np.where(grid.crossing[m] != KIND_NONE, bnd[m], um)
        d = (hm * hm * up - hp * hp * um + (hp * hp - hm * hm) * v) / (hp * hm * (hp + hm))
        out.append(np.where(grid.active, d, 0.0))
    return out[0], out[1]


def second_differences(v: np.ndarray, grid):
    """``(v_xx, v_xy, v_yy)`` by second-order differences (exact for cubics in ``y``)."""
    if isinstance(grid, (StripGrid, StripPairGrid)):
        hx = grid.hx
        vxx = (np.roll(v, -1, axis=1) - 2 * v + np.roll(v, 1, axis=1)) / hx**2
        if isinstance(grid, StripGrid):
            vy = _axis_derivative(v, grid.hy, 0) * grid.sign
            vyy = _second_axis(v, grid.hy, 0)
        else:
            vy = np.gradient(v, grid.y, axis=0, edge_order=2)
            vyy = np.gradient(vy, grid.y, axis=0, edge_order=2)
        vxy = (np.roll(vy, -1, axis=1) - np.roll(vy, 1, axis=1)) / (2 * hx)
        return vxx, vxy, vyy
    if isinstance(grid, CutCellGrid):
        lat = grid.lattice
        vxx = _second_axis(v, lat.hx, 1)
        vyy = _second_axis(v, lat.hy, 0)
        vx = _axis_derivative(v, lat.hx, 1)
        vxy = _axis_derivative(vx, lat.hy, 0)
        return vxx, vxy, vyy
    raise VerificationError(f"unsupported grid {type(grid).__name__}")


def _second_axis(v, h, axis):
    v = np.moveaxis(v, axis, 0)
    out = np.empty_like(v)
    out[1:-1] = (v[2:] - 2 * v[1:-1] + v[:-2]) / h**2
    # one-sided closures, exact for cubics
    out[0] = (2 * v[0] - 5 * v[1] + 4 * v[2] - v[3]) / h**2
    out[-1] = (2 * v[-1] - 5 * v[-2] + 4 * v[-3] - v[-4]) / h**2
    return np.moveaxis(out, 0, axis)


@dataclass(frozen=True)
class NormReport:
    l2: float
    h1_semi: float
    h1: float
    eps_flux: float | None = None

    def to_dict(self):
        return {"l2": self.l2, "h1_semi": self.h1_semi, "h1": self.h1, "eps_flux": self.eps_flux}


def discrete_norms(u: GridField, flux_eps: float | None = None, curve=None) -> NormReport:
    """L2, H1-seminorm and H1 norm; optionally ``eps * ||d_n u||`` on the interface."""
    w = _weights(u.grid)
    l2 = float(np.sqrt(np.sum(w * u.values**2)))
    ux, uy = gradient(u)
    semi = float(np.sqrt(np.sum(w * (ux**2 + uy**2))))
    flux = None
    if flux_eps is not None:
        if isinstance(u.grid, StripGrid):
            flux = flux_eps * strip_flux(u)
        elif curve is not None:
            flux = flux_eps * domain_flux(u, curve)
    return NormReport(l2, semi, float(np.hypot(l2, semi)), flux)


def strip_flux(u: GridField) -> float:
    """``||u_y(., 0)||_{L2}`` with the one-sided second-order difference at the interface row."""
    g = u.grid
    v = u.values
    dy = (-3 * v[0] + 4 * v[1] - v[2]) / (2 * g.hy)
    return float(np.sqrt(np.sum(g.hx * dy**2)))


def _bilinear(values, lat, x, y):
    fx = (np.asarray(x) - lat.x0) / lat.hx
    fy = (np.asarray(y) - lat.y0) / lat.hy
    i = np.clip(np.floor(fx).astype(int), 0, lat.nx - 1)
    j = np.clip(np.floor(fy).astype(int), 0, lat.ny - 1)
    tx, ty = fx - i, fy - j
    return ((1 - tx) * (1 - ty) * values[j, i] + tx * (1 - ty) * values[j, i + 1]
            + (1 - tx) * ty * values[j + 1, i] + tx * ty * values[j + 1, i + 1])


def domain_flux(u: GridField, curve) -> float:
    """``||d_n u||_{L2(interface)}`` from normal probes at distances ``0, h, 2h`` into the grid's side."""
    grid = u.grid
    lat = grid.lattice
    h = max(lat.hx, lat.hy)
    sign = 1.0 if grid.side == "plus" else -1.0
    p, n = curve.points, curve.normals * sign
    v = np.where(grid.active, u.values, 0.0)
    u1 = _bilinear(v, lat, p[:, 0] + h * n[:, 0], p[:, 1] + h * n[:, 1])
    u2 = _bilinear(v, lat, p[:, 0] + 2 * h * n[:, 0], p[:, 1] + 2 * h * n[:, 1])
    dn = (4 * u1 - u2) / (2 * h)  # u = 0 on the interface
    ds = curve.length / curve.n
    return float(np.sqrt(np.sum(ds * dn**2)))


def weighted_h2_norm(u: GridField, weight: np.ndarray) -> float:
    """H2 norm of ``weight * u`` (values, first and second differences)."""
    grid = u.grid
    v = weight * u.values
    w = _weights(grid)
    vf = GridField(v, grid, None if not isinstance(grid, CutCellGrid) else grid.boundary_template())
    vx, vy = gradient(vf)
    vxx, vxy, vyy = second_differences(v, grid)
    if isinstance(grid, CutCellGrid):
        mask = _interior_mask(grid)
        vxx, vxy, vyy = (np.where(mask, q, 0.0) for q in (vxx, vxy, vyy))
    total = np.sum(w * (v**2 + vx**2 + vy**2 + vxx**2 + 2 * vxy**2 + vyy**2))
    return float(np.sqrt(total))


def _interior_mask(grid: CutCellGrid):
    """Active nodes whose full 3x3 neighbourhood is active."""
    a = grid.active
    m = a.copy()
    m[1:-1, 1:-1] &= (a[:-2, :-2] & a[:-2, 1:-1] & a[:-2, 2:] & a[1:-1, :-2] & a[1:-1, 2:]
                      & a[2:, :-2] & a[2:, 1:-1] & a[2:, 2:])
    m[0, :] = m[-1, :] = m[:, 0] = m[:, -1] = False
    return m


def regularized_weight(u: GridField, eps: float, problem=None) -> np.ndarray:
    """``y + eps`` (strip plus), ``y - eps`` (strip minus) or ``phi +- eps`` on a cut-cell grid."""
    grid = u.grid
    X, Y = grid.mesh()
    if isinstance(grid, StripGrid):
        return Y + grid.sign * eps
    phi = problem.phi(X, Y)
    return phi + eps if grid.side == "plus" else phi - eps


# --------------------------------------------------------------------------
# estimate checks


@dataclass(frozen=True)
class EstimateRow:
    eps: float
    l2: float
    h1: float
    wh2: float
    eps_flux: float


@dataclass(frozen=True)
class BoundednessCheck:
    name: str
    eps: list
    ratios: list
    spread: float
    verdict: str  # "pass" | "fail" | "not_applicable"
    note: str = ""

    @property
    def passed(self) -> bool:
        return self.verdict == "pass"

    def to_dict(self):
        return {"name": self.name, "eps": list(self.eps), "ratios": list(self.ratios),
                "max_over_min": self.spread, "limit": RATIO_LIMIT, "verdict": self.verdict,
                "note": self.note}


def _boundedness(name, eps, values, f_norm, conditions_ok=True):
    if len(eps) < 4:
        raise VerificationError(f"{name}: need at least 4 eps values, got {len(eps)}")
    if not conditions_ok:
        ratios = [v / f_norm if f_norm > 0 else 0.0 for v in values]
        return BoundednessCheck(name, list(eps), ratios, float("nan"), "not_applicable",
                                "structural conditions violated; boundedness is not expected")
    if f_norm == 0:
        return BoundednessCheck(name, list(eps), [0.0] * len(eps), 1.0, "pass",
                                "zero source: pass by vacuity")
    ratios = [float(v) / f_norm for v in values]
    lo, hi = min(ratios), max(ratios)
    if hi == 0:
        spread = 1.0
    elif lo == 0:
        spread = float("inf")
    else:
        spread = hi / lo
    verdict = "pass" if spread <= RATIO_LIMIT else "fail"
    return BoundednessCheck(name, list(eps), ratios, spread, verdict,
                            "engineering proxy: max/min ratio <= 3")


def _history(history):
    """Accept a ContinuationResult or a list of SolveOutput."""
    outputs = getattr(history, "outputs", history)
    return [o.eps for o in outputs], [o.field for o in outputs]


def uniform_h1_check(history, f_norm: float, conditions_ok: bool = True) -> BoundednessCheck:
    """``||u^eps||_{H1} / ||F||_{L2}`` across the sweep."""
    eps, fields = _history(history)
    return _boundedness("uniform_h1", eps, [discrete_norms(u).h1 for u in fields], f_norm,
                        conditions_ok)


def weighted_h2_check(history, f_norm: float, problem=None,
                      conditions_ok: bool = True) -> BoundednessCheck:
    """``||(phi +- eps) u^eps||_{H2} / ||F||_{L2}`` across the sweep."""
    eps, fields = _history(history)
    vals = [weighted_h2_norm(u, regularized_weight(u, e, problem)) for e, u in zip(eps, fields)]
    return _boundedness("weighted_h2", eps, vals, f_norm, conditions_ok)


@dataclass(frozen=True)
class FluxFit:
    slope: float
    stderr: float
    intercept: float
    n: int
    verdict: str
    note: str = ""

    @property
    def passed(self) -> bool:
        return self.verdict == "pass"

    def confidence_width(self, level: float = 0.95) -> float:
        """Half-width of the two-sided Student-t confidence interval of the slope."""
        from scipy.stats import t

        return float(t.ppf(0.5 + level / 2, max(self.n - 2, 1)) * self.stderr)

    def to_dict(self):
        return {"slope": self.slope, "stderr": self.stderr, "intercept": self.intercept,
                "n": self.n, "limit": SLOPE_LIMIT, "verdict": self.verdict, "note": self.note}


def flux_decay_fit(eps, eps_flux) -> FluxFit:
    """Least-squares slope of ``log(eps * ||d_n u||)`` against ``log eps``."""
    eps = np.asarray(eps, dtype=float)
    q = np.asarray(eps_flux, dtype=float)
    if len(eps) < 5:
        raise VerificationError(f"flux fit needs at least 5 eps values, got {len(eps)}")
    if np.log10(eps.max() / eps.min()) < 2 - 1e-9:
        raise VerificationError("flux fit needs eps values spanning at least two decades")
    if np.all(q == 0):
        return FluxFit(float("nan"), float("nan"), float("nan"), len(eps), "pass",
                       "flux identically zero: trivially passing")
    if np.any(q <= 0):
        raise VerificationError("flux values must be positive to fit a power law")
    x, y = np.log(eps), np.log(q)
    (slope, intercept), cov = np.polyfit(x, y, 1, cov="unscaled")
    resid = y - (slope * x + intercept)
    dof = max(len(x) - 2, 1)
    s2 = float(resid @ resid) / dof
    stderr = float(np.sqrt(cov[0, 0] * s2))
    verdict = "pass" if slope >= SLOPE_LIMIT else "fail"
    return FluxFit(float(slope), stderr, float(intercept), len(eps), verdict)


@dataclass(frozen=True, eq=False)
class EstimateReport:
    side: str
    rows: list
    f_norm: float
    checks: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(c.verdict in ("pass", "not_applicable") for c in self.checks.values())

    def csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["eps", "l2", "h1", "wh2", "eps_flux"])
        for r in self.rows:
            w.writerow([repr(float(r.eps)), repr(float(r.l2)), repr(float(r.h1)), repr(float(r.wh2)),
                        repr(float(r.eps_flux))])
        return buf.getvalue()

    def to_dict(self):
        return {"side": self.side, "f_l2": self.f_norm,
                "checks": {k: v.to_dict() for k, v in sorted(self.checks.items())},
                "verdict": "pass" if self.passed else "fail"}


def estimate_report(result, problem=None, curve=None, conditions_ok: bool = True) -> EstimateReport:
    """Rows and verdicts for one side's continuation history."""
    rows = []
    for o in result.outputs:
        u = o.field
        nr = discrete_norms(u, flux_eps=o.eps, curve=curve)
        wh2 = weighted_h2_norm(u, regularized_weight(u, o.eps, problem))
        rows.append(EstimateRow(o.eps, nr.l2, nr.h1, wh2, nr.eps_flux if nr.eps_flux is not None else float("nan")))
    fn = result.source_norm
    checks = {}
    if len(rows) >= 4:
        checks["uniform_h1"] = _boundedness("uniform_h1", [r.eps for r in rows], [r.h1 for r in rows],
                                            fn, conditions_ok)
        checks["weighted_h2"] = _boundedness("weighted_h2", [r.eps for r in rows],
                                             [r.wh2 for r in rows], fn, conditions_ok)
    eps = np.array([r.eps for r in rows])
    fl = np.array([r.eps_flux for r in rows])
    if len(rows) >= 5 and np.all(np.isfinite(fl)) and np.log10(eps.max() / eps.min()) >= 2 - 1e-9:
        checks["flux_decay"] = flux_decay_fit(eps, fl)
    return EstimateReport(result.side, rows, fn, checks)


# --------------------------------------------------------------------------
# weak-form residual


@dataclass(frozen=True)
class ResidualReport:
    centers: np.ndarray
    radius: float
    residuals: np.ndarray
    form: str

    @property
    def max(self) -> float:
        return float(np.max(self.residuals)) if len(self.residuals) else 0.0

    @property
    def mean(self) -> float:
        return float(np.mean(self.residuals)) if len(self.residuals) else 0.0

    def to_dict(self):
        return {"max": self.max, "mean": self.mean, "radius": self.radius, "form": self.form,
                "n_tests": int(len(self.residuals)), "residuals": [float(r) for r in self.residuals]}


def _admissible(spec, c, r, margin):
    t = 2 * np.pi * np.arange(64) / 64
    x = c[0] + (r + margin) * np.cos(t)
    y = c[1] + (r + margin) * np.sin(t)
    return bool(np.all(spec.outer.level(x, y) > 0)) and spec.outer.level(c[0], c[1]) > 0


def bump_centers(spec, curve, n_tests: int, radius: float, margin: float) -> np.ndarray:
    """About a third of the centres on the interface, the rest spread over admissible lattice points."""
    n_gamma = max(1, n_tests // 3) if curve is not None else 0
    centers = []
    if n_gamma:
        k = (np.arange(n_gamma) * curve.n) // n_gamma
        for p in curve.points[k]:
            if _admissible(spec, p, radius, margin):
                centers.append(p)
    need = n_tests - len(centers)
    xmin, xmax, ymin, ymax = spec.box
    m = 24
    gx = np.linspace(xmin, xmax, m + 2)[1:-1]
    gy = np.linspace(ymin, ymax, m + 2)[1:-1]
    cand = [np.array([x, y]) for y in gy for x in gx if _admissible(spec, (x, y), radius, margin)]
    if need > len(cand):
        raise VerificationError("not enough admissible test-function centres; reduce the radius")
    if need > 0:
        pick = np.round(np.linspace(0, len(cand) - 1, need)).astype(int)
        centers.extend(cand[i] for i in pick)
    return np.array(centers)


def _bump(X, Y, c, r, power: int = 2):
    """``(1 - rho^2/r^2)_+^power`` and its first and second derivatives.

    ``power=2`` is C1 (enough for the direct form); the adjoint form uses
    ``power=3`` so second derivatives are continuous and the quadrature
    stays second order.
    """
    dx, dy = X - c[0], Y - c[1]
    q = 1 - (dx * dx + dy * dy) / r**2
    inside = q > 0
    qp = np.where(inside, q, 0.0)
    p = power
    v = qp**p
    d1 = p * qp ** (p - 1)  # dv/dq
    d2 = p * (p - 1) * qp ** (p - 2) if p >= 2 else np.zeros_like(qp)
    vx = -2 * dx / r**2 * d1
    vy = -2 * dy / r**2 * d1
    vxx = np.where(inside, 4 * dx * dx / r**4 * d2 - 2 / r**2 * d1, 0.0)
    vyy = np.where(inside, 4 * dy * dy / r**4 * d2 - 2 / r**2 * d1, 0.0)
    vxy = np.where(inside, 4 * dx * dy / r**4 * d2, 0.0)
    return v, vx, vy, vxx, vxy, vyy


def _piecewise_gradient(u, vals, lat):
    """Gradient of a glued field taken side by side (legs stop at the interface)."""
    if isinstance(u, GluedSolution) and isinstance(u.plus.grid, CutCellGrid):
        ux = np.zeros_like(vals)
        uy = np.zeros_like(vals)
        for part in (u.plus, u.minus):
            gx, gy = _cutcell_gradient(part)
            ux = np.where(part.grid.active, gx, ux)
            uy = np.where(part.grid.active, gy, uy)
        return ux, uy
    return np.gradient(vals, lat.hx, axis=1), np.gradient(vals, lat.hy, axis=0)


class _FormTerms:
    """Coefficient and solution arrays of ``a(u, .)`` on the lattice, reused across test functions."""

    def __init__(self, u, spec, form="direct"):
        if form not in ("direct", "adjoint"):
            raise VerificationError(f"unknown form {form!r}")
        field_ = u.u if isinstance(u, GluedSolution) else u
        grid = field_.grid
        if not isinstance(grid, CutCellGrid):
            raise VerificationError("weak residual needs a field on a Cartesian lattice")
        lat = grid.lattice
        X, Y = grid.mesh()
        self.form = form
        self.dA = lat.hx * lat.hy
        self.vals = np.where(grid.active, field_.values, 0.0)
        self.ux, self.uy = _piecewise_gradient(u, self.vals, lat)
        self.A, self.B, self.C, self.phi = spec.coefficient_arrays(X, Y)
        # (A^{ij} phi)_j symbolically
        P = [[spec.A[i][j] * spec.phi for j in range(2)] for i in range(2)]
        self.divP = [P[i][0].diff("x")(X, Y) + P[i][1].diff("y")(X, Y) for i in range(2)]
        if form == "adjoint":
            self.d2P = sum(P[i][j].diff("xy"[i]).diff("xy"[j])(X, Y) for i in range(2) for j in range(2))
            self.divB = spec.B[0].diff("x")(X, Y) + spec.B[1].diff("y")(X, Y)

    def value(self, v, vx, vy, vxx=None, vxy=None, vyy=None) -> float:
        A, B, C, phi, divP = self.A, self.B, self.C, self.phi, self.divP
        if self.form == "direct":
            g0 = v * divP[0] + phi * (A[..., 0, 0] * vx + A[..., 0, 1] * vy)
            g1 = v * divP[1] + phi * (A[..., 1, 0] * vx + A[..., 1, 1] * vy)
            integrand = (-(self.ux * g0 + self.uy * g1) + phi * C * self.vals * v
                         + (B[..., 0] * self.ux + B[..., 1] * self.uy) * v)
        else:
            # d_i d_j (P_ij v) = v d_i d_j P_ij + 2 (d_j P_ij) v_i + P_ij v_ij
            lstar = (v * self.d2P + 2 * (divP[0] * vx + divP[1] * vy)
                     + phi * (A[..., 0, 0] * vxx + 2 * A[..., 0, 1] * vxy + A[..., 1, 1] * vyy)
                     + phi * C * v - (self.divB * v + B[..., 0] * vx + B[..., 1] * vy))
            integrand = self.vals * lstar
        return float(np.sum(integrand) * self.dA)


def bilinear_form(u, spec, v, vx, vy, vxx=None, vxy=None, vyy=None, form: str = "direct") -> float:
    """``a(u, v)`` for a test function given by lattice samples of ``v`` and its derivatives.

    The adjoint form also needs the second derivatives of ``v``.
    """
    if form == "adjoint" and any(q is None for q in (vxx, vxy, vyy)):
        raise VerificationError("the adjoint form needs second derivatives of the test function")
    return _FormTerms(u, spec, form).value(v, vx, vy, vxx, vxy, vyy)


def weak_residual(u, spec, n_tests: int = 25, radius: float | None = None,
                  centers: np.ndarray | None = None, curve=None, form: str = "direct") -> ResidualReport:
    """Normalized residuals ``|a(u, v) - (F, v)| / ||v||_{H1}`` for polynomial bump tests.

    ``a(u, v) = int -u_i (A^{ij} phi v)_j + phi C u v + B.grad(u) v``. With
    ``form="adjoint"`` the bilinear form is integrated by parts once more so
    only values of ``u`` enter (``int u L*v``); its bumps are ``(1 - rho^2/r^2)^3``
    instead of the quartic ``(1 - rho^2/r^2)^2``.
    """
    field_ = u.u if isinstance(u, GluedSolution) else u
    grid = field_.grid
    if not isinstance(grid, CutCellGrid):
        raise VerificationError("weak residual needs a field on a Cartesian lattice")
    lat = grid.lattice
    h = max(lat.hx, lat.hy)
    X, Y = grid.mesh()
    if radius is None:
        xmin, xmax, ymin, ymax = spec.box
        radius = max(4 * h, 0.1 * min(xmax - xmin, ymax - ymin))
    if radius < 4 * min(lat.hx, lat.hy) - 1e-12:
        raise VerificationError("test-function radius must cover at least 4 grid cells")
    margin = 2 * h
    if centers is None:
        centers = bump_centers(spec, curve, n_tests, radius, margin)
    else:
        centers = np.asarray(centers, dtype=float)
        for c in centers:
            if not _admissible(spec, c, radius, margin):
                raise VerificationError(f"test-function support around {tuple(c)} exits the domain")

    terms = _FormTerms(u, spec, form)
    F = spec.source(X, Y)
    dA = lat.hx * lat.hy
    out = []
    for c in centers:
        v, vx, vy, vxx, vxy, vyy = _bump(X, Y, c, radius, 3 if form == "adjoint" else 2)
        a_uv = terms.value(v, vx, vy, vxx, vxy, vyy)
        fv = float(np.sum(F * v) * dA)
        vnorm = float(np.sqrt(np.sum(v * v + vx * vx + vy * vy) * dA))
        out.append(abs(a_uv - fv) / vnorm)
    return ResidualReport(centers, float(radius), np.array(out), form)


# --------------------------------------------------------------------------
# convergence studies


@dataclass(frozen=True)
class ConvergenceReport:
    h: list
    l2_errors: list
    max_errors: list
    l2_order: float
    max_order: float

    def to_dict(self):
        return {"h": self.h, "l2_errors": self.l2_errors, "max_errors": self.max_errors,
                "l2_order": self.l2_order, "max_order": self.max_order}


def convergence_study(solve, exact, grids) -> ConvergenceReport:
    """Errors of ``solve(nx, ny) -> GridField`` against ``exact(X, Y)`` over nested grids.

    Grids must be a refinement family: each ``(nx, ny)`` an integer multiple
    (at least 2) of the previous.
    """
    grids = [tuple(g) for g in grids]
    if len(grids) < 3:
        raise VerificationError("convergence study needs at least 3 grids")
    for (a, b), (c, d) in zip(grids, grids[1:]):
        if c % a or d % b or c // a < 2 or d // b < 2 or c // a != d // b:
            raise VerificationError(f"grids {grids} are not a nested refinement family")
    hs, l2s, maxs = [], [], []
    for nx, ny in grids:
        u = solve(nx, ny)
        X, Y = u.grid.mesh()
        err = u.values - exact(X, Y)
        if isinstance(u.grid, CutCellGrid):
            err = np.where(u.grid.active, err, 0.0)
        hs.append(2 * np.pi / nx if isinstance(u.grid, StripGrid) else u.grid.lattice.hx)
        l2s.append(l2_norm(GridField(err, u.grid)))
        maxs.append(float(np.max(np.abs(err))))

    def order(errs):
        e = np.asarray(errs)
        if np.any(e <= 0):
            return float("inf")
        return float(np.polyfit(np.log(hs), np.log(e), 1)[0])

    return ConvergenceReport(hs, l2s, maxs, order(l2s), order(maxs))
