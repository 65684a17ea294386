"""Arc-length parametrization of the interface ``{phi = 0}``.

Extraction runs in three stages:

1. marching squares on a sampling lattice locates the zero set and rejects
   empty, open or multi-component zero sets;
2. a seed point is projected onto ``phi = 0`` by Newton steps;
3. the curve is traced with RK4 along the unit tangent of the level set, each
   step re-projected, with the total length adjusted until the trace closes on
   itself after exactly ``n_samples`` steps.

Tangents, normals and curvature come from exact symbolic derivatives of
``phi``. Orientation: ``n = grad(phi)/|grad(phi)|`` points into ``{phi > 0}``
and ``t = (n_2, -n_1)``, so that ``t_1 n_2 - t_2 n_1 = 1``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import optimize
from skimage import measure

from .expressions import FieldExpression, parse_field_expression
from .grids import Lattice

__all__ = ["InterfaceError", "InterfaceCurve", "extract_interface", "project_to_zero"]


class InterfaceError(ValueError):
    pass


class _Geometry:
    """Symbolic tangent/normal/curvature fields of a level set."""

    def __init__(self, phi: FieldExpression):
        self.phi = phi
        self.gx, self.gy = phi.gradient()
        (self.hxx, self.hxy), (_, self.hyy) = phi.hessian()
        g2 = self.gx * self.gx + self.gy * self.gy
        # kappa = -t^T H t / |grad phi| with t = (phi_y, -phi_x)/|grad phi|
        num = (self.gy * self.gy * self.hxx - 2 * self.gx * self.gy * self.hxy
               + self.gx * self.gx * self.hyy)
        self.kappa = -num / g2 ** 1.5
        self.kx, self.ky = self.kappa.gradient()

    def grad(self, x, y):
        return self.gx(x, y), self.gy(x, y)

    def tangent(self, x, y):
        gx, gy = self.grad(x, y)
        g = np.hypot(gx, gy)
        return np.stack([gy / g, -gx / g], axis=-1)

    def frame(self, x, y):
        gx, gy = self.grad(x, y)
        g = np.hypot(gx, gy)
        n = np.stack([gx / g, gy / g], axis=-1)
        t = np.stack([n[..., 1], -n[..., 0]], axis=-1)
        kappa = self.kappa(x, y)
        kdot = self.kx(x, y) * t[..., 0] + self.ky(x, y) * t[..., 1]
        return t, n, kappa, kdot, g


def project_to_zero(phi: FieldExpression, points: np.ndarray, iterations: int = 8,
                    geometry: _Geometry | None = None) -> np.ndarray:
    """Newton projection of points onto ``phi = 0`` along the gradient."""
    geo = geometry or _Geometry(phi)
    p = np.array(points, dtype=float)
    for _ in range(iterations):
        v = phi(p[..., 0], p[..., 1])
        gx, gy = geo.grad(p[..., 0], p[..., 1])
        g2 = gx * gx + gy * gy
        p[..., 0] -= v * gx / g2
        p[..., 1] -= v * gy / g2
        if np.max(np.abs(v)) < 1e-15:
            break
    return p


@dataclass(frozen=True, eq=False)
class InterfaceCurve:
    """Closed curve sampled at uniform arc length ``s_k = k * length / N``.

    ``points[k]`` is the curve at ``s_k``; the closing sample ``s = length``
    is not repeated. ``tangents`` are unit, ``normals = grad(phi)/|grad(phi)|``.
    """

    points: np.ndarray
    tangents: np.ndarray
    normals: np.ndarray
    curvature: np.ndarray
    curvature_rate: np.ndarray
    grad_norm: np.ndarray
    length: float
    closure_error: float
    phi: FieldExpression = field(repr=False)
    _geometry: _Geometry = field(repr=False, default=None)

    @property
    def n(self) -> int:
        return len(self.points)

    @property
    def s(self) -> np.ndarray:
        return self.length * np.arange(self.n) / self.n

    def jacobian_identity(self) -> np.ndarray:
        t, n = self.tangents, self.normals
        return t[:, 0] * n[:, 1] - t[:, 1] * n[:, 0]

    def position(self, s) -> np.ndarray:
        """Curve point at arbitrary arc length (trigonometric interpolation + projection)."""
        s = np.asarray(s, dtype=float)
        N = self.n
        coef = np.fft.fft(self.points, axis=0) / N
        k = np.fft.fftfreq(N, d=1.0 / N)
        if N % 2 == 0:
            # split the Nyquist mode symmetrically so the interpolant is real
            coef[N // 2] *= 0.5
            k = np.concatenate([k, [N // 2]])
            coef = np.concatenate([coef, coef[N // 2: N // 2 + 1]], axis=0)
        phase = np.exp(2j * np.pi * np.multiply.outer(s.ravel(), k) / self.length)
        pts = np.real(phase @ coef).reshape(s.shape + (2,))
        return project_to_zero(self.phi, pts, iterations=3, geometry=self._geometry)

    def frame(self, s):
        """``(point, t, n, kappa, kappa_dot, |grad phi|)`` at arc lengths ``s``."""
        p = self.position(s)
        t, n, kap, kdot, g = self._geometry.frame(p[..., 0], p[..., 1])
        return p, t, n, kap, kdot, g


def _seed_contours(phi, box, resolution):
    lat = Lattice.covering(box, resolution, resolution)
    X, Y = lat.mesh()
    values = phi(X, Y)
    if not np.all(np.isfinite(values)):
        raise InterfaceError("phi is not finite on the sampling lattice")
    contours = []
    for c in measure.find_contours(values, 0.0):
        pts = np.column_stack([lat.x0 + c[:, 1] * lat.hx, lat.y0 + c[:, 0] * lat.hy])
        contours.append(pts)
    return lat, X, Y, values, contours


def _degenerate_zero(phi, X, Y, values):
    """Look for a zero of ``phi`` that marching squares misses (no sign change)."""
    k = np.unravel_index(np.argmin(np.abs(values)), values.shape)
    x0 = np.array([X[k], Y[k]])
    res = optimize.minimize(lambda p: float(phi(p[0], p[1])) ** 2, x0, method="Nelder-Mead",
                            options={"xatol": 1e-12, "fatol": 1e-30, "maxiter": 4000})
    scale = max(float(np.max(np.abs(values))), 1e-300)
    if abs(float(phi(*res.x))) <= 1e-8 * scale:
        return res.x
    return None


def extract_interface(phi, n_samples: int = 512, *, box=(-2.0, 2.0, -2.0, 2.0), outer=None,
                      resolution: int = 400, grad_tol: float = 1e-6) -> InterfaceCurve:
    """Closed arc-length parametrization of ``{phi = 0}`` inside ``box``.

    ``outer`` (anything with ``level(x, y) > 0`` inside) restricts the search
    to the computational domain. Raises :class:`InterfaceError` if the zero set
    is empty, not closed, has several components, or if ``grad(phi)`` vanishes
    on it.
    """
    phi = parse_field_expression(phi)
    if n_samples < 16:
        raise InterfaceError("n_samples must be at least 16")
    geo = _Geometry(phi)
    lat, X, Y, values, contours = _seed_contours(phi, box, resolution)
    gx, gy = geo.grad(X, Y)
    grad_scale = float(np.max(np.hypot(gx, gy)))

    if outer is not None:
        kept = []
        for c in contours:
            inside = outer.level(c[:, 0], c[:, 1]) > 0
            if inside.all():
                kept.append(c)
            elif inside.any():
                raise InterfaceError("interface leaves the domain")
        contours = kept

    if not contours:
        z = _degenerate_zero(phi, X, Y, values)
        if z is not None:
            g = float(np.hypot(*geo.grad(z[0], z[1])))
            raise InterfaceError(
                f"grad(phi) vanishes on the zero set near ({z[0]:.6g}, {z[1]:.6g}), |grad phi| = {g:.3e}"
            )
        raise InterfaceError("zero set of phi is empty")
    if len(contours) > 1:
        raise InterfaceError(f"zero set has {len(contours)} components; expected one closed curve")
    seed = contours[0]
    if np.hypot(*(seed[0] - seed[-1])) > 1e-9 * (lat.hx + lat.hy):
        raise InterfaceError("zero set is not a closed curve inside the box")

    g_seed = np.hypot(*geo.grad(seed[:, 0], seed[:, 1]))
    if np.min(g_seed) <= grad_tol * grad_scale:
        k = int(np.argmin(g_seed))
        raise InterfaceError(
            f"grad(phi) vanishes on the zero set near ({seed[k, 0]:.6g}, {seed[k, 1]:.6g})"
        )

    # deterministic start: rightmost point, then the lowest among near-ties
    k0 = int(np.lexsort((seed[:, 1], -np.round(seed[:, 0], 9)))[0])
    start = project_to_zero(phi, seed[k0], iterations=30, geometry=geo)
    length = float(np.sum(np.hypot(*np.diff(seed, axis=0).T)))

    def tangent(p):
        return geo.tangent(p[0], p[1])

    def trace(L):
        h = L / n_samples
        pts = np.empty((n_samples + 1, 2))
        pts[0] = start
        p = start.copy()
        for k in range(n_samples):
            k1 = tangent(p)
            k2 = tangent(p + 0.5 * h * k1)
            k3 = tangent(p + 0.5 * h * k2)
            k4 = tangent(p + h * k3)
            p = p + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
            p = project_to_zero(phi, p, iterations=3, geometry=geo)
            pts[k + 1] = p
        return pts

    t0 = tangent(start)
    for _ in range(12):
        pts = trace(length)
        gap = pts[-1] - pts[0]
        closure = float(np.hypot(*gap))
        if closure < 1e-12 * max(length, 1.0):
            break
        length -= float(gap @ t0)
    if closure > 1e-6 * length:
        raise InterfaceError(f"traced curve does not close (gap {closure:.3e})")

    pts = pts[:-1]
    t, n, kap, kdot, g = geo.frame(pts[:, 0], pts[:, 1])
    if np.min(g) <= grad_tol * grad_scale:
        raise InterfaceError("grad(phi) vanishes on the zero set")
    return InterfaceCurve(pts, t, n, kap, kdot, g, length, closure, phi, geo)
