"""Straightening of the operator near the interface.

Pipeline:

* :func:`build_tubular_chart` -- collar coordinates ``(s1, s2)`` with
  ``xi = nu(s1) + n(s1) * s2`` (arc length along the interface, signed offset
  along the normal into ``{phi > 0}``);
* :func:`transform_coefficients` -- pulled-back principal part, drift and the
  factor ``phi_tilde`` with ``phi = s2 * phi_tilde``;
* :func:`solve_psi_characteristics` -- a coordinate ``psi(s1, s2)`` that is
  constant along the characteristics of ``A12 d/ds1 + A22 d/ds2`` so the
  mixed derivative disappears;
* :func:`canonical_coefficients` -- the strip form
  ``(y + eps)(omega u_xx + u_yy + c u) + a u_x + b u_y = f`` on a periodic
  strip ``[-pi, pi) x (-d0, d0)``.

Arrays on the chart are laid out ``(rows, cols) = (s2 levels, s1 samples)``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import RectBivariateSpline, make_interp_spline

from .problem import b0_pointwise

__all__ = [
    "TransformError",
    "TubularChart",
    "TransformedCoefficients",
    "PsiField",
    "CanonicalCoefficients",
    "B0Samples",
    "build_tubular_chart",
    "transform_coefficients",
    "solve_psi_characteristics",
    "canonical_coefficients",
    "compute_b0",
    "frame_partials",
]

GAUSS_NODES, GAUSS_WEIGHTS = np.polynomial.legendre.leggauss(8)
GAUSS_NODES = 0.5 * (GAUSS_NODES + 1.0)  # mapped to [0, 1]
GAUSS_WEIGHTS = 0.5 * GAUSS_WEIGHTS


class TransformError(ValueError):
    pass


def _outer(a, b):
    return a[..., :, None] * b[..., None, :]


def frame_partials(nu, t, n, kappa, kdot, s2):
    """Forward map, Jacobian and first/second partials of ``(s1, s2)`` w.r.t. ``xi``.

    All frame arrays broadcast against ``s2``; vector quantities carry a
    trailing axis of length 2 (matrices: 2x2).
    """
    s2 = np.asarray(s2, dtype=float)
    s2v = s2[..., None]
    xi = nu + n * s2v
    D = 1.0 - kappa * s2
    grad1 = t / D[..., None]
    grad2 = np.broadcast_to(n, grad1.shape)
    tt = _outer(t, t)
    nt = _outer(n, t)
    Dm = D[..., None, None]
    hess2 = -kappa[..., None, None] * tt / Dm
    hess1 = (kappa[..., None, None] * (nt + np.swapaxes(nt, -1, -2)) / Dm**2
             + (kdot * s2)[..., None, None] * tt / Dm**3)
    return xi, D, grad1, grad2, hess1, np.broadcast_to(hess2, hess1.shape)


@dataclass(frozen=True, eq=False)
class TubularChart:
    curve: object
    d: float
    m: int  # rows on each side of s2 = 0
    xi: np.ndarray = field(repr=False)
    det: np.ndarray = field(repr=False)

    @property
    def s1(self) -> np.ndarray:
        return self.curve.s

    @property
    def s2(self) -> np.ndarray:
        return self.d * np.arange(-self.m, self.m + 1) / self.m

    @property
    def length(self) -> float:
        return self.curve.length

    def forward(self, s1, s2):
        nu, t, n, kap, kdot, _ = self.curve.frame(np.asarray(s1, float))
        return frame_partials(nu, t, n, kap, kdot, s2)[0]

    def invert(self, xi, iterations: int = 20):
        """Recover ``(s1, s2)`` from points ``xi`` (shape (..., 2)) by Newton iteration."""
        xi = np.asarray(xi, dtype=float)
        flat = xi.reshape(-1, 2)
        pts = self.curve.points
        d2 = ((flat[:, None, :] - pts[None, :, :]) ** 2).sum(-1)
        k = np.argmin(d2, axis=1)
        s1 = self.curve.s[k]
        s2 = np.einsum("ij,ij->i", flat - pts[k], self.curve.normals[k])
        for _ in range(iterations):
            nu, t, n, kap, kdot, _ = self.curve.frame(s1)
            x, D, g1, g2, _, _ = frame_partials(nu, t, n, kap, kdot, s2)
            r = flat - x
            ds1 = np.einsum("ij,ij->i", g1, r)
            ds2 = np.einsum("ij,ij->i", g2, r)
            s1, s2 = s1 + ds1, s2 + ds2
            if max(np.max(np.abs(ds1)), np.max(np.abs(ds2))) < 1e-14:
                break
        s1 = np.mod(s1, self.length)
        return s1.reshape(xi.shape[:-1]), s2.reshape(xi.shape[:-1])


def build_tubular_chart(curve, d: float, m: int = 64) -> TubularChart:
    """Collar chart of half-width ``d`` with ``2m+1`` rows in ``s2``.

    Raises :class:`TransformError` if the chart folds (``1 - kappa*s2 <= 0``);
    the message carries the largest admissible half-width.
    """
    if d <= 0:
        raise TransformError("chart half-width must be positive")
    kmax = float(np.max(np.abs(curve.curvature)))
    reach = np.inf if kmax == 0 else 1.0 / kmax
    if d >= reach:
        raise TransformError(
            f"chart folds: half-width {d:g} reaches the focal distance; largest admissible d < {reach:.6g}"
        )
    s2 = d * np.arange(-m, m + 1) / m
    nu, t, n, kap, kdot = (curve.points, curve.tangents, curve.normals,
                           curve.curvature, curve.curvature_rate)
    xi, D, *_ = frame_partials(nu[None], t[None], n[None], kap[None], kdot[None], s2[:, None])
    # Jacobian written in frame terms: t1 n2 - t2 n1 + (ndot1 n2 - n1 ndot2) s2, ndot = -kappa t
    ndot = -kap[:, None] * t
    jac0 = t[:, 0] * n[:, 1] - t[:, 1] * n[:, 0]
    jac1 = ndot[:, 0] * n[:, 1] - n[:, 0] * ndot[:, 1]
    det = jac0[None, :] + jac1[None, :] * s2[:, None]
    if np.any(det <= 0):
        raise TransformError(f"chart folds; largest admissible d < {reach:.6g}")
    return TubularChart(curve, float(d), int(m), xi, det)


@dataclass(frozen=True, eq=False)
class TransformedCoefficients:
    chart: TubularChart
    spec: object
    A11: np.ndarray = field(repr=False)
    A12: np.ndarray = field(repr=False)
    A22: np.ndarray = field(repr=False)
    B1: np.ndarray = field(repr=False)
    B2: np.ndarray = field(repr=False)
    phi_tilde: np.ndarray = field(repr=False)
    C: np.ndarray = field(repr=False)
    F: np.ndarray = field(repr=False)
    phi: np.ndarray = field(repr=False)

    @property
    def length(self):
        return self.chart.length

    @property
    def s1(self):
        return self.chart.s1

    @property
    def s2(self):
        return self.chart.s2

    def ratio(self, s2_levels) -> np.ndarray:
        """Characteristic slope ``A12/A22`` at chart columns and the given ``s2`` levels."""
        vals = _pullback(self.spec, self.chart.curve, np.asarray(s2_levels, float)[:, None])
        return vals["A12"] / vals["A22"]

    def factorization_error(self) -> float:
        """``max |phi - s2 * phi_tilde|`` over the chart."""
        return float(np.max(np.abs(self.phi - self.s2[:, None] * self.phi_tilde)))


def _pullback(spec, curve, s2):
    nu, t, n, kap, kdot = (curve.points[None], curve.tangents[None], curve.normals[None],
                           curve.curvature[None], curve.curvature_rate[None])
    xi, D, g1, g2, h1, h2 = frame_partials(nu, t, n, kap, kdot, s2)
    x, y = xi[..., 0], xi[..., 1]
    A, B, C, phi = spec.coefficient_arrays(x, y)
    As = 0.5 * (A + np.swapaxes(A, -1, -2))

    def quad(u, v):
        return np.einsum("...i,...ij,...j->...", u, As, v)

    out = {
        "A11": quad(g1, g1),
        "A12": quad(g1, g2),
        "A22": quad(g2, g2),
        "B1": phi * np.einsum("...ij,...ij->...", As, h1) + np.einsum("...i,...i->...", B, g1),
        "B2": phi * np.einsum("...ij,...ij->...", As, h2) + np.einsum("...i,...i->...", B, g2),
        "C": C,
        "F": spec.source(x, y),
        "phi": phi,
    }
    gx, gy = spec.phi.gradient()
    s2b = np.broadcast_to(s2, x.shape)
    pt = np.zeros(x.shape)
    for q, w in zip(GAUSS_NODES, GAUSS_WEIGHTS):
        px = nu[..., 0] + n[..., 0] * q * s2b
        py = nu[..., 1] + n[..., 1] * q * s2b
        pt += w * (gx(px, py) * n[..., 0] + gy(px, py) * n[..., 1])
    out["phi_tilde"] = pt
    return out


def transform_coefficients(spec, chart: TubularChart) -> TransformedCoefficients:
    vals = _pullback(spec, chart.curve, chart.s2[:, None])
    if np.any(~(vals["A22"] > 0)):
        raise TransformError("pulled-back normal coefficient A22 is not positive on the chart")
    return TransformedCoefficients(chart, spec, **vals)


# --------------------------------------------------------------------------
# characteristics


def _periodic_spline(s, values, length, k=5):
    """Periodic interpolating spline through samples at ``s`` (uniform, no endpoint)."""
    sx = np.concatenate([s, [length]])
    vy = np.concatenate([values, values[:1]], axis=0)
    return make_interp_spline(sx, vy, k=k, bc_type="periodic", axis=0)


def _d1_periodic(f, h, axis):
    r = lambda k: np.roll(f, -k, axis=axis)  # noqa: E731
    return (-r(2) + 8 * r(1) - 8 * r(-1) + r(-2)) / (12 * h)


def _d2_periodic(f, h, axis):
    r = lambda k: np.roll(f, -k, axis=axis)  # noqa: E731
    return (-r(2) + 16 * r(1) - 30 * f + 16 * r(-1) - r(-2)) / (12 * h * h)


_ONE_SIDED_D1 = {  # 4th-order one-sided first-derivative weights on 5 points
    0: np.array([-25, 48, -36, 16, -3]) / 12,
    1: np.array([-3, -10, 18, -6, 1]) / 12,
}
_ONE_SIDED_D2 = {  # 4th-order (3rd at the very edge) one-sided second-derivative weights on 6 points
    0: np.array([45, -154, 214, -156, 61, -10]) / 12,
    1: np.array([10, -15, -4, 14, -6, 1]) / 12,
}


def _d1_rows(f, h):
    """4th-order derivative along axis 0 with one-sided closures."""
    out = np.empty_like(f)
    out[2:-2] = (-f[4:] + 8 * f[3:-1] - 8 * f[1:-3] + f[:-4]) / (12 * h)
    for k, w in _ONE_SIDED_D1.items():
        out[k] = np.tensordot(w, f[0:5], axes=(0, 0)) / h
        out[-1 - k] = -np.tensordot(w, f[::-1][0:5], axes=(0, 0)) / h
    return out


def _d2_rows(f, h):
    out = np.empty_like(f)
    out[2:-2] = (-f[4:] + 16 * f[3:-1] - 30 * f[2:-2] + 16 * f[1:-3] - f[:-4]) / (12 * h * h)
    for k, w in _ONE_SIDED_D2.items():
        out[k] = np.tensordot(w, f[0:6], axes=(0, 0)) / (h * h)
        out[-1 - k] = np.tensordot(w, f[::-1][0:6], axes=(0, 0)) / (h * h)
    return out


@dataclass(frozen=True, eq=False)
class PsiField:
    """``psi`` on the chart grid plus characteristic foot points and diagnostics.

    ``S[j, k]`` is the ``s1`` position at level ``s2[j]`` of the characteristic
    launched from ``(s1[k], 0)``.
    """

    s1: np.ndarray
    s2: np.ndarray
    length: float
    psi: np.ndarray = field(repr=False)
    S: np.ndarray = field(repr=False)
    d1: np.ndarray = field(repr=False)
    d2: np.ndarray = field(repr=False)
    d11: np.ndarray = field(repr=False)
    d12: np.ndarray = field(repr=False)
    d22: np.ndarray = field(repr=False)
    shift_error: float
    residual_rms: float
    residual_max: float
    residual: np.ndarray = field(repr=False)

    @property
    def detJ(self) -> np.ndarray:
        return self.d1


def solve_psi_characteristics(tc, steps: int = 256) -> PsiField:
    """Integrate ``ds1/ds2 = A12/A22`` from every ``(s1_k, 0)`` with classical RK4.

    The step is ``d/steps`` (rounded so chart rows are hit exactly). ``tc``
    needs ``s1``, ``s2``, ``length``, ``ratio(levels)`` and ``A12``/``A22`` on
    the chart grid.
    """
    s1, s2, L = np.asarray(tc.s1), np.asarray(tc.s2), float(tc.length)
    m = (len(s2) - 1) // 2
    d = float(s2[-1])
    per_row = max(1, int(np.ceil(steps / m)))
    nsteps = per_row * m
    h = d / nsteps
    N = len(s1)

    S = np.empty((len(s2), N))
    S[m] = s1
    shift = 0.0
    for sign in (1.0, -1.0):
        levels = sign * h * 0.5 * np.arange(2 * nsteps + 1)
        slope_rows = tc.ratio(levels)
        splines = [None] * len(levels)

        def slope(level_idx, pos):
            if splines[level_idx] is None:
                splines[level_idx] = _periodic_spline(s1, slope_rows[level_idx], L)
            return splines[level_idx](np.mod(pos, L))

        trivial = np.max(np.abs(slope_rows)) == 0.0
        pos = np.concatenate([s1, s1 + L])  # second copy checks shift periodicity
        for k in range(nsteps):
            if not trivial:
                i0 = 2 * k
                k1 = slope(i0, pos)
                k2 = slope(i0 + 1, pos + 0.5 * sign * h * k1)
                k3 = slope(i0 + 1, pos + 0.5 * sign * h * k2)
                k4 = slope(i0 + 2, pos + sign * h * k3)
                pos = pos + sign * h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
            if (k + 1) % per_row == 0:
                j = m + int(sign) * ((k + 1) // per_row)
                S[j] = pos[:N]
                shift = max(shift, float(np.max(np.abs(pos[N:] - pos[:N] - L))))

    # psi at chart nodes: solve sigma + Dsp(sigma) = s1 row by row
    psi = np.empty_like(S)
    for j in range(len(s2)):
        disp = S[j] - s1
        if np.max(np.abs(disp)) == 0.0:
            psi[j] = s1
            continue
        sp = _periodic_spline(s1, disp, L)
        dsp = sp.derivative()
        sigma = s1 - disp
        for _ in range(50):
            g = sigma + sp(np.mod(sigma, L)) - s1
            step = g / (1.0 + dsp(np.mod(sigma, L)))
            sigma = sigma - step
            if np.max(np.abs(step)) < 1e-15 * L:
                break
        psi[j] = sigma

    h1 = L / N
    h2 = d / m
    per = psi - s1[None, :]
    d1 = 1.0 + _d1_periodic(per, h1, axis=1)
    d11 = _d2_periodic(per, h1, axis=1)
    d2 = _d1_rows(psi, h2)
    d22 = _d2_rows(psi, h2)
    d12 = _d1_rows(d1, h2)
    res = tc.A12 * d1 + tc.A22 * d2
    return PsiField(
        s1, s2, L, psi, S, d1, d2, d11, d12, d22, shift,
        float(np.sqrt(np.mean(res**2))), float(np.max(np.abs(res))), res,
    )


# --------------------------------------------------------------------------
# canonical strip coefficients


@dataclass(frozen=True, eq=False)
class CanonicalCoefficients:
    """Strip-form coefficient fields, callable as ``field(X, Y)``.

    ``X`` ranges over ``[-pi, pi)`` (periodic), ``Y`` over
    ``[-y_minus, y_plus]``. ``top`` is the boundary condition on ``Y = y_plus``
    (``"dirichlet"`` or ``"neumann"``); ``Y = -y_minus`` is always Dirichlet.
    """

    omega: object
    a: object
    b: object
    c: object
    f: object
    y_plus: float
    y_minus: float
    top: str = "dirichlet"
    d0: float | None = None
    omega_star: float = 1e-3
    table: dict | None = field(default=None, repr=False)
    diagnostics: dict = field(default_factory=dict)

    def sample(self, X, Y) -> dict:
        return {k: np.asarray(getattr(self, k)(X, Y), dtype=float) * np.ones_like(X)
                for k in ("omega", "a", "b", "c", "f")}

    def with_source(self, f) -> "CanonicalCoefficients":
        from dataclasses import replace

        return replace(self, f=f)


class _TableField:
    """Bicubic interpolation of a periodic-in-X table."""

    def __init__(self, X, Y, values, pad: int = 4):
        hx = X[1] - X[0]
        Xe = X[0] + hx * np.arange(-pad, len(X) + pad)
        Ve = np.concatenate([values[:, -pad:], values, values[:, :pad]], axis=1)
        self.period = hx * len(X)
        self.x0 = X[0]
        self.spline = RectBivariateSpline(Y, Xe, Ve, kx=3, ky=3)
        self.values = values

    def __call__(self, X, Y):
        X, Y = np.broadcast_arrays(np.asarray(X, float), np.asarray(Y, float))
        Xw = np.mod(X - self.x0, self.period) + self.x0
        return self.spline.ev(Y, Xw)


def canonical_coefficients(tc: TransformedCoefficients, psi: PsiField,
                           omega_star: float = 1e-3) -> CanonicalCoefficients:
    """Strip coefficients on ``[-pi, pi) x [-d0, d0]``.

    Raises :class:`TransformError` when fewer than two chart rows on either
    side satisfy ``omega >= omega_star``, ``det J > 0`` and ``phi_tilde > 0``.
    """
    L = psi.length
    k = 2 * np.pi / L
    s2 = psi.s2[:, None]
    A11, A12, A22 = tc.A11, tc.A12, tc.A22
    p1, p2 = psi.d1, psi.d2
    denom = A22 * tc.phi_tilde
    omega = k * k * (A11 * p1 * p1 + 2 * A12 * p1 * p2 + A22 * p2 * p2) / A22
    second = A11 * psi.d11 + 2 * A12 * psi.d12 + A22 * psi.d22
    a = k * (s2 * second + tc.B1 * p1 + tc.B2 * p2) / denom
    b = tc.B2 / denom
    c = tc.C / A22
    f = tc.F / denom
    mixed = 2 * k * psi.residual / A22

    ok = (omega >= omega_star) & (psi.d1 > 0) & (tc.phi_tilde > 0)
    row_ok = ok.all(axis=1)
    m = (len(psi.s2) - 1) // 2
    up = 0
    while up < m and row_ok[m + up + 1]:
        up += 1
    dn = 0
    while dn < m and row_ok[m - dn - 1]:
        dn += 1
    keep = min(up, dn)
    if not row_ok[m] or keep < 2:
        raise TransformError("strip half-width d0 collapses below the chart resolution")
    rows = slice(m - keep, m + keep + 1)
    d0 = float(psi.s2[m + keep])

    # resample each chart row at the characteristic foot points S(sigma_k, s2_j):
    # there psi = sigma_k, i.e. uniform canonical X_k = k * sigma_k - pi
    X = k * psi.s1 - np.pi
    Y = psi.s2[rows]
    tables = {}
    for name, arr in (("omega", omega), ("a", a), ("b", b), ("c", c), ("f", f), ("mixed", mixed)):
        out = np.empty((len(Y), len(X)))
        for jj, j in enumerate(range(rows.start, rows.stop)):
            foot = psi.S[j]
            if np.array_equal(foot, psi.s1):
                out[jj] = arr[j]
            else:
                out[jj] = _periodic_spline(psi.s1, arr[j], L)(np.mod(foot, L))
        tables[name] = out
    if not all(np.all(np.isfinite(v)) for v in tables.values()):
        raise TransformError("non-finite canonical coefficients on the retained strip")

    fields = {nm: _TableField(X, Y, tables[nm]) for nm in ("omega", "a", "b", "c", "f")}
    diag = {
        "d0": d0,
        "length": L,
        "psi_shift_error": psi.shift_error,
        "psi_residual_rms": psi.residual_rms,
        "psi_residual_max": psi.residual_max,
        "detJ_min": float(np.min(psi.d1[rows])),
        "omega_min": float(np.min(tables["omega"])),
        "mixed_relative": float(np.max(np.abs(tables["mixed"])) / np.max(tables["omega"])),
        "phi_factorization_error": tc.factorization_error(),
    }
    table = {"X": X, "Y": Y, **tables}
    return CanonicalCoefficients(
        fields["omega"], fields["a"], fields["b"], fields["c"], fields["f"],
        y_plus=d0, y_minus=d0, top="dirichlet", d0=d0, omega_star=omega_star,
        table=table, diagnostics=diag,
    )


@dataclass(frozen=True)
class B0Samples:
    s: np.ndarray
    values: np.ndarray

    @property
    def negative(self) -> bool:
        return bool(np.all(self.values < 0))


def compute_b0(spec, curve) -> B0Samples:
    """Closed-form normal drift on the interface samples."""
    x, y = curve.points[:, 0], curve.points[:, 1]
    return B0Samples(curve.s.copy(), b0_pointwise(spec.phi, spec.A, spec.B, x, y))
