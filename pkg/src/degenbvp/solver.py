"""Finite-difference discretization and solution of the regularized problems.

Two assembly paths:

* :func:`assemble_strip_operator` for the strip form
  ``(y +- eps)(omega u_xx + u_yy + c u) + a u_x + b u_y = f``. The minus side is
  written in the distance ``z = -y`` (``a -> -a``, ``f -> -f``) so both sides
  share one stencil with positive weight ``z + eps``.
* :func:`assemble_domain_operator` for ``(phi +- eps)(A:D^2 u + C u) + B.grad u = F``
  on a cut-cell lattice with Shortley-Weller legs at curved boundaries.
"""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy import ndimage

from .grids import (
    DIRECTIONS,
    KIND_NONE,
    CutCellGrid,
    GridField,
    StripGrid,
)

__all__ = [
    "SolverError",
    "MollifierSpec",
    "DiscreteOperator",
    "SolveOutput",
    "mollifier",
    "mollify_source",
    "assemble_strip_operator",
    "assemble_domain_operator",
    "solve_linear",
    "DIRECT_LIMIT",
]

log = logging.getLogger(__name__)

DIRECT_LIMIT = 100_000


class SolverError(RuntimeError):
    def __init__(self, message, condition: float | None = None, eps: float | None = None):
        super().__init__(message)
        self.condition = condition
        self.eps = eps


# --------------------------------------------------------------------------
# mollification


@dataclass(frozen=True)
class MollifierSpec:
    rx: int
    ry: int
    weights: np.ndarray = field(repr=False)


def mollifier(rx: int, ry: int) -> MollifierSpec:
    """Normalized discrete bump ``exp(-1/(1 - rho^2))`` with support ``|i| <= rx, |j| <= ry``."""
    i = np.arange(-rx, rx + 1) / (rx + 1)
    j = np.arange(-ry, ry + 1) / (ry + 1)
    rho2 = j[:, None] ** 2 + i[None, :] ** 2
    w = np.where(rho2 < 1, np.exp(-1.0 / np.maximum(1 - rho2, 1e-300)), 0.0)
    return MollifierSpec(rx, ry, w / w.sum())


def _spacings(grid):
    if isinstance(grid, CutCellGrid):
        return grid.lattice.hx, grid.lattice.hy
    return grid.hx, grid.hy


def mollify_source(F: GridField, eps: float) -> GridField:
    """Convolve grid data with the bump of radius ``max(1, round(eps/h))`` cells per axis.

    The convolution is renormalized where the kernel leaves the grid (or the
    active region of a cut-cell grid), so constants are reproduced exactly.
    Strip grids wrap periodically in ``x``. ``eps == 0`` returns ``F`` itself.
    """
    if eps < 0:
        raise ValueError("eps must be non-negative")
    if eps == 0:
        return F
    grid = F.grid
    hx, hy = _spacings(grid)
    spec = mollifier(max(1, int(round(eps / hx))), max(1, int(round(eps / hy))))
    if isinstance(grid, CutCellGrid):
        mask = grid.active.astype(float)
    else:
        mask = np.ones(grid.shape)
    vals = F.values * mask
    periodic = isinstance(grid, StripGrid)
    if periodic:
        pad = ((0, 0), (spec.rx, spec.rx))
        vals_p = np.pad(vals, pad, mode="wrap")
        mask_p = np.pad(mask, pad, mode="wrap")
    else:
        vals_p, mask_p = vals, mask
    num = ndimage.convolve(vals_p, spec.weights, mode="constant", cval=0.0)
    den = ndimage.convolve(mask_p, spec.weights, mode="constant", cval=0.0)
    if periodic:
        num, den = num[:, spec.rx:-spec.rx], den[:, spec.rx:-spec.rx]
    out = np.where(mask > 0, num / np.where(den > 0, den, 1.0), 0.0)
    return F.with_values(out)


# --------------------------------------------------------------------------
# assembled systems


@dataclass(frozen=True, eq=False)
class DiscreteOperator:
    """Sparse system over the unknowns of ``grid``.

    ``unknowns`` maps the flat unknown index back to grid positions
    (``np.nonzero``-style tuple).
    """

    matrix: sp.csr_matrix
    rhs: np.ndarray
    grid: object
    unknowns: tuple
    meta: dict
    boundary: dict | None = None
    dirichlet: np.ndarray | None = None

    @property
    def n(self) -> int:
        return self.matrix.shape[0]

    def to_field(self, x: np.ndarray) -> GridField:
        values = np.zeros(self.grid.shape)
        values[self.unknowns] = x
        return GridField(values, self.grid, self.boundary)

    def from_field(self, u: GridField) -> np.ndarray:
        return u.values[self.unknowns]


@dataclass(frozen=True, eq=False)
class SolveOutput:
    field: GridField
    residual: float
    eps: float
    side: str
    stats: dict


def _check_eps(eps):
    if not eps > 0:
        raise ValueError(f"eps must be positive, got {eps!r}")


def _drift_coefficients(coef, h, scheme):
    """Neighbour/diagonal contributions of ``coef * du`` along one axis (uniform spacing)."""
    if scheme == "central":
        return coef / (2 * h), -coef / (2 * h), np.zeros_like(coef)
    if scheme == "upwind":
        pos = np.maximum(coef, 0.0)
        neg = np.minimum(coef, 0.0)
        return pos / h, -neg / h, (neg - pos) / h
    raise ValueError(f"unknown scheme {scheme!r}")


def assemble_strip_operator(cc, eps: float, side: str, grid: StripGrid, scheme: str = "central",
                            source: np.ndarray | None = None) -> DiscreteOperator:
    """Five-point discretization of the regularized strip operator.

    ``source`` overrides ``cc.f`` sampled at the nodes (e.g. a mollified copy).
    Dirichlet rows (interface row, and the far row unless ``grid.top`` is
    Neumann) are identity rows with zero right-hand side.
    """
    _check_eps(eps)
    if side != grid.side:
        raise ValueError(f"grid is for side {grid.side!r}, not {side!r}")
    X, Y = grid.mesh()
    co = cc.sample(X, Y)
    weight = grid.sign * Y + eps  # z + eps on both sides
    if np.any(weight <= 0):
        raise ValueError("sign condition on (y +- eps) violated on this grid")
    a = grid.sign * co["a"]
    b = co["b"]
    f = co["f"] if source is None else np.asarray(source, dtype=float)
    rhs_vals = grid.sign * f

    ny1, nx = grid.shape
    hx, hy = grid.hx, grid.hy
    idx = np.arange(ny1 * nx).reshape(ny1, nx)
    east = np.roll(idx, -1, axis=1)
    west = np.roll(idx, 1, axis=1)

    wo = weight * co["omega"]
    aE, aW, aP = _drift_coefficients(a, hx, scheme)
    bN, bS, bP = _drift_coefficients(b, hy, scheme)
    cE = wo / hx**2 + aE
    cW = wo / hx**2 + aW
    cN = weight / hy**2 + bN
    cS = weight / hy**2 + bS
    cP = -2 * wo / hx**2 - 2 * weight / hy**2 + weight * co["c"] + aP + bP

    dir_mask = grid.dirichlet_mask()
    neumann_top = grid.top == "neumann"
    if neumann_top:
        # ghost row u_{ny+1} = u_{ny-1}: mirror the north coefficient, drop the normal drift
        cS[-1] = 2 * weight[-1] / hy**2
        cP[-1] = -2 * wo[-1] / hx**2 - 2 * weight[-1] / hy**2 + weight[-1] * co["c"][-1] + aP[-1]
        cN[-1] = 0.0

    interior = ~dir_mask
    rows, cols, vals = [], [], []

    def put(mask, target, coef):
        rows.append(idx[mask])
        cols.append(target[mask])
        vals.append(coef[mask])

    north = np.zeros_like(idx)
    north[:-1] = idx[1:]
    south = np.zeros_like(idx)
    south[1:] = idx[:-1]
    put(interior, idx, cP)
    put(interior, east, cE)
    put(interior, west, cW)
    has_north = interior.copy()
    has_north[-1] = False
    put(has_north, north, cN)
    put(interior, south, cS)
    put(dir_mask, idx, np.ones(grid.shape))

    rows = np.concatenate(rows)
    cols = np.concatenate(cols)
    vals = np.concatenate(vals)
    n = ny1 * nx
    A = sp.csr_matrix((vals, (rows, cols)), shape=(n, n))
    A.sum_duplicates()
    rhs = np.where(dir_mask, 0.0, rhs_vals).ravel()
    unknowns = tuple(np.indices(grid.shape).reshape(2, -1))
    meta = {"eps": float(eps), "side": side, "scheme": scheme, "kind": grid.kind}
    return DiscreteOperator(A, rhs, grid, unknowns, meta, None, dir_mask)


def _mixed_stencil(grid: CutCellGrid):
    """Per-node choice of mixed-derivative stencil: 0 cross, 1 NE/SW, 2 NW/SE, 3 fallback."""
    act = grid.active
    ne = np.zeros_like(act)
    nw = np.zeros_like(act)
    se = np.zeros_like(act)
    sw = np.zeros_like(act)
    ne[:-1, :-1] = act[1:, 1:]
    nw[:-1, 1:] = act[1:, :-1]
    se[1:, :-1] = act[:-1, 1:]
    sw[1:, 1:] = act[:-1, :-1]
    axes_ok = np.ones_like(act)
    for d in DIRECTIONS:
        axes_ok &= grid.crossing[d] == KIND_NONE
    choice = np.full(act.shape, 3, dtype=np.int8)
    choice[axes_ok & ne & sw] = 1
    choice[axes_ok & nw & se] = 2
    choice[ne & nw & se & sw] = 0
    return choice


def assemble_domain_operator(spec, eps: float, side: str, grid: CutCellGrid, scheme: str = "central",
                             source: np.ndarray | None = None, boundary: dict | None = None
                             ) -> DiscreteOperator:
    """Shortley-Weller discretization of ``L^{+-eps}`` on one side of the interface.

    ``source`` overrides ``spec.F`` (lattice-shaped array). ``boundary`` holds
    Dirichlet values at the leg crossings (default zero).
    """
    _check_eps(eps)
    if side not in ("plus", "minus"):
        raise ValueError(f"unknown side {side!r}")
    if grid.side != side:
        raise ValueError(f"grid is for side {grid.side!r}, not {side!r}")
    act = grid.active
    X, Y = grid.mesh()
    xa, ya = X[act], Y[act]
    A, B, C, phi = spec.coefficient_arrays(xa, ya)
    w = phi + eps if side == "plus" else phi - eps
    if side == "plus" and np.any(w <= 0) or side == "minus" and np.any(w >= 0):
        raise ValueError("sign precondition on (phi +- eps) violated on the active nodes")
    F = (spec.source(xa, ya) if source is None else np.asarray(source, dtype=float)[act])
    # minus side: multiply the equation by -1 so the principal weight is positive
    sgn = 1.0 if side == "plus" else -1.0
    w = sgn * w
    B = sgn * B
    rhs = sgn * F

    lat = grid.lattice
    h = {"E": lat.hx, "W": lat.hx, "N": lat.hy, "S": lat.hy}
    legs = {d: grid.legs[d][act] * h[d] for d in DIRECTIONS}
    cut = {d: grid.crossing[d][act] != KIND_NONE for d in DIRECTIONS}
    bvals = {d: (boundary[d][act] if boundary is not None else np.zeros(len(xa))) for d in DIRECTIONS}
    idx = grid.index
    n = grid.n_active
    me = np.arange(n)
    nbr = {}
    for d, (di, dj) in DIRECTIONS.items():
        j, i = np.nonzero(act)
        jj = np.clip(j + dj, 0, lat.ny)
        ii = np.clip(i + di, 0, lat.nx)
        nbr[d] = idx[jj, ii]

    coef = {d: np.zeros(n) for d in DIRECTIONS}
    diag = w * C
    # second derivatives along each axis
    for (p, m), a_ii in ((("E", "W"), A[:, 0, 0]), (("N", "S"), A[:, 1, 1])):
        hp, hm = legs[p], legs[m]
        coef[p] += w * a_ii * 2 / (hp * (hp + hm))
        coef[m] += w * a_ii * 2 / (hm * (hp + hm))
        diag -= w * a_ii * 2 / (hp * hm)
    # first derivatives
    for (p, m), bl in ((("E", "W"), B[:, 0]), (("N", "S"), B[:, 1])):
        hp, hm = legs[p], legs[m]
        if scheme == "central":
            den = hp * hm * (hp + hm)
            coef[p] += bl * hm * hm / den
            coef[m] -= bl * hp * hp / den
            diag += bl * (hp * hp - hm * hm) / den
        elif scheme == "upwind":
            pos, neg = np.maximum(bl, 0), np.minimum(bl, 0)
            coef[p] += pos / hp
            diag -= pos / hp
            coef[m] -= neg / hm
            diag += neg / hm
        else:
            raise ValueError(f"unknown scheme {scheme!r}")

    rows, cols, vals = [me], [me], [diag]
    for d in DIRECTIONS:
        inner = ~cut[d]
        rows.append(me[inner])
        cols.append(nbr[d][inner])
        vals.append(coef[d][inner])
        rhs = rhs - np.where(cut[d], coef[d] * bvals[d], 0.0)

    a12 = A[:, 0, 1]
    if np.any(a12 != 0):
        r2, c2, v2 = _mixed_terms(grid, act, 2 * w * a12, lat.hx, lat.hy, idx)
        rows.append(r2)
        cols.append(c2)
        vals.append(v2)

    M = sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                      shape=(n, n))
    M.sum_duplicates()
    unknowns = np.nonzero(act)
    bnd = grid.boundary_template() if boundary is None else boundary
    meta = {"eps": float(eps), "side": side, "scheme": scheme, "kind": grid.kind}
    return DiscreteOperator(M, rhs, grid, unknowns, meta, bnd)


def _mixed_terms(grid, act, coef, hx, hy, idx):
    """Entries for ``coef * u_xy`` (inactive neighbours contribute zero boundary data)."""
    choice = _mixed_stencil(grid)[act]
    j, i = np.nonzero(act)
    n = len(j)
    me = np.arange(n)
    ny1, nx1 = act.shape

    def at(dj, di):
        jj, ii = j + dj, i + di
        ok = (jj >= 0) & (jj < ny1) & (ii >= 0) & (ii < nx1)
        out = np.full(n, -1)
        out[ok] = idx[jj[ok], ii[ok]]
        return out

    stencils = {
        0: [((1, 1), 0.25), ((1, -1), -0.25), ((-1, 1), -0.25), ((-1, -1), 0.25)],
        1: [((1, 1), 0.5), ((-1, -1), 0.5), ((0, 0), 1.0), ((1, 0), -0.5), ((-1, 0), -0.5),
            ((0, 1), -0.5), ((0, -1), -0.5)],
        2: [((1, -1), -0.5), ((-1, 1), -0.5), ((0, 0), -1.0), ((1, 0), 0.5), ((-1, 0), 0.5),
            ((0, 1), 0.5), ((0, -1), 0.5)],
    }
    stencils[3] = stencils[0]
    rows, cols, vals = [], [], []
    for k, st in stencils.items():
        sel = choice == k
        if not sel.any():
            continue
        for (dj, di), wgt in st:
            tgt = at(dj, di)
            ok = sel & (tgt >= 0)
            rows.append(me[ok])
            cols.append(tgt[ok])
            vals.append(coef[ok] * wgt / (hx * hy))
    return np.concatenate(rows), np.concatenate(cols), np.concatenate(vals)


# --------------------------------------------------------------------------
# linear solves


def _condition_estimate(A, lu=None) -> float:
    try:
        if lu is None:
            lu = spla.splu(A.tocsc())
        n = A.shape[0]
        inv = spla.LinearOperator((n, n), matvec=lu.solve, rmatvec=lambda v: lu.solve(v, trans="T"),
                                  dtype=float)
        return float(spla.onenormest(A) * spla.onenormest(inv))
    except Exception:  # noqa: BLE001 - diagnostics only
        return float("inf")


def _relres(A, x, b):
    nb = np.linalg.norm(b)
    r = np.linalg.norm(A @ x - b)
    return r / nb if nb > 0 else r


def solve_linear(op: DiscreteOperator, tol: float = 1e-10, x0: np.ndarray | None = None,
                 direct_limit: int = DIRECT_LIMIT) -> SolveOutput:
    """Solve ``op``: sparse LU up to ``direct_limit`` unknowns, ILU-GMRES above.

    Raises :class:`SolverError` for structurally or numerically singular
    systems and when the residual target cannot be met.
    """
    A = op.matrix.tocsr()
    b = op.rhs
    eps = op.meta.get("eps")
    t0 = time.perf_counter()
    if np.any(np.diff(A.indptr) == 0) or np.any(np.abs(A).sum(axis=1).A1 == 0):
        raise SolverError("matrix has an empty row (singular)", condition=float("inf"), eps=eps)
    stats = {"n": int(A.shape[0]), "nnz": int(A.nnz)}
    x = None
    if A.shape[0] > direct_limit:
        x = _krylov(A, b, tol, x0, stats)
    if x is None:
        try:
            lu = spla.splu(A.tocsc())
        except RuntimeError as exc:
            raise SolverError(f"factorization failed: {exc}", condition=float("inf"), eps=eps) from exc
        x = lu.solve(b)
        refinements = 0
        while np.all(np.isfinite(x)) and _relres(A, x, b) > tol and refinements < 5:
            x = x + lu.solve(b - A @ x)
            refinements += 1
        stats.update(method="direct", refinements=refinements)
        if not np.all(np.isfinite(x)) or _relres(A, x, b) > tol:
            cond = _condition_estimate(A, lu)
            raise SolverError(
                f"linear solve did not reach relative residual {tol:g} (condition ~ {cond:.3e})",
                condition=cond, eps=eps,
            )
    res = _relres(A, x, b)
    stats["seconds"] = time.perf_counter() - t0
    if op.dirichlet is not None:
        # identity rows: copy the prescribed values exactly
        flat = op.dirichlet.ravel()
        x = x.copy()
        x[flat] = b[flat]
    return SolveOutput(op.to_field(x), float(res), eps, op.meta.get("side"), stats)


def _krylov(A, b, tol, x0, stats):
    try:
        ilu = spla.spilu(A.tocsc(), drop_tol=1e-5, fill_factor=20)
        M = spla.LinearOperator(A.shape, ilu.solve)
    except RuntimeError:
        M = None
    x, info = spla.gmres(A, b, x0=x0, rtol=tol * 0.1, atol=0.0, restart=100, maxiter=50, M=M)
    if info == 0 and _relres(A, x, b) <= tol:
        stats.update(method="gmres-ilu", info=int(info))
        return x
    log.info("gmres did not converge (info=%s); falling back to sparse LU", info)
    stats["krylov_failed"] = True
    return None
