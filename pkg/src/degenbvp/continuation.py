"""The eps -> 0 continuation on each side and the gluing of the two limits."""
from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .canonical import CanonicalCoefficients
from .grids import (
    DIRECTIONS,
    KIND_GAMMA,
    KIND_OUTER,
    CutCellGrid,
    GridField,
    StripGrid,
    build_cutcell_grid,
)
from .solver import (
    SolveOutput,
    SolverError,
    assemble_domain_operator,
    assemble_strip_operator,
    mollify_source,
    solve_linear,
)

__all__ = [
    "EpsilonSchedule",
    "ContinuationResult",
    "GluedSolution",
    "GlueError",
    "StripPairGrid",
    "run_continuation",
    "run_both_sides",
    "glue_solutions",
    "restrict",
    "l2_norm",
]

log = logging.getLogger(__name__)

OPPOSITE = {"E": "W", "W": "E", "N": "S", "S": "N"}


class GlueError(RuntimeError):
    pass


@dataclass(frozen=True)
class EpsilonSchedule:
    """Geometric sequence ``eps0 * ratio**k`` down to ``floor``.

    ``floor=None`` resolves to ``max(1e-5, h_y)`` for the grid in use.
    ``cauchy_tol=None`` disables the Cauchy stop (the whole sequence is run).
    """

    eps0: float = 0.1
    ratio: float = 0.5
    floor: float | None = None
    cauchy_tol: float | None = 1e-4

    def __post_init__(self):
        if not 0 < self.ratio < 1:
            raise ValueError("ratio must lie in (0, 1)")
        if self.floor is not None and not self.eps0 > self.floor > 0:
            raise ValueError("need eps0 > floor > 0")
        if self.eps0 <= 0:
            raise ValueError("eps0 must be positive")
        if self.cauchy_tol is not None and self.cauchy_tol < 0:
            raise ValueError("cauchy_tol must be non-negative")

    def resolved_floor(self, hy: float) -> float:
        floor = self.floor if self.floor is not None else max(1e-5, hy)
        return min(floor, self.eps0)

    def values(self, hy: float = 0.0) -> list:
        floor = self.resolved_floor(hy)
        out = [self.eps0]
        while True:
            nxt = out[-1] * self.ratio
            if nxt < floor * (1 - 1e-9):
                break
            out.append(nxt)
        return out

    def to_dict(self):
        return {"eps0": self.eps0, "ratio": self.ratio, "floor": self.floor, "cauchy_tol": self.cauchy_tol}


def l2_norm(field_: GridField) -> float:
    w = field_.grid.weights
    w = w() if callable(w) else w
    return float(np.sqrt(np.sum(w * field_.values**2)))


@dataclass(frozen=True, eq=False)
class ContinuationResult:
    side: str
    grid: object
    eps: list
    outputs: list
    cauchy_diffs: list
    stop_reason: str
    source_norm: float
    floor: float
    mollified_norms: list = field(default_factory=list)

    @property
    def limit(self) -> SolveOutput:
        return self.outputs[-1]

    def to_dict(self) -> dict:
        return {
            "side": self.side,
            "eps_history": list(self.eps),
            "cauchy_diffs": list(self.cauchy_diffs),
            "stop_reason": self.stop_reason,
            "source_l2": self.source_norm,
            "eps_floor": self.floor,
            "residuals": [o.residual for o in self.outputs],
        }


def _side_grid(problem, side, nx, ny, box=None):
    if isinstance(problem, CanonicalCoefficients):
        extent = problem.y_plus if side == "plus" else problem.y_minus
        top = problem.top if side == "plus" else "dirichlet"
        return StripGrid(nx, ny, extent, side, top)
    return build_cutcell_grid(problem, side, nx, ny, box=box)


def _source_field(problem, grid):
    X, Y = grid.mesh()
    if isinstance(problem, CanonicalCoefficients):
        vals = np.asarray(problem.f(X, Y), dtype=float) * np.ones(grid.shape)
    else:
        vals = np.where(grid.active, problem.source(X, Y), 0.0)
    return GridField(vals, grid)


def run_continuation(problem, side: str, schedule: EpsilonSchedule, nx: int = 128, ny: int = 128,
                     scheme: str = "central", mollify: bool = True, grid=None,
                     box=None) -> ContinuationResult:
    """Solve the regularized problem for the decreasing eps sequence of ``schedule``.

    ``problem`` is a :class:`CanonicalCoefficients` (strip form) or a
    problem specification (cut-cell form). Stops at the first step whose
    L2 change is at most ``cauchy_tol * ||F||`` or when the floor is reached.
    """
    grid = grid if grid is not None else _side_grid(problem, side, nx, ny, box)
    hy = grid.hy if isinstance(grid, StripGrid) else grid.lattice.hy
    floor = schedule.resolved_floor(hy)
    F = _source_field(problem, grid)
    fnorm = l2_norm(F)
    eps_list, outputs, diffs, moll_norms = [], [], [], []
    stop = "floor"
    for eps in schedule.values(hy):
        Fe = mollify_source(F, eps) if mollify else F
        moll_norms.append(l2_norm(Fe))
        try:
            if isinstance(grid, StripGrid):
                op = assemble_strip_operator(problem, eps, side, grid, scheme, source=Fe.values)
            else:
                op = assemble_domain_operator(problem, eps, side, grid, scheme, source=Fe.values)
            x0 = op.from_field(outputs[-1].field) if outputs else None
            out = solve_linear(op, x0=x0)
        except SolverError as exc:
            raise SolverError(f"solve failed at eps={eps:g} ({side} side): {exc}",
                              condition=exc.condition, eps=eps) from exc
        eps_list.append(eps)
        outputs.append(out)
        if len(outputs) > 1:
            diff = l2_norm(outputs[-1].field - outputs[-2].field)
            diffs.append(diff)
            if schedule.cauchy_tol is not None and diff <= schedule.cauchy_tol * fnorm:
                stop = "cauchy"
                break
    log.info("%s side: %d solves, stop=%s", side, len(outputs), stop)
    return ContinuationResult(side, grid, eps_list, outputs, diffs, stop, fnorm, floor, moll_norms)


def run_both_sides(problem, schedule: EpsilonSchedule, nx: int = 128, ny: int = 128,
                   scheme: str = "central", mollify: bool = True, threads: int = 2, box=None,
                   ny_minus: int | None = None) -> dict:
    """Plus and minus continuations, concurrently; results keyed by side."""
    sides = ["plus", "minus"]
    if isinstance(problem, CanonicalCoefficients) and problem.y_minus <= 0:
        sides = ["plus"]

    def job(side):
        nyy = ny_minus if (side == "minus" and ny_minus) else ny
        return run_continuation(problem, side, schedule, nx, nyy, scheme, mollify, box=box)

    if threads > 1 and len(sides) > 1:
        with ThreadPoolExecutor(max_workers=min(threads, len(sides))) as pool:
            futures = {s: pool.submit(job, s) for s in sides}
            return {s: futures[s].result() for s in sides}
    return {s: job(s) for s in sides}


# --------------------------------------------------------------------------
# gluing


@dataclass(frozen=True, eq=False)
class StripPairGrid:
    """Both strip sides stacked: rows run from ``y = -y_minus`` up to ``y = y_plus``."""

    plus: StripGrid
    minus: StripGrid

    kind = "strip-periodic-x-pair"

    @property
    def nx(self):
        return self.plus.nx

    @property
    def hx(self):
        return self.plus.hx

    @property
    def x(self):
        return self.plus.x

    @property
    def y(self):
        return np.concatenate([self.minus.y[::-1], self.plus.y[1:]])

    @property
    def shape(self):
        return (self.minus.ny + self.plus.ny + 1, self.plus.nx)

    @property
    def interface_row(self) -> int:
        return self.minus.ny

    def mesh(self):
        return np.meshgrid(self.x, self.y)

    def weights(self):
        y = self.y
        wy = np.zeros_like(y)
        dy = np.diff(y)
        wy[:-1] += dy / 2
        wy[1:] += dy / 2
        return np.outer(wy, np.full(self.nx, self.hx))

    def describe(self):
        return {"kind": self.kind, "plus": self.plus.describe(), "minus": self.minus.describe()}


@dataclass(frozen=True, eq=False)
class GluedSolution:
    u: GridField
    plus: GridField
    minus: GridField
    trace_mismatch: float
    outer_trace: float
    history: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"trace_mismatch": self.trace_mismatch, "outer_trace": self.outer_trace, **self.history}


def _glue_strips(up, um, tol):
    gp, gm = up.grid, um.grid
    if gp.nx != gm.nx:
        raise GlueError("strip sides use different x resolutions")
    full = StripPairGrid(gp, gm)
    vals = np.concatenate([um.values[::-1], up.values[1:]], axis=0)
    mismatch = float(np.max(np.abs(up.values[0] - um.values[0])))
    trace_gamma = float(max(np.max(np.abs(up.values[0])), np.max(np.abs(um.values[0]))))
    outer = float(np.max(np.abs(um.values[-1])))
    if gp.top == "dirichlet":
        outer = max(outer, float(np.max(np.abs(up.values[-1]))))
    return GridField(vals, full), max(mismatch, trace_gamma), outer


def _glue_cutcell(up, um, full_grid, tol):
    gp, gm = up.grid, um.grid
    lat = gp.lattice
    if (lat.nx, lat.ny, lat.x0, lat.y0) != (gm.lattice.nx, gm.lattice.ny, gm.lattice.x0, gm.lattice.y0):
        raise GlueError("plus and minus fields live on different lattices")
    if np.any(gp.active & gm.active):
        raise GlueError("plus and minus active sets overlap")
    vals = np.where(gp.active, up.values, np.where(gm.active, um.values, 0.0))
    if full_grid is not None:
        vals = np.where(full_grid.active, vals, 0.0)
    bp = up.boundary or gp.boundary_template()
    bm = um.boundary or gm.boundary_template()
    mismatch = 0.0
    outer = 0.0
    for d, (di, dj) in DIRECTIONS.items():
        gam_p = gp.active & (gp.crossing[d] == KIND_GAMMA)
        if gam_p.any():
            mismatch = max(mismatch, float(np.max(np.abs(bp[d][gam_p]))))
            # the same crossing seen from the minus node on the other end of the edge
            j, i = np.nonzero(gam_p)
            jj, ii = j + dj, i + di
            shared = gm.active[jj, ii] & (gm.crossing[OPPOSITE[d]][jj, ii] == KIND_GAMMA)
            if shared.any():
                diff = bp[d][j[shared], i[shared]] - bm[OPPOSITE[d]][jj[shared], ii[shared]]
                mismatch = max(mismatch, float(np.max(np.abs(diff))))
        gam_m = gm.active & (gm.crossing[d] == KIND_GAMMA)
        if gam_m.any():
            mismatch = max(mismatch, float(np.max(np.abs(bm[d][gam_m]))))
        for g, b in ((gp, bp), (gm, bm)):
            out_mask = g.active & (g.crossing[d] == KIND_OUTER)
            if out_mask.any():
                outer = max(outer, float(np.max(np.abs(b[d][out_mask]))))
    grid = full_grid if full_grid is not None else gp
    bnd = None
    if full_grid is not None and isinstance(full_grid, CutCellGrid):
        bnd = full_grid.boundary_template()
        for d in DIRECTIONS:
            bnd[d] = np.where(gp.active, bp[d], np.where(gm.active, bm[d], 0.0))
            bnd[d] = np.where(full_grid.crossing[d] == KIND_OUTER, bnd[d], 0.0)
    return GridField(vals, grid, bnd), mismatch, outer


def glue_solutions(u_plus: GridField, u_minus: GridField, full_grid=None, tol: float = 1e-8,
                   history: dict | None = None) -> GluedSolution:
    """Assemble the global field from the two one-sided limits.

    Both one-sided traces on the interface must vanish and agree; a mismatch
    above ``tol`` raises :class:`GlueError`.
    """
    if isinstance(u_plus.grid, StripGrid):
        u, mismatch, outer = _glue_strips(u_plus, u_minus, tol)
    else:
        u, mismatch, outer = _glue_cutcell(u_plus, u_minus, full_grid, tol)
    if mismatch > tol:
        raise GlueError(f"interface trace mismatch {mismatch:.3e} exceeds {tol:g}")
    if outer > tol:
        raise GlueError(f"outer boundary trace {outer:.3e} exceeds {tol:g}")
    return GluedSolution(u, u_plus, u_minus, mismatch, outer, dict(history or {}))


def restrict(glued: GluedSolution, side: str) -> GridField:
    """The glued field restricted back to one side's grid."""
    src = glued.plus if side == "plus" else glued.minus
    grid = src.grid
    u = glued.u
    if isinstance(grid, StripGrid):
        k = u.grid.interface_row
        vals = u.values[k:] if side == "plus" else u.values[: k + 1][::-1]
        return GridField(vals.copy(), grid, src.boundary)
    vals = np.where(grid.active, u.values, 0.0)
    return GridField(vals, grid, src.boundary)
