"""Structured grids and sampled fields.

Two grid families are used:

* :class:`StripGrid` -- periodic in ``x`` on ``[-pi, pi)``, uniform in the
  distance ``z = |y|`` from the degenerate line. Row ``j`` sits at ``z = j*hy``;
  the minus side stores ``y = -z`` so that one assembly path serves both sides.
* :class:`CutCellGrid` -- a Cartesian lattice restricted to one side of the
  interface (or to the whole domain). Nodes next to a curved boundary carry
  shortened legs to the boundary crossing, Shortley-Weller style.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

DIRECTIONS = {"E": (1, 0), "W": (-1, 0), "N": (0, 1), "S": (0, -1)}
KIND_NONE, KIND_GAMMA, KIND_OUTER = 0, 1, 2


class GridError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class StripGrid:
    nx: int
    ny: int
    extent: float
    side: str = "plus"
    top: str = "dirichlet"

    kind = "strip-periodic-x"

    def __post_init__(self):
        if self.nx < 4 or self.ny < 2:
            raise GridError("strip grid needs nx >= 4 and ny >= 2")
        if self.extent <= 0:
            raise GridError("strip extent must be positive")
        if self.side not in ("plus", "minus"):
            raise GridError(f"unknown side {self.side!r}")
        if self.top not in ("dirichlet", "neumann"):
            raise GridError(f"unknown top condition {self.top!r}")

    @property
    def hx(self) -> float:
        return 2 * np.pi / self.nx

    @property
    def hy(self) -> float:
        return self.extent / self.ny

    @property
    def sign(self) -> float:
        return 1.0 if self.side == "plus" else -1.0

    @property
    def x(self) -> np.ndarray:
        return -np.pi + self.hx * np.arange(self.nx)

    @property
    def z(self) -> np.ndarray:
        return self.hy * np.arange(self.ny + 1)

    @property
    def y(self) -> np.ndarray:
        return self.sign * self.z

    @property
    def shape(self):
        return (self.ny + 1, self.nx)

    def mesh(self):
        """Node coordinates ``(X, Y)`` in canonical variables, shape ``(ny+1, nx)``."""
        return np.meshgrid(self.x, self.y)

    def dirichlet_mask(self) -> np.ndarray:
        mask = np.zeros(self.shape, dtype=bool)
        mask[0] = True
        if self.top == "dirichlet":
            mask[-1] = True
        return mask

    def weights(self) -> np.ndarray:
        wy = np.full(self.ny + 1, self.hy)
        wy[0] = wy[-1] = self.hy / 2
        return np.outer(wy, np.full(self.nx, self.hx))

    def describe(self) -> dict:
        return {
            "kind": self.kind,
            "nx": self.nx,
            "ny": self.ny,
            "extent": self.extent,
            "side": self.side,
            "top": self.top,
            "spacings": [self.hx, self.hy],
        }


@dataclass(frozen=True, eq=False)
class Lattice:
    x0: float
    y0: float
    hx: float
    hy: float
    nx: int  # intervals
    ny: int

    kind = "cartesian"

    @classmethod
    def covering(cls, box, nx: int, ny: int) -> "Lattice":
        xmin, xmax, ymin, ymax = box
        if xmax <= xmin or ymax <= ymin:
            raise GridError(f"degenerate bounding box {box}")
        return cls(xmin, ymin, (xmax - xmin) / nx, (ymax - ymin) / ny, nx, ny)

    @property
    def shape(self):
        return (self.ny + 1, self.nx + 1)

    @property
    def x(self):
        return self.x0 + self.hx * np.arange(self.nx + 1)

    @property
    def y(self):
        return self.y0 + self.hy * np.arange(self.ny + 1)

    def mesh(self):
        return np.meshgrid(self.x, self.y)

    def spacing(self, direction: str) -> float:
        return self.hx if direction in ("E", "W") else self.hy

    def describe(self) -> dict:
        return {
            "kind": self.kind,
            "origin": [self.x0, self.y0],
            "spacings": [self.hx, self.hy],
            "nx": self.nx,
            "ny": self.ny,
        }


def shift(a: np.ndarray, direction: str, fill=0):
    """Value of the neighbour in ``direction`` at every node (``fill`` off-lattice)."""
    di, dj = DIRECTIONS[direction]
    out = np.full_like(a, fill)
    ny, nx = a.shape
    src_j = slice(max(dj, 0), ny + min(dj, 0))
    dst_j = slice(max(-dj, 0), ny + min(-dj, 0))
    src_i = slice(max(di, 0), nx + min(di, 0))
    dst_i = slice(max(-di, 0), nx + min(-di, 0))
    out[dst_j, dst_i] = a[src_j, src_i]
    return out


def _segment_root(fn, x, y, dx, dy, iterations=60):
    """Largest-accuracy root of ``fn`` on each segment, fn > 0 at t=0 and <= 0 at t=1."""
    lo = np.zeros_like(x)
    hi = np.ones_like(x)
    for _ in range(iterations):
        mid = 0.5 * (lo + hi)
        pos = fn(x + mid * dx, y + mid * dy) > 0
        lo = np.where(pos, mid, lo)
        hi = np.where(pos, hi, mid)
    return hi


@dataclass(frozen=True, eq=False)
class CutCellGrid:
    """Lattice nodes of one region plus boundary legs.

    ``legs[d]`` is the fraction of the lattice spacing from a node to its
    neighbour in direction ``d``; it is 1 when the neighbour is active and the
    fractional distance to the boundary crossing otherwise. ``crossing[d]``
    tells which boundary was crossed (``KIND_GAMMA`` or ``KIND_OUTER``).
    """

    lattice: Lattice
    side: str
    active: np.ndarray
    index: np.ndarray
    legs: dict
    crossing: dict
    weights: np.ndarray = field(repr=False)

    kind = "cartesian-cutcell"

    @property
    def shape(self):
        return self.lattice.shape

    @property
    def n_active(self) -> int:
        return int(self.active.sum())

    def mesh(self):
        return self.lattice.mesh()

    def describe(self) -> dict:
        lat = self.lattice
        return {
            "kind": self.kind,
            "side": self.side,
            "origin": [lat.x0, lat.y0],
            "spacings": [lat.hx, lat.hy],
            "nx": lat.nx,
            "ny": lat.ny,
            "n_active": self.n_active,
        }

    def boundary_template(self) -> dict:
        return {d: np.zeros(self.shape) for d in DIRECTIONS}

    def crossing_points(self, direction: str, kind: int | None = None):
        """Coordinates of the boundary crossings leaving active nodes in ``direction``."""
        mask = self.active & (self.crossing[direction] != KIND_NONE)
        if kind is not None:
            mask &= self.crossing[direction] == kind
        X, Y = self.mesh()
        di, dj = DIRECTIONS[direction]
        t = self.legs[direction][mask]
        return mask, X[mask] + di * t * self.lattice.hx, Y[mask] + dj * t * self.lattice.hy


def region_levels(spec, side: str, X, Y):
    """Signed functions whose positivity defines the region of ``side``."""
    phi = spec.phi(X, Y)
    out = spec.outer.level(X, Y)
    if side == "plus":
        return phi, out
    if side == "minus":
        return -phi, out
    if side == "full":
        return None, out
    raise GridError(f"unknown side {side!r}")


def build_cutcell_grid(spec, side: str, nx: int, ny: int, box=None, sub: int = 4) -> CutCellGrid:
    """Restrict the lattice over ``box`` to the region of ``side`` and compute boundary legs."""
    lattice = Lattice.covering(box if box is not None else spec.box, nx, ny)
    X, Y = lattice.mesh()
    gam, out = region_levels(spec, side, X, Y)
    inside = out > 0
    active = inside & (gam > 0) if gam is not None else inside.copy()
    if not active.any():
        raise GridError(f"no lattice node lies in the {side} region; refine the grid")

    sign = {"plus": 1.0, "minus": -1.0}.get(side)

    def gam_fn(x, y):
        return sign * spec.phi(x, y)

    legs, crossing = {}, {}
    for d, (di, dj) in DIRECTIONS.items():
        nbr = shift(active, d, fill=False)
        leg = np.ones(lattice.shape)
        kind = np.zeros(lattice.shape, dtype=np.int8)
        cut = active & ~nbr
        if cut.any():
            xs, ys = X[cut], Y[cut]
            dx, dy = di * lattice.hx, dj * lattice.hy
            xe, ye = xs + dx, ys + dy
            t_best = np.full(xs.shape, np.inf)
            k_best = np.zeros(xs.shape, dtype=np.int8)
            tests = [(spec.outer.level, KIND_OUTER)]
            if gam is not None:
                tests.insert(0, (gam_fn, KIND_GAMMA))
            for fn, k in tests:
                crosses = fn(xe, ye) <= 0
                if crosses.any():
                    t = np.full(xs.shape, np.inf)
                    t[crosses] = _segment_root(fn, xs[crosses], ys[crosses], dx, dy)
                    better = t < t_best
                    t_best = np.where(better, t, t_best)
                    k_best = np.where(better, k, k_best)
            if not np.isfinite(t_best).all():
                raise GridError("region touches the lattice edge; enlarge the bounding box")
            leg[cut] = t_best
            kind[cut] = k_best
        legs[d] = leg
        crossing[d] = kind

    n_cut = sum((crossing[d] != KIND_NONE).astype(int) for d in DIRECTIONS)
    if np.any(active & (n_cut == 4)):
        raise GridError("grid too coarse: isolated node between boundaries; refine the grid")

    index = np.full(lattice.shape, -1, dtype=np.int64)
    index[active] = np.arange(int(active.sum()))
    weights = _volume_fractions(spec, side, lattice, sub) * lattice.hx * lattice.hy
    return CutCellGrid(lattice, side, active, index, legs, crossing, weights)


def _volume_fractions(spec, side, lattice: Lattice, sub: int) -> np.ndarray:
    X, Y = lattice.mesh()
    offs = (np.arange(sub) + 0.5) / sub - 0.5
    frac = np.zeros(lattice.shape)
    for ox in offs:
        for oy in offs:
            gam, out = region_levels(spec, side, X + ox * lattice.hx, Y + oy * lattice.hy)
            inside = out > 0
            if gam is not None:
                inside &= gam > 0
            frac += inside
    return frac / sub**2


@dataclass(frozen=True, eq=False)
class GridField:
    """Scalar samples on a grid.

    ``boundary`` holds, for cut-cell grids, the values prescribed at boundary
    crossings keyed by direction (arrays shaped like the lattice).
    """

    values: np.ndarray
    grid: object
    boundary: dict | None = None

    def __post_init__(self):
        if tuple(self.values.shape) != tuple(self.grid.shape):
            raise GridError(f"field shape {self.values.shape} does not match grid {self.grid.shape}")

    def with_values(self, values) -> "GridField":
        return GridField(np.asarray(values, dtype=float), self.grid, self.boundary)

    def __mul__(self, t):
        bnd = None if self.boundary is None else {d: t * v for d, v in self.boundary.items()}
        return GridField(self.values * t, self.grid, bnd)

    __rmul__ = __mul__

    def __add__(self, other: "GridField"):
        if other.grid is not self.grid:
            raise GridError("cannot add fields on different grids")
        bnd = None
        if self.boundary is not None or other.boundary is not None:
            z = {d: 0.0 for d in DIRECTIONS}
            a = self.boundary or z
            b = other.boundary or z
            bnd = {d: a[d] + b[d] for d in DIRECTIONS}
        return GridField(self.values + other.values, self.grid, bnd)

    def __sub__(self, other: "GridField"):
        return self + (-1.0) * other


def zero_field(grid) -> GridField:
    bnd = grid.boundary_template() if isinstance(grid, CutCellGrid) else None
    return GridField(np.zeros(grid.shape), grid, bnd)


# --------------------------------------------------------------------------
# serialization: flat little-endian float64 + JSON sidecar


def save_field(field_: GridField, stem, extra: dict | None = None) -> Path:
    stem = Path(stem)
    stem.parent.mkdir(parents=True, exist_ok=True)
    values = np.ascontiguousarray(field_.values, dtype="<f8")
    stem.with_suffix(".bin").write_bytes(values.tobytes(order="C"))
    meta = dict(field_.grid.describe())
    meta["shape"] = list(values.shape)
    meta["dtype"] = "float64-le"
    meta["order"] = "row-major"
    if field_.boundary is not None:
        entries = []
        for d in DIRECTIONS:
            jj, ii = np.nonzero(field_.grid.active & (field_.grid.crossing[d] != KIND_NONE))
            vals = field_.boundary[d][jj, ii]
            entries.extend([int(j), int(i), d, float(v)] for j, i, v in zip(jj, ii, vals))
        meta["boundary_values"] = entries
    if extra:
        meta.update(extra)
    sidecar = stem.with_suffix(".json")
    sidecar.write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    return sidecar


def load_field_values(stem):
    """Return ``(values, meta)`` from a binary + sidecar pair."""
    stem = Path(stem)
    if stem.suffix in (".json", ".bin"):
        stem = stem.with_suffix("")
    meta = json.loads(stem.with_suffix(".json").read_text())
    raw = np.frombuffer(stem.with_suffix(".bin").read_bytes(), dtype="<f8")
    return raw.reshape(meta["shape"]).copy(), meta


def attach(values: np.ndarray, meta: dict, grid) -> GridField:
    bnd = None
    if isinstance(grid, CutCellGrid):
        bnd = grid.boundary_template()
        for j, i, d, v in meta.get("boundary_values", []):
            bnd[d][j, i] = v
    return GridField(values, grid, bnd)


def export_csv(field_: GridField, path) -> None:
    grid = field_.grid
    X, Y = grid.mesh()
    if isinstance(grid, CutCellGrid):
        mask = grid.active
    else:
        mask = np.ones(grid.shape, dtype=bool)
    rows = np.column_stack([X[mask], Y[mask], field_.values[mask]])
    with open(path, "w") as fh:
        fh.write("x,y,value\n")
        for x, y, v in rows:
            fh.write(f"{x!r},{y!r},{v!r}\n")
