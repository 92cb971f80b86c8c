"""Galerkin assembly on THB spaces: heat matrices, loads, field sampling, export.

The physical domain is the square [0, L]^2 (mm); the geometry map from the
parametric unit square is affine, so gradients pull back with 1/L and the
volume element is L^2. All quadrature runs cell by cell over the active cells
with a tensor Gauss rule; per-cell basis tables are cached per space
generation so mass/stiffness are assembled once per mesh and load vectors are
cheap to refresh every time step.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, NamedTuple

import numpy as np
from scipy import sparse

from .errors import DomainError, StalenessError, StructuralError
from .hierarchy import ACTIVE, REFINED, HierarchicalSpace, StateVector
from .splines import CellIndex, FunctionIndex, _ders_basis


@dataclass(frozen=True)
class Geometry:
    """Square plate [0, side_length]^2."""

    side_length: float

    def __post_init__(self):
        if self.side_length <= 0:
            raise DomainError(f"side_length must be positive, got {self.side_length}")

    def to_physical(self, pts_param: np.ndarray) -> np.ndarray:
        return np.asarray(pts_param, dtype=float) * self.side_length

    def to_parametric(self, pts_phys: np.ndarray) -> np.ndarray:
        return np.asarray(pts_phys, dtype=float) / self.side_length


@dataclass(frozen=True)
class Material:
    """Constant isotropic material data (mm-based units)."""

    conductivity: float
    specific_heat: float
    density: float
    initial_temperature: float

    def __post_init__(self):
        for name in ("conductivity", "specific_heat", "density"):
            if getattr(self, name) <= 0:
                raise DomainError(f"{name} must be positive")
        if not math.isfinite(self.initial_temperature):
            raise DomainError("initial_temperature must be finite")

    @property
    def volumetric_heat_capacity(self) -> float:
        return self.specific_heat * self.density


# -- scan paths ----------------------------------------------------------------


@dataclass(frozen=True)
class CircularArc:
    """Beam circling at constant angular speed; never switches off."""

    center: tuple[float, float]
    radius: float
    start_angle: float
    angular_speed: float

    def __post_init__(self):
        if self.radius <= 0:
            raise DomainError("arc radius must be positive")

    @property
    def duration(self) -> float:
        return math.inf

    def position(self, t: float) -> tuple[float, float]:
        a = self.start_angle + self.angular_speed * t
        return (
            self.center[0] + self.radius * math.cos(a),
            self.center[1] + self.radius * math.sin(a),
        )


@dataclass(frozen=True)
class PolylinePath:
    """Waypoints traversed at per-segment speeds; off after the last one."""

    waypoints: tuple[tuple[float, float], ...]
    speeds: tuple[float, ...]

    def __post_init__(self):
        if len(self.waypoints) < 2:
            raise DomainError("polyline needs at least two waypoints")
        if len(self.speeds) != len(self.waypoints) - 1:
            raise DomainError("need one speed per segment")
        if any(s <= 0 for s in self.speeds):
            raise DomainError("segment speeds must be positive")
        times = [0.0]
        for (x0, y0), (x1, y1), v in zip(self.waypoints, self.waypoints[1:], self.speeds):
            times.append(times[-1] + math.hypot(x1 - x0, y1 - y0) / v)
        object.__setattr__(self, "_times", tuple(times))

    @property
    def duration(self) -> float:
        return self._times[-1]

    def position(self, t: float) -> tuple[float, float]:
        times = self._times
        if t <= 0:
            return self.waypoints[0]
        if t >= times[-1]:
            return self.waypoints[-1]
        seg = int(np.searchsorted(times, t, side="right")) - 1
        seg = min(seg, len(self.waypoints) - 2)
        t0, t1 = times[seg], times[seg + 1]
        frac = 0.0 if t1 == t0 else (t - t0) / (t1 - t0)
        (x0, y0), (x1, y1) = self.waypoints[seg], self.waypoints[seg + 1]
        return (x0 + frac * (x1 - x0), y0 + frac * (y1 - y0))


def alternating_tracks(
    origin: tuple[float, float],
    track_length: float,
    hatch: float,
    n_tracks: int,
    speed: float,
) -> PolylinePath:
    """Serpentine raster: direction flips each track, offset by the hatch.

    The hatch hops are traversed at the scan speed, keeping the position
    continuous in time.
    """
    if n_tracks < 1:
        raise DomainError("need at least one track")
    if track_length <= 0 or hatch <= 0:
        raise DomainError("track_length and hatch must be positive")
    x0, y0 = origin
    pts = [(x0, y0)]
    x_far = x0 + track_length
    for k in range(n_tracks):
        y = y0 + k * hatch
        end_x = x_far if k % 2 == 0 else x0
        pts.append((end_x, y))
        if k + 1 < n_tracks:
            pts.append((end_x, y + hatch))
    speeds = tuple(speed for _ in range(len(pts) - 1))
    return PolylinePath(tuple(pts), speeds)


@dataclass(frozen=True)
class HeatSource:
    """Moving Gaussian surface source f = P*eta*exp(-dist^2/r^2) along a path."""

    power: float
    absorptivity: float
    radius: float
    path: object

    def __post_init__(self):
        if self.power < 0:
            raise DomainError("power must be nonnegative")
        if not 0 < self.absorptivity <= 1:
            raise DomainError("absorptivity must be in (0, 1]")
        if self.radius <= 0:
            raise DomainError("radius must be positive")

    def value(self, pts_phys: np.ndarray, t: float) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(pts_phys, dtype=float))
        if t > self.path.duration:
            return np.zeros(pts.shape[0])
        cx, cy = self.path.position(t)
        d2 = (pts[:, 0] - cx) ** 2 + (pts[:, 1] - cy) ** 2
        return self.power * self.absorptivity * np.exp(-d2 / self.radius**2)

    def __call__(self, pts_phys: np.ndarray, t: float) -> np.ndarray:
        return self.value(pts_phys, t)


def source_value(source: HeatSource, t: float, point) -> float:
    """Source intensity at one physical point."""
    return float(source.value(np.asarray(point, dtype=float)[None, :], t)[0])


# -- quadrature tables -----------------------------------------------------------


class CellQuadrature(NamedTuple):
    cell: CellIndex
    cols: np.ndarray        # global dof ids of the functions alive on the cell
    weights: np.ndarray     # physical quadrature weights, shape (nq,)
    points: np.ndarray      # physical points, shape (nq, 2)
    V: np.ndarray           # values, shape (nq, ncols)
    Vx: np.ndarray          # d/dx (physical)
    Vy: np.ndarray
    Vlap: np.ndarray        # physical Laplacian
    h: float                # physical side length


def _direction_tables(kv, n_gauss: int):
    """Per-span Gauss nodes, weights and basis tables for one knot vector."""
    cache = getattr(kv, "_gauss_tables", None)
    if cache is None:
        cache = {}
        kv._gauss_tables = cache
    hit = cache.get(n_gauss)
    if hit is not None:
        return hit
    p = kv.degree
    gx, gw = np.polynomial.legendre.leggauss(n_gauss)
    nodes = np.empty((kv.n_cells, n_gauss))
    weights = np.empty((kv.n_cells, n_gauss))
    values = np.empty((kv.n_cells, 3, p + 1, n_gauss))
    for c in range(kv.n_cells):
        x0, x1 = kv.cell_bounds(c)
        half = 0.5 * (x1 - x0)
        xs = x0 + half * (gx + 1.0)
        nodes[c] = xs
        weights[c] = gw * half
        table = _ders_basis(kv, kv.span_of_cell(c), xs, 2)  # (nq, 3, p+1)
        values[c] = np.transpose(table, (1, 2, 0))
    cache[n_gauss] = (nodes, weights, values)
    return nodes, weights, values


def cell_quadrature(space: HierarchicalSpace, geom: Geometry, n_gauss: int) -> list[CellQuadrature]:
    """Per-active-cell basis tables; cached on the space per generation."""
    cache = space._quad_cache
    if cache is not None and cache[0] == space.generation and cache[1] == (n_gauss, geom.side_length):
        return cache[2]
    mesh = space.mesh
    L = geom.side_length
    p = mesh.degree
    nloc = (p + 1) ** 2
    out: list[CellQuadrature] = []
    for level in range(mesh.max_levels):
        cells = mesh.active_cells(level)
        if not cells:
            continue
        tspace = mesh.space(level)
        nx_t, wx_t, vx_t = _direction_tables(tspace.kv_x, n_gauss)
        ny_t, wy_t, vy_t = _direction_tables(tspace.kv_y, n_gauss)
        C = space.rep_matrix(level).tocsr()
        col_ids = space.rep_columns_global(level)
        for cell in cells:
            i, j = cell.i, cell.j
            vx, vy = vx_t[i], vy_t[j]  # (3, p+1, nq)
            w = np.multiply.outer(wx_t[i], wy_t[j]).ravel() * L * L
            pts = np.column_stack(
                [
                    np.repeat(nx_t[i], n_gauss) * L,
                    np.tile(ny_t[j], n_gauss) * L,
                ]
            )

            def combo(dx: int, dy: int) -> np.ndarray:
                e = np.einsum("aq,bs->qsab", vx[dx], vy[dy])
                return e.reshape(n_gauss * n_gauss, nloc)

            rows = np.array(
                [
                    (i + da) * tspace.n_y + (j + db)
                    for da in range(p + 1)
                    for db in range(p + 1)
                ]
            )
            sub = C[rows]
            local_cols = np.unique(sub.indices)
            C_loc = np.asarray(sub[:, local_cols].todense())
            E0 = combo(0, 0)
            Ex = combo(1, 0)
            Ey = combo(0, 1)
            Elap = combo(2, 0) + combo(0, 2)
            x0, x1 = tspace.kv_x.cell_bounds(i)
            out.append(
                CellQuadrature(
                    cell=cell,
                    cols=col_ids[local_cols],
                    weights=w,
                    points=pts,
                    V=E0 @ C_loc,
                    Vx=(Ex @ C_loc) / L,
                    Vy=(Ey @ C_loc) / L,
                    Vlap=(Elap @ C_loc) / (L * L),
                    h=(x1 - x0) * L,
                )
            )
    space._quad_cache = (space.generation, (n_gauss, geom.side_length), out)
    return out


# -- system assembly ----------------------------------------------------------------


@dataclass
class SystemMatrices:
    """Mass/stiffness pair with the machinery to refresh the load vector."""

    M: sparse.csr_matrix
    K: sparse.csr_matrix
    f: np.ndarray
    dof_map: tuple[FunctionIndex, ...]
    generation: int
    n_gauss: int
    space: HierarchicalSpace = field(repr=False)
    geometry: Geometry = field(repr=False)
    material: Material = field(repr=False)
    source: object = field(repr=False)

    def load_vector(self, t: float) -> np.ndarray:
        cells = cell_quadrature(self.space, self.geometry, self.n_gauss)
        out = np.zeros(len(self.dof_map))
        for cq in cells:
            fv = self.source(cq.points, t)
            out[cq.cols] += cq.V.T @ (cq.weights * fv)
        return out

    def cell_data(self) -> list[CellQuadrature]:
        return cell_quadrature(self.space, self.geometry, self.n_gauss)

    def check_state(self, theta: StateVector) -> None:
        if theta.generation != self.generation:
            raise StalenessError(
                f"state generation {theta.generation} does not match system generation {self.generation}"
            )


def assemble(
    space: HierarchicalSpace,
    geom: Geometry,
    material: Material,
    source,
    t: float,
    n_gauss: int | None = None,
) -> SystemMatrices:
    """Mass, stiffness and the load at time t over the active cells.

    n_gauss defaults to degree+1 points per direction, exact for products of
    the basis functions.
    """
    if n_gauss is None:
        n_gauss = space.degree + 1
    if n_gauss < 1:
        raise DomainError(f"n_gauss must be >= 1, got {n_gauss}")
    cells = cell_quadrature(space, geom, n_gauss)
    n = space.n_dofs
    rows, cols, mv, kv = [], [], [], []
    cap = material.volumetric_heat_capacity
    k_cond = material.conductivity
    f = np.zeros(n)
    for cq in cells:
        wV = cq.weights[:, None] * cq.V
        Me = cap * (cq.V.T @ wV)
        Ke = k_cond * (
            cq.Vx.T @ (cq.weights[:, None] * cq.Vx)
            + cq.Vy.T @ (cq.weights[:, None] * cq.Vy)
        )
        g = cq.cols
        rows.append(np.repeat(g, g.size))
        cols.append(np.tile(g, g.size))
        mv.append(Me.ravel())
        kv.append(Ke.ravel())
        f[g] += cq.V.T @ (cq.weights * source(cq.points, t))
    rows = np.concatenate(rows)
    cols = np.concatenate(cols)
    M = sparse.coo_matrix((np.concatenate(mv), (rows, cols)), shape=(n, n)).tocsr()
    K = sparse.coo_matrix((np.concatenate(kv), (rows, cols)), shape=(n, n)).tocsr()
    return SystemMatrices(
        M=M,
        K=K,
        f=f,
        dof_map=space.dofs,
        generation=space.generation,
        n_gauss=n_gauss,
        space=space,
        geometry=geom,
        material=material,
        source=source,
    )


def gram_matrix(space: HierarchicalSpace, geom: Geometry, n_gauss: int | None = None) -> sparse.csr_matrix:
    """Unscaled L2 Gram matrix of the active basis."""
    if n_gauss is None:
        n_gauss = space.degree + 1
    n = space.n_dofs
    rows, cols, vals = [], [], []
    for cq in cell_quadrature(space, geom, n_gauss):
        Ge = cq.V.T @ (cq.weights[:, None] * cq.V)
        g = cq.cols
        rows.append(np.repeat(g, g.size))
        cols.append(np.tile(g, g.size))
        vals.append(Ge.ravel())
    return sparse.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n)
    ).tocsr()


def moment_vector(
    space: HierarchicalSpace,
    geom: Geometry,
    fieldfn: Callable[[np.ndarray], np.ndarray],
    n_gauss: int | None = None,
) -> np.ndarray:
    """Right-hand side of an L2 projection: integrals of basis * field."""
    if n_gauss is None:
        n_gauss = space.degree + 1
    out = np.zeros(space.n_dofs)
    for cq in cell_quadrature(space, geom, n_gauss):
        out[cq.cols] += cq.V.T @ (cq.weights * np.asarray(fieldfn(cq.points)))
    return out


# -- field evaluation ---------------------------------------------------------------


def _locate_levels(space: HierarchicalSpace, pts_param: np.ndarray):
    """Owning active cell per parametric point, vectorized level descent."""
    mesh = space.mesh
    n = pts_param.shape[0]
    lvl = np.full(n, -1, dtype=int)
    ci = np.zeros(n, dtype=int)
    cj = np.zeros(n, dtype=int)
    undecided = np.ones(n, dtype=bool)
    for level in range(mesh.max_levels):
        if not np.any(undecided):
            break
        tspace = mesh.space(level)
        kx, ky = tspace.kv_x, tspace.kv_y
        p = tspace.degree
        ii = np.clip(
            np.searchsorted(kx.knots, pts_param[:, 0], side="right") - 1 - p,
            0,
            tspace.cells_x - 1,
        )
        jj = np.clip(
            np.searchsorted(ky.knots, pts_param[:, 1], side="right") - 1 - p,
            0,
            tspace.cells_y - 1,
        )
        st = mesh.states[level][ii, jj]
        take = undecided & (st == ACTIVE)
        lvl[take] = level
        ci[take] = ii[take]
        cj[take] = jj[take]
        undecided &= st == REFINED
    if np.any(lvl < 0):
        raise StructuralError("mesh does not cover some sample points")
    return lvl, ci, cj


def evaluate_field_params(space: HierarchicalSpace, coeffs: np.ndarray, pts_param: np.ndarray) -> np.ndarray:
    """THB field values at parametric points (batched by owning cell)."""
    pts_param = np.atleast_2d(np.asarray(pts_param, dtype=float))
    if np.any(pts_param < -1e-12) or np.any(pts_param > 1 + 1e-12):
        raise DomainError("sample points outside the parametric domain")
    pts_param = np.clip(pts_param, 0.0, 1.0)
    mesh = space.mesh
    p = mesh.degree
    lvl, ci, cj = _locate_levels(space, pts_param)
    out = np.empty(pts_param.shape[0])
    tensor_cache: dict[int, np.ndarray] = {}
    key = (lvl.astype(np.int64) << 40) + (ci.astype(np.int64) << 20) + cj.astype(np.int64)
    order = np.argsort(key, kind="stable")
    sorted_key = key[order]
    boundaries = np.flatnonzero(np.diff(sorted_key)) + 1
    for group in np.split(order, boundaries):
        level = int(lvl[group[0]])
        i, j = int(ci[group[0]]), int(cj[group[0]])
        tspace = mesh.space(level)
        if level not in tensor_cache:
            r = space.tensor_coefficients(level, coeffs)
            tensor_cache[level] = r.reshape(tspace.n_x, tspace.n_y)
        r = tensor_cache[level]
        xs = pts_param[group, 0]
        ys = pts_param[group, 1]
        bx = _ders_basis(tspace.kv_x, tspace.kv_x.span_of_cell(i), xs, 0)[:, 0, :]
        by = _ders_basis(tspace.kv_y, tspace.kv_y.span_of_cell(j), ys, 0)[:, 0, :]
        window = r[i : i + p + 1, j : j + p + 1]
        out[group] = np.einsum("na,ab,nb->n", bx, window, by)
    return out


class FieldEvaluator:
    """Evaluate a discrete temperature field at physical points."""

    def __init__(self, space: HierarchicalSpace, theta: StateVector, geom: Geometry) -> None:
        space.check_state(theta)
        self.space = space
        self.coeffs = theta.coeffs
        self.geom = geom

    def __call__(self, pts_phys: np.ndarray) -> np.ndarray:
        pts = self.geom.to_parametric(np.atleast_2d(np.asarray(pts_phys, dtype=float)))
        return evaluate_field_params(self.space, self.coeffs, pts)


def sample_field(space: HierarchicalSpace, geom: Geometry, theta: StateVector, n: int) -> np.ndarray:
    """Field on an n x n uniform physical grid (including both boundaries)."""
    if n < 2:
        raise DomainError(f"sample grid needs n >= 2, got {n}")
    space.check_state(theta)
    axis = np.linspace(0.0, 1.0, n)
    X, Y = np.meshgrid(axis, axis, indexing="ij")
    pts = np.column_stack([X.ravel(), Y.ravel()])
    vals = evaluate_field_params(space, theta.coeffs, pts)
    return vals.reshape(n, n)


# -- export ---------------------------------------------------------------------------


def write_vtk(path, values: np.ndarray, geom: Geometry, name: str = "temperature") -> None:
    """Legacy ASCII STRUCTURED_POINTS file with one scalar field."""
    nx, ny = values.shape
    dx = geom.side_length / (nx - 1)
    dy = geom.side_length / (ny - 1)
    with open(path, "w") as f:
        f.write("# vtk DataFile Version 3.0\n")
        f.write("thbheat temperature field\n")
        f.write("ASCII\n")
        f.write("DATASET STRUCTURED_POINTS\n")
        f.write(f"DIMENSIONS {nx} {ny} 1\n")
        f.write("ORIGIN 0 0 0\n")
        f.write(f"SPACING {dx!r} {dy!r} 1\n")
        f.write(f"POINT_DATA {nx * ny}\n")
        f.write(f"SCALARS {name} double\n")
        f.write("LOOKUP_TABLE default\n")
        for j in range(ny):
            for i in range(nx):
                f.write(f"{float(values[i, j])!r}\n")


def write_field_csv(path, values: np.ndarray, geom: Geometry) -> None:
    """Flat x,y,value rows over the sample grid."""
    nx, ny = values.shape
    xs = np.linspace(0.0, geom.side_length, nx)
    ys = np.linspace(0.0, geom.side_length, ny)
    with open(path, "w") as f:
        f.write("x,y,value\n")
        for j in range(ny):
            for i in range(nx):
                f.write(f"{float(xs[i])!r},{float(ys[j])!r},{float(values[i, j])!r}\n")
