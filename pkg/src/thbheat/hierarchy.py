"""Hierarchical meshes and truncated hierarchical B-spline (THB) spaces.

A hierarchy is a chain of dyadically refined tensor spaces on [0, 1]^2. Each
level stores a cell-state grid: ACTIVE cells form the mesh, REFINED cells have
been subdivided (their four children belong to the next level), OUTSIDE cells
are not part of the level's domain. The domain of level l+1 is exactly the
union of the REFINED cells of level l.

A tensor B-spline of level l is active when its support lies inside the
level-l domain but not inside the level-(l+1) domain and it sees at least one
active cell. Truncation is carried as one sparse matrix per level: rows are
the level-k tensor functions, columns the active functions of level <= k that
are still nonzero somewhere on level k. On an active level-k cell, a truncated
function coincides with the tensor spline whose coefficients are its column,
so all evaluation and assembly happen through these matrices without ever
expanding to the finest level. Columns whose support stops meeting the next
level's domain are dropped from the chain; the two-scale coefficients of
B-splines are nonnegative, so a dropped function really is zero from there on.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy import sparse

from .errors import DomainError, StalenessError, StructuralError
from .splines import (
    CellIndex,
    FunctionIndex,
    TensorSpace,
    eval_basis,
    find_span,
    refinement_matrix_1d,
)

OUTSIDE = 0
ACTIVE = 1
REFINED = 2


def _window_any(mask: np.ndarray, n_ox: int, n_oy: int, lo: int, hi: int) -> np.ndarray:
    """For each origin (a, b): is any entry of mask[a+lo : a+hi+1, b+lo : b+hi+1] true?

    Windows are clipped to the mask; used with function origins over cell
    grids (lo=-p, hi=0) and cell origins over function grids (lo=0, hi=p).
    """
    ncx, ncy = mask.shape
    P = np.zeros((ncx + 1, ncy + 1), dtype=np.int64)
    P[1:, 1:] = np.cumsum(np.cumsum(mask, axis=0), axis=1)
    i0 = np.clip(np.arange(n_ox) + lo, 0, ncx - 1)
    i1 = np.clip(np.arange(n_ox) + hi, 0, ncx - 1)
    j0 = np.clip(np.arange(n_oy) + lo, 0, ncy - 1)
    j1 = np.clip(np.arange(n_oy) + hi, 0, ncy - 1)
    count = (
        P[np.ix_(i1 + 1, j1 + 1)]
        - P[np.ix_(i0, j1 + 1)]
        - P[np.ix_(i1 + 1, j0)]
        + P[np.ix_(i0, j0)]
    )
    return count > 0


def _window_all(mask: np.ndarray, n_ox: int, n_oy: int, lo: int, hi: int) -> np.ndarray:
    return ~_window_any(~mask, n_ox, n_oy, lo, hi)


def _slide_extreme(grid: np.ndarray, n_o: int, lo: int, hi: int, axis: int, take_min: bool) -> np.ndarray:
    """Windowed min/max of grid over [o+lo, o+hi] (clipped) along one axis."""
    n_src = grid.shape[axis]
    shape = list(grid.shape)
    shape[axis] = n_o
    out = np.full(shape, np.inf if take_min else -np.inf)
    for off in range(lo, hi + 1):
        o_lo = max(0, -off)
        o_hi = min(n_o - 1, n_src - 1 - off)
        if o_lo > o_hi:
            continue
        sl_o = [slice(None)] * grid.ndim
        sl_s = [slice(None)] * grid.ndim
        sl_o[axis] = slice(o_lo, o_hi + 1)
        sl_s[axis] = slice(o_lo + off, o_hi + off + 1)
        piece = grid[tuple(sl_s)]
        cur = out[tuple(sl_o)]
        out[tuple(sl_o)] = np.minimum(cur, piece) if take_min else np.maximum(cur, piece)
    return out


@dataclass(frozen=True)
class StateVector:
    """Coefficients on the active THB functions of one space generation."""

    coeffs: np.ndarray
    t: float
    generation: int

    def __post_init__(self):
        object.__setattr__(self, "coeffs", np.asarray(self.coeffs, dtype=float))


class HierarchicalMesh:
    """Cell-state grids for every level of the dyadic chain."""

    def __init__(self, base: TensorSpace, max_levels: int) -> None:
        if max_levels < 1:
            raise DomainError(f"max_levels must be >= 1, got {max_levels}")
        if base.level != 0:
            raise StructuralError("base space must carry level 0")
        self.max_levels = max_levels
        self.spaces = [base]
        for _ in range(max_levels - 1):
            self.spaces.append(self.spaces[-1].refine())
        self.states = [
            np.full((s.cells_x, s.cells_y), OUTSIDE, dtype=np.uint8) for s in self.spaces
        ]
        self.states[0][:, :] = ACTIVE
        self._two_scale_2d: dict[int, sparse.csr_matrix] = {}

    # -- queries ------------------------------------------------------------

    @property
    def degree(self) -> int:
        return self.spaces[0].degree

    def space(self, level: int) -> TensorSpace:
        return self.spaces[level]

    def state(self, cell: CellIndex) -> int:
        return int(self.states[cell.level][cell.i, cell.j])

    def is_active(self, cell: CellIndex) -> bool:
        return self.state(cell) == ACTIVE

    def active_cells(self, level: int) -> list[CellIndex]:
        idx = np.argwhere(self.states[level] == ACTIVE)
        return [CellIndex(level, int(i), int(j)) for i, j in idx]

    def all_active_cells(self) -> list[CellIndex]:
        out: list[CellIndex] = []
        for level in range(self.max_levels):
            out.extend(self.active_cells(level))
        return out

    def active_counts(self) -> list[int]:
        return [int(np.count_nonzero(s == ACTIVE)) for s in self.states]

    def deepest_level(self) -> int:
        """Deepest level whose domain is nonempty."""
        deepest = 0
        for level in range(self.max_levels):
            if np.any(self.states[level] != OUTSIDE):
                deepest = level
        return deepest

    def deepest_active_level(self) -> int:
        deepest = 0
        for level in range(self.max_levels):
            if np.any(self.states[level] == ACTIVE):
                deepest = level
        return deepest

    def covered_area_units(self) -> int:
        """Active-cell area in units of finest-level cells (exact integers)."""
        total = 0
        for level, s in enumerate(self.states):
            total += int(np.count_nonzero(s == ACTIVE)) * 4 ** (self.max_levels - 1 - level)
        return total

    def total_area_units(self) -> int:
        base = self.spaces[0]
        return base.cells_x * base.cells_y * 4 ** (self.max_levels - 1)

    def children(self, cell: CellIndex) -> list[CellIndex]:
        if cell.level + 1 >= self.max_levels:
            raise DomainError(f"cell {cell} has no child level")
        return [
            CellIndex(cell.level + 1, 2 * cell.i + di, 2 * cell.j + dj)
            for di in (0, 1)
            for dj in (0, 1)
        ]

    def parent(self, cell: CellIndex) -> CellIndex:
        if cell.level == 0:
            raise DomainError("level-0 cells have no parent")
        return CellIndex(cell.level - 1, cell.i // 2, cell.j // 2)

    def _check_cell(self, cell: CellIndex) -> None:
        if not (0 <= cell.level < self.max_levels):
            raise StructuralError(f"cell level {cell.level} outside hierarchy")
        self.spaces[cell.level]._check_cell(cell)

    # -- mutations (raw: no space rebuild) -----------------------------------

    def subdivide_raw(self, cell: CellIndex) -> None:
        self._check_cell(cell)
        if self.state(cell) != ACTIVE:
            raise StructuralError(f"cannot subdivide non-active cell {cell}")
        if cell.level + 1 >= self.max_levels:
            raise DomainError(f"cell {cell} is at the deepest level, capacity {self.max_levels}")
        self.states[cell.level][cell.i, cell.j] = REFINED
        for child in self.children(cell):
            assert self.state(child) == OUTSIDE
            self.states[child.level][child.i, child.j] = ACTIVE

    def reactivate_raw(self, cell: CellIndex) -> None:
        self._check_cell(cell)
        if self.state(cell) != REFINED:
            raise StructuralError(f"cannot reactivate non-refined cell {cell}")
        kids = self.children(cell)
        if any(self.state(c) != ACTIVE for c in kids):
            raise StructuralError(f"cannot reactivate {cell}: children not all active")
        for child in kids:
            self.states[child.level][child.i, child.j] = OUTSIDE
        self.states[cell.level][cell.i, cell.j] = ACTIVE

    def two_scale_2d(self, level: int) -> sparse.csr_matrix:
        """Fine-by-coarse tensor two-scale matrix between level and level+1."""
        if level not in self._two_scale_2d:
            coarse, fine = self.spaces[level], self.spaces[level + 1]
            ax = refinement_matrix_1d(coarse.kv_x, fine.kv_x)
            ay = refinement_matrix_1d(coarse.kv_y, fine.kv_y)
            self._two_scale_2d[level] = sparse.kron(ax, ay).tocsr()
        return self._two_scale_2d[level]

    def clone(self) -> "HierarchicalMesh":
        other = object.__new__(HierarchicalMesh)
        other.max_levels = self.max_levels
        other.spaces = self.spaces
        other.states = [s.copy() for s in self.states]
        other._two_scale_2d = self._two_scale_2d
        return other


class HierarchicalSpace:
    """Active THB functions of a hierarchical mesh plus truncation matrices."""

    def __init__(self, mesh: HierarchicalMesh) -> None:
        self.mesh = mesh
        self.generation = 0
        self._quad_cache = None
        self.rebuild(bump=False)

    # -- derived state --------------------------------------------------------

    def rebuild(self, bump: bool = True) -> None:
        """Re-derive active functions and truncation matrices from the mesh."""
        mesh = self.mesh
        p = mesh.degree
        deepest = mesh.deepest_level()

        active_masks: list[np.ndarray] = []
        rep: list[sparse.csc_matrix | None] = []
        cols_fns: list[list[FunctionIndex]] = []

        carried: sparse.csc_matrix | None = None
        carried_fns: list[FunctionIndex] = []
        for level in range(mesh.max_levels):
            space = mesh.space(level)
            states = mesh.states[level]
            if level > deepest:
                active_masks.append(np.zeros((space.n_x, space.n_y), dtype=bool))
                rep.append(None)
                cols_fns.append([])
                continue

            in_dom = states != OUTSIDE
            act = states == ACTIVE
            mask = _window_all(in_dom, space.n_x, space.n_y, -p, 0) & _window_any(
                act, space.n_x, space.n_y, -p, 0
            )
            active_masks.append(mask)

            own = [FunctionIndex(level, int(a), int(b)) for a, b in np.argwhere(mask)]
            n_rows = space.n_functions
            own_rows = np.array([a * space.n_y + b for _, a, b in own], dtype=int)
            eye_cols = sparse.csc_matrix(
                (np.ones(len(own)), (own_rows, np.arange(len(own)))),
                shape=(n_rows, len(own)),
            )

            if level == 0:
                C = eye_cols
                fns = list(own)
            else:
                prev_space = mesh.space(level - 1)
                S2 = mesh.two_scale_2d(level - 1)
                prop = (S2 @ carried).tocsc() if carried is not None and carried.shape[1] else None
                if prop is not None:
                    # truncate: zero rows of level-l functions supported in the
                    # level-l domain's refined continuation, i.e. fully inside
                    # this level's domain
                    zero_mask = _window_all(in_dom, space.n_x, space.n_y, -p, 0)
                    keep_rows = (~zero_mask).ravel().astype(float)
                    prop = sparse.diags(keep_rows) @ prop
                    prop.eliminate_zeros()
                    C = sparse.hstack([prop, eye_cols], format="csc")
                    fns = carried_fns + own
                else:
                    C = eye_cols
                    fns = list(own)

            rep.append(C)
            cols_fns.append(fns)

            # prepare carried columns for the next level: drop functions whose
            # support no longer meets the refined region
            if level < mesh.max_levels - 1:
                refined = states == REFINED
                if np.any(refined):
                    row_touch = _window_any(refined, space.n_x, space.n_y, -p, 0)
                    touch = (abs(C).T @ row_touch.ravel().astype(float)) > 0
                    keep_idx = np.flatnonzero(touch)
                    carried = C[:, keep_idx].tocsc()
                    carried_fns = [fns[int(k)] for k in keep_idx]
                else:
                    carried = None
                    carried_fns = []

        self.active_masks = active_masks
        self._rep = rep
        self._cols_fns = cols_fns

        dofs: list[FunctionIndex] = []
        for level in range(mesh.max_levels):
            dofs.extend(
                FunctionIndex(level, int(a), int(b))
                for a, b in np.argwhere(active_masks[level])
            )
        self.dofs = tuple(dofs)
        self.dof_pos = {fn: k for k, fn in enumerate(self.dofs)}
        self.n_dofs = len(self.dofs)
        self._cols_global = [
            np.array([self.dof_pos[fn] for fn in fns], dtype=int) for fns in self._cols_fns
        ]
        self._cols_levels = [
            np.array([fn.level for fn in fns], dtype=int) for fns in self._cols_fns
        ]
        self._quad_cache = None
        if bump:
            self.generation += 1

    # -- queries --------------------------------------------------------------

    @property
    def degree(self) -> int:
        return self.mesh.degree

    def function_is_active(self, fn: FunctionIndex) -> bool:
        if not (0 <= fn.level < self.mesh.max_levels):
            return False
        mask = self.active_masks[fn.level]
        if not (0 <= fn.a < mask.shape[0] and 0 <= fn.b < mask.shape[1]):
            raise DomainError(f"function index {fn} out of range")
        return bool(mask[fn.a, fn.b])

    def active_functions(self, level: int) -> list[FunctionIndex]:
        return [
            FunctionIndex(level, int(a), int(b))
            for a, b in np.argwhere(self.active_masks[level])
        ]

    def rep_matrix(self, level: int) -> sparse.csc_matrix | None:
        """Level-level representation: rows are level-k tensor functions,
        columns active functions acting on that level."""
        return self._rep[level]

    def rep_columns(self, level: int) -> list[FunctionIndex]:
        return self._cols_fns[level]

    def rep_columns_global(self, level: int) -> np.ndarray:
        return self._cols_global[level]

    def tensor_coefficients(self, level: int, coeffs: np.ndarray) -> np.ndarray:
        """Level-k tensor-spline coefficients that reproduce the field on
        active level-k cells."""
        C = self._rep[level]
        if C is None:
            raise StructuralError(f"level {level} carries no functions")
        return np.asarray(C @ coeffs[self._cols_global[level]]).ravel()

    def check_state(self, theta: StateVector) -> None:
        if theta.generation != self.generation:
            raise StalenessError(
                f"state generation {theta.generation} does not match space generation {self.generation}"
            )
        if theta.coeffs.shape != (self.n_dofs,):
            raise StructuralError(
                f"state length {theta.coeffs.shape} does not match {self.n_dofs} dofs"
            )

    def constant_state(self, value: float, t: float = 0.0) -> StateVector:
        """THB functions form a partition of unity, so constants are exact."""
        return StateVector(np.full(self.n_dofs, float(value)), t, self.generation)

    def clone(self) -> "HierarchicalSpace":
        other = object.__new__(HierarchicalSpace)
        other.mesh = self.mesh.clone()
        other.generation = self.generation
        other.active_masks = self.active_masks
        other._rep = self._rep
        other._cols_fns = self._cols_fns
        other._cols_global = self._cols_global
        other._cols_levels = self._cols_levels
        other.dofs = self.dofs
        other.dof_pos = self.dof_pos
        other.n_dofs = self.n_dofs
        other._quad_cache = self._quad_cache
        return other


def build_initial(base: TensorSpace, max_levels: int) -> tuple[HierarchicalMesh, HierarchicalSpace]:
    """All-active level 0; deeper levels empty."""
    mesh = HierarchicalMesh(base, max_levels)
    return mesh, HierarchicalSpace(mesh)


# -- neighborhoods ------------------------------------------------------------


def support_extension(mesh: HierarchicalMesh, cell: CellIndex, k: int) -> set[CellIndex]:
    """Level-k cells within the supports of the level-k functions seen by cell.

    Overlaps count only with positive measure. For k < level the cell is first
    replaced by its level-k ancestor; the result is the (2p+1)-wide block
    around it, clipped at the boundary.
    """
    mesh._check_cell(cell)
    if not 0 <= k <= cell.level:
        raise DomainError(f"support extension level {k} not in 0..{cell.level}")
    shift = cell.level - k
    ai, aj = cell.i >> shift, cell.j >> shift
    space = mesh.space(k)
    p = mesh.degree
    i0, i1 = max(0, ai - p), min(space.cells_x - 1, ai + p)
    j0, j1 = max(0, aj - p), min(space.cells_y - 1, aj + p)
    return {
        CellIndex(k, i, j) for i in range(i0, i1 + 1) for j in range(j0, j1 + 1)
    }


def refinement_neighborhood(mesh: HierarchicalMesh, cell: CellIndex, m: int) -> set[CellIndex]:
    """Active cells of level level-m+1 that must be refined before cell."""
    if m < 2:
        raise DomainError(f"admissibility class must be >= 2, got {m}")
    target = cell.level - m + 1
    if target < 0:
        return set()
    ext = support_extension(mesh, cell, cell.level - m + 2)
    states = mesh.states[target]
    out = set()
    for q in ext:
        pi, pj = q.i >> 1, q.j >> 1
        if states[pi, pj] == ACTIVE:
            out.add(CellIndex(target, pi, pj))
    return out


def coarsening_neighborhood(mesh: HierarchicalMesh, cell: CellIndex, m: int) -> set[CellIndex]:
    """Active cells of level level+m inside the support extensions of cell's children.

    Nonempty iff reactivating the cell would break class-m admissibility.
    """
    if m < 2:
        raise DomainError(f"admissibility class must be >= 2, got {m}")
    mesh._check_cell(cell)
    target = cell.level + m
    if target >= mesh.max_levels or cell.level + 1 >= mesh.max_levels:
        return set()
    child_space = mesh.space(cell.level + 1)
    p = mesh.degree
    # union of the children's same-level support extensions is one rectangle
    i0 = max(0, 2 * cell.i - p)
    i1 = min(child_space.cells_x - 1, 2 * cell.i + 1 + p)
    j0 = max(0, 2 * cell.j - p)
    j1 = min(child_space.cells_y - 1, 2 * cell.j + 1 + p)
    f = 1 << (m - 1)
    states = mesh.states[target]
    sub = states[i0 * f : (i1 + 1) * f, j0 * f : (j1 + 1) * f]
    out = set()
    for di, dj in np.argwhere(sub == ACTIVE):
        out.add(CellIndex(target, i0 * f + int(di), j0 * f + int(dj)))
    return out


# -- public single-cell mutations ----------------------------------------------


def subdivide_cell(mesh: HierarchicalMesh, space: HierarchicalSpace, cell: CellIndex) -> None:
    """Replace an active cell by its four children and refresh the space."""
    mesh.subdivide_raw(cell)
    space.rebuild()


def reactivate_cell(mesh: HierarchicalMesh, space: HierarchicalSpace, cell: CellIndex) -> None:
    """Replace four active children by their parent and refresh the space."""
    mesh.reactivate_raw(cell)
    space.rebuild()


# -- evaluation -----------------------------------------------------------------


def locate_cell(mesh: HierarchicalMesh, x: float, y: float) -> CellIndex:
    """Active cell containing the parametric point (ties go to the deeper cell)."""
    if not (0.0 <= x <= 1.0 and 0.0 <= y <= 1.0):
        raise DomainError(f"point ({x}, {y}) outside the unit square")
    for level in range(mesh.max_levels):
        space = mesh.space(level)
        i = space.kv_x.cell_of_span(find_span(space.kv_x, x))
        j = space.kv_y.cell_of_span(find_span(space.kv_y, y))
        state = mesh.states[level][i, j]
        if state == ACTIVE:
            return CellIndex(level, i, j)
        if state == OUTSIDE:
            break
    raise StructuralError(f"mesh does not cover point ({x}, {y})")


class THBFunctionValue(NamedTuple):
    fn: FunctionIndex
    value: float
    gradient: np.ndarray
    hessian: np.ndarray


def thb_eval(space: HierarchicalSpace, point, deriv_order: int = 0) -> list[THBFunctionValue]:
    """Active functions not vanishing at a parametric point, with derivatives.

    Derivatives are parametric; entries beyond deriv_order are zero. The list
    is ordered by (level, a, b).
    """
    x, y = float(point[0]), float(point[1])
    mesh = space.mesh
    cell = locate_cell(mesh, x, y)
    level = cell.level
    tspace = mesh.space(level)
    p = tspace.degree
    bx = eval_basis(tspace.kv_x, x, deriv_order)
    by = eval_basis(tspace.kv_y, y, deriv_order)
    ax0 = find_span(tspace.kv_x, x) - p
    by0 = find_span(tspace.kv_y, y) - p

    C = space.rep_matrix(level).tocsr()
    fns = space.rep_columns(level)
    acc: dict[int, np.ndarray] = {}
    for da in range(p + 1):
        for db in range(p + 1):
            row = (ax0 + da) * tspace.n_y + (by0 + db)
            start, end = C.indptr[row], C.indptr[row + 1]
            if start == end:
                continue
            tab = np.zeros(6)
            tab[0] = bx[da, 0] * by[db, 0]
            if deriv_order >= 1:
                tab[1] = bx[da, 1] * by[db, 0]
                tab[2] = bx[da, 0] * by[db, 1]
            if deriv_order >= 2:
                tab[3] = bx[da, 2] * by[db, 0]
                tab[4] = bx[da, 1] * by[db, 1]
                tab[5] = bx[da, 0] * by[db, 2]
            for ptr in range(start, end):
                col = int(C.indices[ptr])
                w = C.data[ptr]
                if col not in acc:
                    acc[col] = np.zeros(6)
                acc[col] += w * tab
    out = []
    for col in sorted(acc, key=lambda c: fns[c]):
        v = acc[col]
        grad = np.array([v[1], v[2]])
        hess = np.array([[v[3], v[4]], [v[4], v[5]]])
        out.append(THBFunctionValue(fns[col], float(v[0]), grad, hess))
    return out


# -- admissibility ---------------------------------------------------------------


def is_admissible(mesh: HierarchicalMesh, space: HierarchicalSpace, m: int) -> bool:
    """Do the active functions on every active cell span <= m successive levels?

    Evaluated from the truncation matrices, i.e. on truncated supports.
    """
    if m < 1:
        raise DomainError(f"admissibility class must be >= 1, got {m}")
    p = mesh.degree
    for level in range(mesh.max_levels):
        states = mesh.states[level]
        if not np.any(states == ACTIVE):
            continue
        C = space.rep_matrix(level)
        tspace = mesh.space(level)
        csr = C.tocsr()
        levels = space._cols_levels[level]
        row_min = np.full(tspace.n_functions, np.inf)
        row_max = np.full(tspace.n_functions, -np.inf)
        nz = np.diff(csr.indptr) > 0
        idx = np.flatnonzero(nz)
        # columns are ordered level-major, so first/last nonzero bound the levels
        row_min[idx] = levels[csr.indices[csr.indptr[idx]]]
        row_max[idx] = levels[csr.indices[csr.indptr[idx + 1] - 1]]
        gmin = row_min.reshape(tspace.n_x, tspace.n_y)
        gmax = row_max.reshape(tspace.n_x, tspace.n_y)
        cell_min = _slide_extreme(
            _slide_extreme(gmin, tspace.cells_x, 0, p, axis=0, take_min=True),
            tspace.cells_y, 0, p, axis=1, take_min=True,
        )
        cell_max = _slide_extreme(
            _slide_extreme(gmax, tspace.cells_x, 0, p, axis=0, take_min=False),
            tspace.cells_y, 0, p, axis=1, take_min=False,
        )
        active = states == ACTIVE
        if np.any((cell_max[active] - cell_min[active]) > m - 1):
            return False
    return True


# -- serialization ----------------------------------------------------------------


def dump_mesh(mesh: HierarchicalMesh, fileobj) -> None:
    """One JSON record per active cell, level-major then (i, j) ascending."""
    for cell in mesh.all_active_cells():
        fileobj.write(json.dumps({"level": cell.level, "i": cell.i, "j": cell.j}) + "\n")


def dump_mesh_path(mesh: HierarchicalMesh, path) -> None:
    with open(path, "w") as f:
        dump_mesh(mesh, f)
