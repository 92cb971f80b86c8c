"""Marking, mesh adaptation and state transfer between meshes.

Refinement closes each marked cell over its refinement neighborhood first, so
class-m admissibility is preserved by construction. Coarsening reactivates a
parent only when all four children are marked and no deep cell vetoes the
merge. After refinement the old coefficients transfer exactly; after
coarsening the field is L2-projected onto the smaller space.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .assembly import Geometry, gram_matrix, moment_vector
from .errors import CapacityWarning, DomainError, StalenessError, StructuralError
from .hierarchy import (
    ACTIVE,
    OUTSIDE,
    REFINED,
    HierarchicalMesh,
    HierarchicalSpace,
    StateVector,
    coarsening_neighborhood,
    refinement_neighborhood,
)
from .solver import Estimate, linear_solve
from .splines import CellIndex, refinement_matrix_1d


@dataclass(frozen=True)
class MarkedSet:
    """Cells picked by a marking pass, tagged with their intent."""

    kind: str  # "refine" or "coarsen"
    cells: tuple[CellIndex, ...]
    generation: int
    alpha: float = 0.0  # marking fraction that produced the set; 0 if hand-built


def _sorted_items(est: Estimate, descending: bool) -> list[tuple[CellIndex, float]]:
    sign = -1.0 if descending else 1.0
    return sorted(est.per_cell.items(), key=lambda kv: (sign * kv[1], kv[0]))


def mark_max(est: Estimate, alpha: float) -> MarkedSet:
    """Smallest prefix of the largest indicators with at least the fraction
    alpha^2 of the total squared estimate."""
    if not 0 < alpha <= 1:
        raise DomainError(f"marking fraction must be in (0, 1], got {alpha}")
    items = _sorted_items(est, descending=True)
    # summing in the marking order keeps the alpha = 1 threshold bit-exact
    total2 = sum(e * e for _, e in items)
    target = alpha * alpha * total2
    cells: list[CellIndex] = []
    acc = 0.0
    for cell, e in items:
        if acc >= target:
            break
        cells.append(cell)
        acc += e * e
    return MarkedSet(kind="refine", cells=tuple(cells), generation=est.generation, alpha=alpha)


def mark_min(est: Estimate, alpha: float) -> MarkedSet:
    """Largest prefix of the smallest indicators below the fraction alpha^2
    of the total squared estimate."""
    if not 0 < alpha <= 1:
        raise DomainError(f"marking fraction must be in (0, 1], got {alpha}")
    items = _sorted_items(est, descending=False)
    total2 = sum(e * e for _, e in items)
    target = alpha * alpha * total2
    cells: list[CellIndex] = []
    acc = 0.0
    for cell, e in items:
        if acc + e * e > target:
            break
        cells.append(cell)
        acc += e * e
    return MarkedSet(kind="coarsen", cells=tuple(cells), generation=est.generation, alpha=alpha)


def _check_marked(space: HierarchicalSpace, marked: MarkedSet, kind: str) -> None:
    if marked.kind != kind:
        raise StructuralError(f"expected a {kind!r} marked set, got {marked.kind!r}")
    if marked.generation != space.generation:
        raise StalenessError(
            f"marked set generation {marked.generation} does not match space generation {space.generation}"
        )


def refine(
    mesh: HierarchicalMesh,
    space: HierarchicalSpace,
    marked: MarkedSet,
    m: int,
) -> set[CellIndex]:
    """Subdivide the marked cells and their recursive closure.

    Marked cells that already sit at the deepest level are skipped with a
    CapacityWarning. Returns every cell that was subdivided.
    """
    _check_marked(space, marked, "refine")
    done: set[CellIndex] = set()

    def rec(cell: CellIndex) -> None:
        if mesh.state(cell) != ACTIVE:
            return
        if cell.level + 1 >= mesh.max_levels:
            warnings.warn(
                f"cell {cell} is at the level capacity {mesh.max_levels}; not refined",
                CapacityWarning,
                stacklevel=3,
            )
            return
        for nb in sorted(refinement_neighborhood(mesh, cell, m)):
            rec(nb)
        mesh.subdivide_raw(cell)
        done.add(cell)

    for cell in sorted(marked.cells):
        rec(cell)
    if done:
        space.rebuild()
    return done


def coarsen(
    mesh: HierarchicalMesh,
    space: HierarchicalSpace,
    marked: MarkedSet,
    m: int,
) -> set[CellIndex]:
    """Reactivate parents whose four children are all marked and mergeable.

    A merge is vetoed when any child is no longer active or when cells m
    levels deeper still sit inside the children's support extensions, which
    would break class-m admissibility. Parents are visited finest first so a
    merge can enable further merges lower down in the same pass. Returns the
    reactivated parents.
    """
    _check_marked(space, marked, "coarsen")
    chosen = set(marked.cells)
    parents = {mesh.parent(c) for c in chosen if c.level > 0}
    done: set[CellIndex] = set()
    for parent in sorted(parents, key=lambda c: (-c.level, c.i, c.j)):
        kids = mesh.children(parent)
        if any(mesh.state(k) != ACTIVE for k in kids):
            continue
        if any(k not in chosen for k in kids):
            continue
        if coarsening_neighborhood(mesh, parent, m):
            continue
        mesh.reactivate_raw(parent)
        done.add(parent)
    if done:
        space.rebuild()
    return done


# -- state transfer ---------------------------------------------------------------


def _is_refinement(old: HierarchicalMesh, new: HierarchicalMesh) -> bool:
    if old.max_levels != new.max_levels or old.degree != new.degree:
        return False
    for level in range(old.max_levels):
        so, sn = old.states[level], new.states[level]
        if so.shape != sn.shape:
            return False
        if np.any(sn[so == REFINED] != REFINED):
            return False
        if np.any(sn[so == ACTIVE] == OUTSIDE):
            return False
    return True


def transfer_refine(
    old_space: HierarchicalSpace,
    new_space: HierarchicalSpace,
    theta: StateVector,
) -> StateVector:
    """Coefficients on a refined mesh that reproduce the field exactly.

    Works by preservation of coefficients: on an active cell of the new mesh
    the truncation matrices leave the own-level tensor coefficient of every
    active function untouched, so pushing the old local tensor representation
    down to that cell and reading off the entry yields the new coefficient.
    """
    old_space.check_state(theta)
    old_mesh, new_mesh = old_space.mesh, new_space.mesh
    if not _is_refinement(old_mesh, new_mesh):
        raise StructuralError("target mesh is not a refinement of the source mesh")
    p = old_mesh.degree

    ref_1d: dict[int, tuple] = {}

    def one_d(level: int):
        if level not in ref_1d:
            coarse, fine = old_mesh.space(level), old_mesh.space(level + 1)
            ref_1d[level] = (
                refinement_matrix_1d(coarse.kv_x, fine.kv_x).tocsr(),
                refinement_matrix_1d(coarse.kv_y, fine.kv_y).tocsr(),
            )
        return ref_1d[level]

    level_reps: dict[int, np.ndarray] = {}

    def level_rep(level: int) -> np.ndarray:
        if level not in level_reps:
            tsp = old_mesh.space(level)
            r = old_space.tensor_coefficients(level, theta.coeffs)
            level_reps[level] = r.reshape(tsp.n_x, tsp.n_y)
        return level_reps[level]

    windows: dict[CellIndex, np.ndarray] = {}

    def rep_window(cell: CellIndex) -> np.ndarray:
        """Level-(cell.level) tensor coefficients of the functions acting on cell."""
        hit = windows.get(cell)
        if hit is not None:
            return hit
        if old_mesh.state(cell) == ACTIVE:
            w = level_rep(cell.level)[cell.i : cell.i + p + 1, cell.j : cell.j + p + 1]
        else:
            par = old_mesh.parent(cell)
            wp = rep_window(par)
            sx, sy = one_d(par.level)
            bx = sx[cell.i : cell.i + p + 1, par.i : par.i + p + 1].toarray()
            by = sy[cell.j : cell.j + p + 1, par.j : par.j + p + 1].toarray()
            w = bx @ wp @ by.T
        windows[cell] = w
        return w

    coeffs = np.empty(new_space.n_dofs)
    for pos, fn in enumerate(new_space.dofs):
        level, a, b = fn
        states = new_mesh.states[level]
        anchor = None
        for i in range(max(0, a - p), min(a, states.shape[0] - 1) + 1):
            for j in range(max(0, b - p), min(b, states.shape[1] - 1) + 1):
                if states[i, j] == ACTIVE:
                    anchor = CellIndex(level, i, j)
                    break
            if anchor is not None:
                break
        if anchor is None:
            raise StructuralError(f"active function {fn} has no active cell in its support")
        w = rep_window(anchor)
        coeffs[pos] = w[a - anchor.i, b - anchor.j]
    return StateVector(coeffs, theta.t, new_space.generation)


def project_l2(
    space: HierarchicalSpace,
    geom: Geometry,
    field: Callable[[np.ndarray], np.ndarray],
    t: float,
    n_gauss: int | None = None,
    rtol: float = 1e-12,
    maxiter: int | None = None,
) -> StateVector:
    """L2-orthogonal projection of a physical-space field onto the space."""
    G = gram_matrix(space, geom, n_gauss)
    rhs = moment_vector(space, geom, field, n_gauss)
    coeffs = linear_solve(G, rhs, rtol=rtol, maxiter=maxiter)
    return StateVector(coeffs, t, space.generation)
