"""Univariate B-spline spaces and their tensor products on the unit square.

Everything here lives in parametric coordinates. Knot vectors are open
(endpoints repeated degree+1 times) with simple interior knots, which is the
only structure the hierarchical layers ever produce: each level is a dyadic
refinement of the previous one.
"""

from __future__ import annotations

from typing import NamedTuple

import numpy as np
from scipy import sparse

from .errors import DomainError, StructuralError


class CellIndex(NamedTuple):
    """A mesh cell: hierarchy level and per-direction span counters."""

    level: int
    i: int
    j: int


class FunctionIndex(NamedTuple):
    """A tensor B-spline: hierarchy level and per-direction function counters."""

    level: int
    a: int
    b: int


class KnotVector:
    """Open knot vector with simple interior knots on [0, 1]."""

    def __init__(self, degree: int, knots) -> None:
        if degree < 1:
            raise DomainError(f"degree must be >= 1, got {degree}")
        knots = np.asarray(knots, dtype=float)
        if knots.ndim != 1 or knots.size < 2 * (degree + 1):
            raise DomainError("knot vector too short for the degree")
        if np.any(np.diff(knots) < 0):
            raise DomainError("knots must be non-decreasing")
        p = degree
        if not (np.all(knots[: p + 1] == knots[0]) and np.all(knots[-p - 1 :] == knots[-1])):
            raise DomainError("knot vector must be open (ends repeated degree+1 times)")
        interior = knots[p + 1 : -p - 1]
        if interior.size and (np.any(np.diff(interior) <= 0)
                              or interior[0] <= knots[0] or interior[-1] >= knots[-1]):
            raise DomainError("interior knots must be strictly increasing and simple")
        self.degree = p
        self.knots = knots
        self.knots.flags.writeable = False

    @classmethod
    def uniform_open(cls, degree: int, n_cells: int) -> "KnotVector":
        """Open knot vector with n_cells uniform spans on [0, 1]."""
        if n_cells < 1:
            raise DomainError(f"n_cells must be >= 1, got {n_cells}")
        interior = np.arange(1, n_cells) / n_cells
        knots = np.concatenate([np.zeros(degree + 1), interior, np.ones(degree + 1)])
        return cls(degree, knots)

    @property
    def n_functions(self) -> int:
        return self.knots.size - self.degree - 1

    @property
    def n_cells(self) -> int:
        return self.knots.size - 2 * self.degree - 1

    def span_of_cell(self, cell: int) -> int:
        """Knot index of the left end of a nonempty span."""
        return self.degree + cell

    def cell_of_span(self, span: int) -> int:
        return span - self.degree

    def cell_bounds(self, cell: int) -> tuple[float, float]:
        s = self.span_of_cell(cell)
        return float(self.knots[s]), float(self.knots[s + 1])

    def greville(self) -> np.ndarray:
        """Greville abscissae (knot averages); linear fields have these coefficients."""
        p = self.degree
        return np.array([self.knots[a + 1 : a + p + 1].mean() for a in range(self.n_functions)])

    def __repr__(self) -> str:
        return f"KnotVector(p={self.degree}, cells={self.n_cells})"


def find_span(kv: KnotVector, x: float) -> int:
    """Knot index k with knots[k] <= x < knots[k+1]; x = 1 maps to the last nonempty span."""
    if not (0.0 <= x <= 1.0):
        raise DomainError(f"point {x} outside [0, 1]")
    p = kv.degree
    lo, hi = p, kv.knots.size - p - 2
    k = int(np.searchsorted(kv.knots, x, side="right")) - 1
    return min(max(k, lo), hi)


def _ders_basis(kv: KnotVector, span: int, xs: np.ndarray, n_ders: int) -> np.ndarray:
    """Nonzero basis functions and derivatives at points inside one span.

    Returns an array of shape (len(xs), n_ders+1, p+1); entry [q, d, j] is the
    d-th derivative of function span-p+j at xs[q]. Standard knot-difference
    recursion, vectorized over the points.
    """
    p = kv.degree
    U = kv.knots
    xs = np.asarray(xs, dtype=float)
    nq = xs.size

    # ndu[j, r]: basis values of degree r at the points (triangular table).
    ndu = np.zeros((nq, p + 1, p + 1))
    ndu[:, 0, 0] = 1.0
    left = np.empty((nq, p + 1))
    right = np.empty((nq, p + 1))
    for j in range(1, p + 1):
        left[:, j] = xs - U[span + 1 - j]
        right[:, j] = U[span + j] - xs
        saved = np.zeros(nq)
        for r in range(j):
            denom = right[:, r + 1] + left[:, j - r]
            temp = ndu[:, r, j - 1] / denom
            ndu[:, r, j] = saved + right[:, r + 1] * temp
            saved = left[:, j - r] * temp
        ndu[:, j, j] = saved

    out = np.zeros((nq, n_ders + 1, p + 1))
    out[:, 0, :] = ndu[:, :, p]
    if n_ders == 0:
        return out

    # Derivatives via divided differences of the lower-degree columns. The
    # divisor ndu-lower-triangle entries of the scalar algorithm are pure knot
    # differences, computed here directly: D(pk, rr) = U[span+rr+1] - U[span+rr-pk].
    def dknot(pk: int, rr: int) -> float:
        return U[span + rr + 1] - U[span + rr - pk]

    for r in range(p + 1):
        a = np.zeros((nq, 2, p + 1))
        a[:, 0, 0] = 1.0
        s1, s2 = 0, 1
        for k in range(1, min(n_ders, p) + 1):
            d = np.zeros(nq)
            rk = r - k
            pk = p - k
            if r >= k:
                a[:, s2, 0] = a[:, s1, 0] / dknot(pk, rk)
                d = a[:, s2, 0] * ndu[:, rk, pk]
            j1 = 1 if rk >= -1 else -rk
            j2 = k - 1 if r - 1 <= pk else p - r
            for j in range(j1, j2 + 1):
                a[:, s2, j] = (a[:, s1, j] - a[:, s1, j - 1]) / dknot(pk, rk + j)
                d = d + a[:, s2, j] * ndu[:, rk + j, pk]
            if r <= pk:
                a[:, s2, k] = -a[:, s1, k - 1] / dknot(pk, r)
                d = d + a[:, s2, k] * ndu[:, r, pk]
            out[:, k, r] = d
            s1, s2 = s2, s1

    fact = p
    for k in range(1, min(n_ders, p) + 1):
        out[:, k, :] *= fact
        fact *= p - k
    return out


def eval_basis(kv: KnotVector, x: float, deriv_order: int = 0) -> np.ndarray:
    """Values (and derivatives) of the p+1 basis functions not vanishing at x.

    Returns shape (p+1, deriv_order+1): row j holds (value, d/dx, ...) of
    function find_span(kv, x) - p + j. Derivatives above the degree are zero;
    deriv_order is capped at 2 by contract.
    """
    if not 0 <= deriv_order <= 2:
        raise DomainError(f"deriv_order must be in 0..2, got {deriv_order}")
    span = find_span(kv, x)
    table = _ders_basis(kv, span, np.array([x]), deriv_order)
    return table[0].T.copy()


def dyadic_refine(kv: KnotVector) -> KnotVector:
    """Insert the midpoint of every nonempty span."""
    p = kv.degree
    U = kv.knots
    mids = 0.5 * (U[p:-p - 1] + U[p + 1 : -p])
    return KnotVector(p, np.sort(np.concatenate([U, mids])))


def _insertion_matrix(knots: np.ndarray, p: int, u: float) -> sparse.csr_matrix:
    """Single-knot Boehm insertion: coefficients on old basis -> new basis."""
    n = knots.size - p - 1
    k = int(np.searchsorted(knots, u, side="right")) - 1
    rows, cols, vals = [], [], []
    for i in range(n + 1):
        if i <= k - p:
            alpha = 1.0
        elif i >= k + 1:
            alpha = 0.0
        else:
            alpha = (u - knots[i]) / (knots[i + p] - knots[i])
        if alpha != 0.0:
            rows.append(i)
            cols.append(i)
            vals.append(alpha)
        if alpha != 1.0:
            rows.append(i)
            cols.append(i - 1)
            vals.append(1.0 - alpha)
    return sparse.csr_matrix((vals, (rows, cols)), shape=(n + 1, n))


def refinement_matrix_1d(coarse: KnotVector, fine: KnotVector) -> sparse.csr_matrix:
    """Fine-by-coarse coefficient matrix A: coarse function j = sum_i A[i,j] * fine_i."""
    if fine.degree != coarse.degree:
        raise StructuralError("degree mismatch between knot vectors")
    expected = dyadic_refine(coarse)
    if fine.knots.size != expected.knots.size or not np.array_equal(fine.knots, expected.knots):
        raise StructuralError("fine knot vector is not the dyadic refinement of the coarse one")
    p = coarse.degree
    knots = coarse.knots.copy()
    A = sparse.identity(coarse.n_functions, format="csr")
    new_knots = expected.knots[p + 1 : -p - 1]
    inserted = coarse.knots[p + 1 : -p - 1]
    to_insert = sorted(set(new_knots.tolist()) - set(inserted.tolist()))
    for u in to_insert:
        A = _insertion_matrix(knots, p, u) @ A
        knots = np.sort(np.append(knots, u))
    return A.tocsr()


def two_scale_matrix(coarse: KnotVector, fine: KnotVector) -> sparse.csr_matrix:
    """Each coarse function as a combination of fine functions (rows = coarse).

    Row sums are 1 and entries nonnegative; a field with coarse coefficients c
    has fine coefficients two_scale_matrix(c, f).T @ c.
    """
    return refinement_matrix_1d(coarse, fine).T.tocsr()


class TensorSpace:
    """Tensor-product B-spline space of one hierarchy level on [0, 1]^2."""

    def __init__(self, level: int, kv_x: KnotVector, kv_y: KnotVector) -> None:
        if kv_x.degree != kv_y.degree:
            raise StructuralError("tensor space needs equal degrees per direction")
        self.level = level
        self.kv_x = kv_x
        self.kv_y = kv_y
        self.degree = kv_x.degree

    @classmethod
    def unit_square(cls, degree: int, n_cells: int, level: int = 0) -> "TensorSpace":
        kv = KnotVector.uniform_open(degree, n_cells)
        return cls(level, kv, kv)

    @property
    def n_x(self) -> int:
        return self.kv_x.n_functions

    @property
    def n_y(self) -> int:
        return self.kv_y.n_functions

    @property
    def n_functions(self) -> int:
        return self.n_x * self.n_y

    @property
    def cells_x(self) -> int:
        return self.kv_x.n_cells

    @property
    def cells_y(self) -> int:
        return self.kv_y.n_cells

    def flat_function(self, a: int, b: int) -> int:
        return a * self.n_y + b

    def cell_bounds(self, cell: CellIndex) -> tuple[float, float, float, float]:
        """(x0, x1, y0, y1) of the cell in parametric coordinates."""
        x0, x1 = self.kv_x.cell_bounds(cell.i)
        y0, y1 = self.kv_y.cell_bounds(cell.j)
        return x0, x1, y0, y1

    def refine(self) -> "TensorSpace":
        return TensorSpace(self.level + 1, dyadic_refine(self.kv_x), dyadic_refine(self.kv_y))

    def functions_on_cell(self, cell: CellIndex) -> list[FunctionIndex]:
        """The (p+1)^2 functions whose support contains the cell."""
        self._check_cell(cell)
        p = self.degree
        return [
            FunctionIndex(self.level, a, b)
            for a in range(cell.i, cell.i + p + 1)
            for b in range(cell.j, cell.j + p + 1)
        ]

    def cells_in_support(self, fn: FunctionIndex) -> list[CellIndex]:
        """Nonempty cells inside the support of a function, row-major."""
        if fn.level != self.level:
            raise StructuralError(f"function level {fn.level} does not match space level {self.level}")
        if not (0 <= fn.a < self.n_x and 0 <= fn.b < self.n_y):
            raise DomainError(f"function index {fn} out of range")
        p = self.degree
        i0, i1 = max(0, fn.a - p), min(self.cells_x - 1, fn.a)
        j0, j1 = max(0, fn.b - p), min(self.cells_y - 1, fn.b)
        return [
            CellIndex(self.level, i, j)
            for i in range(i0, i1 + 1)
            for j in range(j0, j1 + 1)
        ]

    def _check_cell(self, cell: CellIndex) -> None:
        if cell.level != self.level:
            raise StructuralError(f"cell level {cell.level} does not match space level {self.level}")
        if not (0 <= cell.i < self.cells_x and 0 <= cell.j < self.cells_y):
            raise DomainError(f"cell index {cell} out of range")

    def __repr__(self) -> str:
        return f"TensorSpace(level={self.level}, p={self.degree}, cells={self.cells_x}x{self.cells_y})"
