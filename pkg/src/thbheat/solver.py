"""Time stepping, residual estimation and energy bookkeeping.

Backward Euler on the Galerkin system (M + dt K) delta = dt (f - K theta).
Both M and M + dt K are symmetric positive definite, so systems are solved
with conjugate gradients under a Jacobi preconditioner.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import sparse
from scipy.sparse.linalg import cg

from .assembly import SystemMatrices
from .errors import DomainError, NumericalError, StructuralError
from .hierarchy import StateVector
from .splines import CellIndex


@dataclass(frozen=True)
class TimeStepper:
    """Fixed-step backward Euler controls."""

    dt: float
    rtol: float = 1e-10
    maxiter: int | None = None

    def __post_init__(self):
        if self.dt <= 0:
            raise DomainError(f"dt must be positive, got {self.dt}")
        if self.rtol <= 0:
            raise DomainError(f"rtol must be positive, got {self.rtol}")


@dataclass(frozen=True)
class Estimate:
    """Per-cell residual indicators (not squared) and their l2 aggregate."""

    per_cell: dict[CellIndex, float]
    total: float
    generation: int


def linear_solve(
    A: sparse.spmatrix,
    b: np.ndarray,
    rtol: float = 1e-10,
    maxiter: int | None = None,
    x0: np.ndarray | None = None,
) -> np.ndarray:
    """CG with Jacobi preconditioning for SPD systems."""
    b = np.asarray(b, dtype=float)
    if not np.any(b):
        return np.zeros_like(b)
    diag = A.diagonal()
    if np.any(diag <= 0):
        raise NumericalError("system diagonal is not positive")
    precond = sparse.diags(1.0 / diag)
    try:
        x, info = cg(A, b, rtol=rtol, maxiter=maxiter, M=precond, x0=x0)
    except TypeError:  # scipy < 1.12 spells the tolerance "tol"
        x, info = cg(A, b, tol=rtol, maxiter=maxiter, M=precond, x0=x0)
    if info != 0:
        raise NumericalError(f"conjugate gradients failed to converge (info={info})")
    return x


def backward_euler_step(
    system: SystemMatrices,
    theta_t: np.ndarray,
    dt: float,
    f: np.ndarray | None = None,
    rtol: float = 1e-10,
    maxiter: int | None = None,
) -> np.ndarray:
    """Increment delta solving (M + dt K) delta = dt (f - K theta_t).

    f is the load at the new time level; it defaults to the load stored at
    assembly time. Relies on K having constants in its kernel (adiabatic
    stiffness contract).
    """
    if dt <= 0:
        raise DomainError(f"dt must be positive, got {dt}")
    theta_t = np.asarray(theta_t, dtype=float)
    if f is None:
        f = system.f
    A = system.M + dt * system.K
    # K annihilates constants; shifting by the mean keeps that exact in
    # floating point, so a zero-source constant state stays bitwise constant
    rhs = dt * (f - system.K @ (theta_t - theta_t.mean()))
    return linear_solve(A.tocsr(), rhs, rtol=rtol, maxiter=maxiter)


def advance(system: SystemMatrices, theta: StateVector, stepper: TimeStepper) -> StateVector:
    """One backward Euler step; refreshes the load at the new time level."""
    system.check_state(theta)
    t_new = theta.t + stepper.dt
    f_new = system.load_vector(t_new)
    delta = backward_euler_step(
        system, theta.coeffs, stepper.dt, f=f_new, rtol=stepper.rtol, maxiter=stepper.maxiter
    )
    return StateVector(theta.coeffs + delta, t_new, theta.generation)


def estimate(system: SystemMatrices, theta_new: StateVector, theta_old: StateVector) -> Estimate:
    """Scaled strong-form residual per active cell.

    eps_Q^2 = h_Q^2 * int_Q (f - Cp*rho*(theta_new - theta_old)/dt
                              + k * lap theta_new)^2
    with everything evaluated at the new time level.
    """
    system.check_state(theta_new)
    system.check_state(theta_old)
    dt = theta_new.t - theta_old.t
    if dt <= 0:
        raise DomainError("estimate needs theta_new.t > theta_old.t")
    cap = system.material.volumetric_heat_capacity
    k_cond = system.material.conductivity
    per_cell: dict[CellIndex, float] = {}
    total2 = 0.0
    for cq in system.cell_data():
        loc_new = theta_new.coeffs[cq.cols]
        loc_old = theta_old.coeffs[cq.cols]
        # the Laplacian of a constant is zero; the mean shift makes that exact
        resid = (
            system.source(cq.points, theta_new.t)
            - cap * (cq.V @ (loc_new - loc_old)) / dt
            + k_cond * (cq.Vlap @ (loc_new - loc_new.mean()))
        )
        e2 = cq.h * cq.h * float(cq.weights @ (resid * resid))
        per_cell[cq.cell] = math.sqrt(e2)
        total2 += e2
    return Estimate(per_cell=per_cell, total=math.sqrt(total2), generation=system.generation)


def internal_energy(system: SystemMatrices, theta: StateVector) -> float:
    """Stored gradient energy 0.5 * theta' K theta."""
    system.check_state(theta)
    shifted = theta.coeffs - theta.coeffs.mean()  # exact zero for constants
    return 0.5 * float(shifted @ (system.K @ shifted))


def total_energy(system: SystemMatrices, theta_new: StateVector, theta_old: StateVector) -> float:
    """Internal energy plus the discrete thermal-inertia contribution."""
    system.check_state(theta_new)
    system.check_state(theta_old)
    dt = theta_new.t - theta_old.t
    if dt <= 0:
        raise DomainError("total_energy needs theta_new.t > theta_old.t")
    inertia = 0.5 * float(theta_new.coeffs @ (system.M @ (theta_new.coeffs - theta_old.coeffs))) / dt
    return internal_energy(system, theta_new) + inertia


def heat_content(system: SystemMatrices, theta: StateVector) -> float:
    """Integral of Cp*rho*theta over the plate (ones' row of M times theta)."""
    system.check_state(theta)
    ones = np.ones_like(theta.coeffs)
    return float(ones @ (system.M @ theta.coeffs))


def relative_energy_errors(values, reference) -> np.ndarray:
    """|values - reference| / |reference| entrywise.

    Entries with a zero reference fall back to the absolute difference; mixing
    the two scales is acceptable because the comparison targets nonzero
    energies.
    """
    values = np.asarray(values, dtype=float)
    reference = np.asarray(reference, dtype=float)
    if values.shape != reference.shape:
        raise StructuralError(
            f"length mismatch: {values.shape} values vs {reference.shape} reference"
        )
    out = np.abs(values - reference)
    nz = reference != 0
    out[nz] = out[nz] / np.abs(reference[nz])
    return out
