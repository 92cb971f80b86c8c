"""Simulation driver: outer time loop with refine-then-coarsen, per-step
iterative refinement, and all file outputs.

Per step the driver solves on the current mesh, refines iteratively while the
estimator asks for it (deep cap on the first step, short cap afterwards),
records diagnostics from the post-refinement solve, then coarsens the wake and
carries the projected state forward. steps.csv rows are flushed as they are
produced so an aborted run keeps every completed step.
"""

import csv
import os
import time
import warnings
from dataclasses import dataclass
from typing import NamedTuple

from .adaptivity import coarsen, mark_max, mark_min, project_l2, refine, transfer_refine
from .assembly import (
    FieldEvaluator,
    SystemMatrices,
    assemble,
    sample_field,
    write_field_csv,
    write_vtk,
)
from .config import SimulationConfig
from .errors import CapacityWarning, DomainError, StructuralError
from .hierarchy import (
    ACTIVE,
    HierarchicalMesh,
    HierarchicalSpace,
    StateVector,
    build_initial,
    dump_mesh_path,
    is_admissible,
)
from .solver import (
    Estimate,
    TimeStepper,
    advance,
    estimate,
    internal_energy,
    relative_energy_errors,
    total_energy,
)
from .splines import TensorSpace


@dataclass(frozen=True)
class StepRecord:
    """Diagnostics of one time step.

    n_dofs, eps_total and the energies come from the post-refinement solve
    (the most accurate state at that time); cells counts reflect the
    end-of-step mesh that is carried forward and dumped.
    """

    step: int
    t: float
    n_dofs: int
    cells: tuple[int, ...]
    eps_total: float
    e_internal: float
    e_total: float
    wall_ms: float
    n_marked_refine: int
    n_marked_coarsen: int
    n_reactivated: int

    def __post_init__(self):
        if self.n_dofs <= 0:
            raise DomainError("n_dofs must be positive")
        if self.eps_total < 0:
            raise DomainError("eps_total must be nonnegative")


class IterationResult(NamedTuple):
    system: SystemMatrices
    theta_old: StateVector
    theta_new: StateVector
    est: Estimate
    n_marked: int
    rounds: int


def adaptive_iterate(
    mesh: HierarchicalMesh,
    space: HierarchicalSpace,
    theta_t: StateVector,
    cfg: SimulationConfig,
    stepper: TimeStepper,
    i_max: int,
) -> IterationResult:
    """Solve-estimate-refine loop for one time step.

    Runs at most i_max mark/refine/re-solve rounds while the total estimate
    stays at or above cfg.tol; the incoming state is transferred by knot
    insertion each round, never re-projected. Stops early when marking or
    refinement cannot change the mesh any further.
    """
    system = assemble(space, cfg.geometry, cfg.material, cfg.source, t=theta_t.t)
    theta_new = advance(system, theta_t, stepper)
    est = estimate(system, theta_new, theta_t)
    n_marked = 0
    rounds = 0
    while rounds < i_max and est.total >= cfg.tol:
        marked = mark_max(est, cfg.alpha_r)
        if not marked.cells:
            break
        n_marked += len(marked.cells)
        old_space = space.clone()
        done = refine(mesh, space, marked, cfg.m)
        if not done:
            break
        theta_t = transfer_refine(old_space, space, theta_t)
        system = assemble(space, cfg.geometry, cfg.material, cfg.source, t=theta_t.t)
        theta_new = advance(system, theta_t, stepper)
        est = estimate(system, theta_new, theta_t)
        rounds += 1
    return IterationResult(system, theta_t, theta_new, est, n_marked, rounds)


def _active_counts(mesh: HierarchicalMesh) -> tuple[int, ...]:
    return tuple(int((states == ACTIVE).sum()) for states in mesh.states)


def csv_header(max_levels: int) -> list[str]:
    cells = [f"cells_l{k}" for k in range(max_levels)]
    return (
        ["step", "t", "n_dofs", *cells]
        + ["eps_total", "E_i", "E_T", "wall_ms", "marked_r", "marked_c", "reactivated"]
    )


def _record_row(rec: StepRecord) -> list:
    return (
        [rec.step, repr(rec.t), rec.n_dofs, *rec.cells]
        + [repr(rec.eps_total), repr(rec.e_internal), repr(rec.e_total), repr(rec.wall_ms)]
        + [rec.n_marked_refine, rec.n_marked_coarsen, rec.n_reactivated]
    )


def run(cfg: SimulationConfig, out_dir: str | None = None) -> list[StepRecord]:
    """Execute the configured simulation, writing artifacts under out_dir.

    Produces steps.csv plus mesh_XXXX.jsonl / field_XXXX.vtk / field_XXXX.csv
    per step and returns the step records. out_dir falls back to the config's
    own out_dir entry.
    """
    target = out_dir if out_dir is not None else cfg.out_dir
    if target is None:
        raise DomainError("no output directory: pass out_dir or set [run] out_dir")
    os.makedirs(target, exist_ok=True)

    mesh, space = build_initial(
        TensorSpace.unit_square(cfg.degree, cfg.run_base_cells), cfg.run_max_levels
    )
    theta = space.constant_state(cfg.material.initial_temperature, t=0.0)
    stepper = TimeStepper(cfg.dt)
    records: list[StepRecord] = []

    with open(os.path.join(target, "steps.csv"), "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(csv_header(cfg.run_max_levels))
        fh.flush()
        # at the level cap the estimator keeps marking finest cells; the skip
        # is by design, so the per-cell warnings are noise here
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", CapacityWarning)
            for step in range(1, cfg.n_steps + 1):
                tic = time.perf_counter()
                cap = cfg.first_cap if step == 1 else cfg.rest_cap
                result = adaptive_iterate(mesh, space, theta, cfg, stepper, cap)
                theta = result.theta_new
                n_dofs = space.n_dofs
                e_i = internal_energy(result.system, theta)
                e_t = total_energy(result.system, theta, result.theta_old)

                marked_c = 0
                reactivated = 0
                if cfg.coarsening_on and step >= 2:
                    marked = mark_min(result.est, cfg.alpha_c)
                    marked_c = len(marked.cells)
                    if marked.cells:
                        fine_space = space.clone()
                        done = coarsen(mesh, space, marked, cfg.m)
                        reactivated = len(done)
                        if done:
                            field = FieldEvaluator(fine_space, theta, cfg.geometry)
                            theta = project_l2(space, cfg.geometry, field, t=theta.t)

                wall_ms = (time.perf_counter() - tic) * 1e3
                rec = StepRecord(
                    step=step,
                    t=theta.t,
                    n_dofs=n_dofs,
                    cells=_active_counts(mesh),
                    eps_total=result.est.total,
                    e_internal=e_i,
                    e_total=e_t,
                    wall_ms=wall_ms,
                    n_marked_refine=result.n_marked,
                    n_marked_coarsen=marked_c,
                    n_reactivated=reactivated,
                )
                records.append(rec)
                writer.writerow(_record_row(rec))
                fh.flush()

                tag = f"{step:04d}"
                dump_mesh_path(mesh, os.path.join(target, f"mesh_{tag}.jsonl"))
                values = sample_field(space, cfg.geometry, theta, cfg.sample_n)
                write_vtk(os.path.join(target, f"field_{tag}.vtk"), values, cfg.geometry)
                write_field_csv(os.path.join(target, f"field_{tag}.csv"), values, cfg.geometry)

                if cfg.mode == "adaptive" and not is_admissible(mesh, space, cfg.m):
                    raise StructuralError(f"mesh lost class-{cfg.m} admissibility at step {step}")
    return records


# -- comparison harness ---------------------------------------------------------------


def _label(cfg: SimulationConfig) -> str:
    if cfg.mode == "uniform":
        return f"uniform{cfg.uniform_k}"
    return cfg.mode


def comparison_labels(configs) -> list[str]:
    labels = []
    for cfg in configs:
        base = _label(cfg)
        label = base
        k = 2
        while label in labels:
            label = f"{base}#{k}"
            k += 1
        labels.append(label)
    return labels


def run_comparison(
    configs: list[SimulationConfig], out_dir: str, reference: int = 0
) -> list[list[StepRecord]]:
    """Run several configs on the same scenario and merge their records.

    All configs must share material, source and dt, and produce the same
    number of steps. Each run writes to out_dir/<label>/; the merged
    comparison.csv adds a mode column plus per-step relative energy errors
    against the reference run.
    """
    if not configs:
        raise DomainError("need at least one config to compare")
    if not 0 <= reference < len(configs):
        raise DomainError(f"reference index {reference} out of range")
    first = configs[0]
    for cfg in configs[1:]:
        if cfg.material != first.material:
            raise DomainError("compared configs must share the material")
        if cfg.source != first.source:
            raise DomainError("compared configs must share the heat source and path")
        if cfg.dt != first.dt:
            raise DomainError("compared configs must share dt")
        if cfg.n_steps != first.n_steps:
            raise DomainError("compared configs must run the same number of steps")

    labels = comparison_labels(configs)
    all_records = [
        run(cfg, os.path.join(out_dir, label)) for cfg, label in zip(configs, labels)
    ]

    ref = all_records[reference]
    ref_ei = [r.e_internal for r in ref]
    ref_et = [r.e_total for r in ref]
    max_levels = max(len(recs[0].cells) for recs in all_records)

    with open(os.path.join(out_dir, "comparison.csv"), "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["mode", *csv_header(max_levels), "eps_i", "eps_T"])
        for label, recs in zip(labels, all_records):
            eps_i = relative_energy_errors([r.e_internal for r in recs], ref_ei)
            eps_t = relative_energy_errors([r.e_total for r in recs], ref_et)
            for rec, ei, et in zip(recs, eps_i, eps_t):
                row = _record_row(rec)
                pad = [0] * (max_levels - len(rec.cells))
                head, cells, tail = row[:3], row[3 : 3 + len(rec.cells)], row[3 + len(rec.cells) :]
                writer.writerow(
                    [label, *head, *cells, *pad, *tail, repr(float(ei)), repr(float(et))]
                )
    return all_records
