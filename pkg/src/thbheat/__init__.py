"""Adaptive isogeometric heat transfer on truncated hierarchical B-splines.

The package layers as splines -> hierarchy -> assembly -> solver ->
adaptivity -> config/driver/cli; this module re-exports the everyday API.
"""

from .adaptivity import (
    MarkedSet,
    coarsen,
    mark_max,
    mark_min,
    project_l2,
    refine,
    transfer_refine,
)
from .assembly import (
    CircularArc,
    FieldEvaluator,
    Geometry,
    HeatSource,
    Material,
    PolylinePath,
    SystemMatrices,
    alternating_tracks,
    assemble,
    evaluate_field_params,
    gram_matrix,
    moment_vector,
    sample_field,
    write_field_csv,
    write_vtk,
)
from .config import SimulationConfig, load_config, parse_config, preset_config, preset_text
from .driver import StepRecord, adaptive_iterate, run, run_comparison
from .errors import (
    CapacityWarning,
    DomainError,
    NumericalError,
    StalenessError,
    StructuralError,
)
from .hierarchy import (
    CellIndex,
    HierarchicalMesh,
    HierarchicalSpace,
    StateVector,
    build_initial,
    coarsening_neighborhood,
    dump_mesh,
    dump_mesh_path,
    is_admissible,
    reactivate_cell,
    refinement_neighborhood,
    subdivide_cell,
    thb_eval,
)
from .solver import (
    Estimate,
    TimeStepper,
    advance,
    backward_euler_step,
    estimate,
    heat_content,
    internal_energy,
    linear_solve,
    relative_energy_errors,
    total_energy,
)
from .splines import FunctionIndex, KnotVector, TensorSpace

__version__ = "0.1.0"
