"""Figure generation for simulator step CSVs."""

from .figures import KINDS, PANELS, plot_dofs, plot_energies, plot_errors, plot_walltime, render
from .series import RunSeries, SchemaError, load_many, load_runs

__version__ = "0.1.0"

__all__ = [
    "KINDS",
    "PANELS",
    "RunSeries",
    "SchemaError",
    "load_many",
    "load_runs",
    "plot_dofs",
    "plot_energies",
    "plot_errors",
    "plot_walltime",
    "render",
]
