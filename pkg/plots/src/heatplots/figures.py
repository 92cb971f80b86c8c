"""Step-series figures: DOFs, relative errors, energies, wall time.

The Agg backend is forced before pyplot loads so rendering works headless;
figures are static files by design. Every renderer returns the exact arrays
it drew, so callers can dump them for round-trip checks.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

from .series import RunSeries, SchemaError

# kind -> panels of (column, axis label, log-scale y)
PANELS: dict[str, tuple[tuple[str, str, bool], ...]] = {
    "dofs": (("n_dofs", "degrees of freedom", True),),
    "errors": (
        ("eps_i", "relative internal-energy error", True),
        ("eps_T", "relative total-energy error", True),
    ),
    "energies": (
        ("E_i", "internal energy", False),
        ("E_T", "total energy", False),
    ),
    "walltime": (("wall_ms", "wall time per step [ms]", False),),
}
KINDS = tuple(PANELS)


def _validate(kind: str, series: list[RunSeries]) -> None:
    if kind not in PANELS:
        raise SchemaError(f"unknown figure kind {kind!r}; expected one of {', '.join(KINDS)}")
    if not series:
        raise SchemaError("need at least one series")
    first = series[0]
    for s in series[1:]:
        if s.steps != first.steps:
            raise SchemaError(
                f"step ranges differ between series {first.label!r} and {s.label!r}"
            )
    for metric, _, _ in PANELS[kind]:
        for s in series:
            if metric not in s.columns:
                raise SchemaError(
                    f"series {s.label!r} has no {metric} column; "
                    f"the {kind} figure needs a merged comparison file"
                    if metric in ("eps_i", "eps_T")
                    else f"series {s.label!r} has no {metric} column"
                )


def render(kind: str, series: list[RunSeries], out: str | Path) -> dict:
    """Draw one figure of the given kind; returns the plotted arrays."""
    _validate(kind, series)
    panels = PANELS[kind]
    fig, axes = plt.subplots(
        1, len(panels), figsize=(6.4 * len(panels), 4.8), squeeze=False
    )
    payload: dict = {"kind": kind, "panels": []}
    for ax, (metric, title, log_y) in zip(axes[0], panels):
        entry: dict = {"metric": metric, "series": []}
        for s in series:
            ax.plot(s.steps, s.columns[metric], marker="o", markersize=3, label=s.label)
            entry["series"].append(
                {"label": s.label, "step": list(s.steps), "values": list(s.columns[metric])}
            )
        if log_y:
            ax.set_yscale("log")
        ax.set_xlabel("step")
        ax.set_ylabel(title)
        ax.grid(True, alpha=0.3)
        ax.legend()
        payload["panels"].append(entry)
    fig.tight_layout()
    fig.savefig(out, dpi=150)
    plt.close(fig)
    return payload


def plot_dofs(series: list[RunSeries], out: str | Path) -> dict:
    return render("dofs", series, out)


def plot_errors(series: list[RunSeries], out: str | Path) -> dict:
    return render("errors", series, out)


def plot_energies(series: list[RunSeries], out: str | Path) -> dict:
    return render("energies", series, out)


def plot_walltime(series: list[RunSeries], out: str | Path) -> dict:
    return render("walltime", series, out)
