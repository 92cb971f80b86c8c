"""Run configuration: strict INI ingestion, validation, scenario presets.

The file format is line-oriented ``key = value`` under the four sections
``[run]``, ``[material]``, ``[source]`` and ``[path]``. Unknown sections or
keys are rejected rather than ignored, so a typo cannot silently fall back
to a default.
"""

import configparser
import math
import os
from dataclasses import dataclass

from .assembly import (
    CircularArc,
    Geometry,
    HeatSource,
    Material,
    PolylinePath,
    alternating_tracks,
)
from .errors import DomainError

MODES = ("adaptive", "uniform", "non_admissible")

_RUN_KEYS = {
    "mode",
    "degree",
    "base_cells",
    "max_levels",
    "m",
    "alpha_r",
    "alpha_c",
    "dt",
    "n_steps",
    "t_end",
    "tol",
    "i_max_first",
    "i_max_rest",
    "side_length",
    "uniform_k",
    "sample_n",
    "coarsen",
    "out_dir",
}
_MATERIAL_KEYS = {"conductivity", "specific_heat", "density", "initial_temperature"}
_SOURCE_KEYS = {"power", "absorptivity", "radius"}
_PATH_KEYS = {
    "circular_arc": {"kind", "center_x", "center_y", "radius", "start_angle", "angular_speed"},
    "alternating_tracks": {
        "kind",
        "origin_x",
        "origin_y",
        "track_length",
        "hatch",
        "n_tracks",
        "speed",
    },
    "polyline": {"kind", "waypoints", "speeds"},
}


@dataclass(frozen=True)
class SimulationConfig:
    """Everything a run needs; validated on construction."""

    degree: int
    base_cells: int
    max_levels: int
    m: int
    alpha_r: float
    alpha_c: float
    dt: float
    n_steps: int
    material: Material
    source: HeatSource
    geometry: Geometry
    tol: float = 0.0
    i_max_first: int | None = None
    i_max_rest: int = 2
    mode: str = "adaptive"
    uniform_k: int | None = None
    sample_n: int = 33
    coarsen: bool = True
    out_dir: str | None = None

    def __post_init__(self):
        if self.mode not in MODES:
            raise DomainError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.degree < 1:
            raise DomainError("degree must be at least 1")
        if self.base_cells < 1:
            raise DomainError("base_cells must be at least 1")
        if self.max_levels < 1:
            raise DomainError("max_levels must be at least 1")
        for name in ("alpha_r", "alpha_c"):
            v = getattr(self, name)
            if not 0 < v <= 1:
                raise DomainError(f"{name} must be in (0, 1], got {v}")
        if self.dt <= 0:
            raise DomainError("dt must be positive")
        if self.n_steps < 1:
            raise DomainError("n_steps must be at least 1")
        if self.tol < 0:
            raise DomainError("tol must be nonnegative")
        if self.i_max_first is not None and self.i_max_first < 0:
            raise DomainError("i_max_first must be nonnegative")
        if self.i_max_rest < 0:
            raise DomainError("i_max_rest must be nonnegative")
        if self.sample_n < 2:
            raise DomainError("sample_n must be at least 2")
        if self.mode == "adaptive" and self.m < 2:
            raise DomainError("adaptive mode needs admissibility class m >= 2")
        if self.mode == "uniform":
            if self.uniform_k is None:
                raise DomainError("uniform mode needs uniform_k")
            if self.uniform_k < 0:
                raise DomainError("uniform_k must be nonnegative")
        elif self.uniform_k is not None:
            raise DomainError(f"uniform_k is only valid in uniform mode, not {self.mode!r}")
        if self.mode == "non_admissible" and self.m != self.max_levels:
            raise DomainError("non_admissible mode runs with m = max_levels")

    @property
    def first_cap(self) -> int:
        """Iteration cap for the first step (defaults to the level budget)."""
        if self.mode == "uniform":
            return 0
        return self.max_levels if self.i_max_first is None else self.i_max_first

    @property
    def rest_cap(self) -> int:
        return 0 if self.mode == "uniform" else self.i_max_rest

    @property
    def run_base_cells(self) -> int:
        """Cells per direction of the mesh the run actually starts on."""
        if self.mode == "uniform":
            return 2**self.uniform_k
        return self.base_cells

    @property
    def run_max_levels(self) -> int:
        return 1 if self.mode == "uniform" else self.max_levels

    @property
    def coarsening_on(self) -> bool:
        return self.coarsen and self.mode != "uniform"


def _section(cp: configparser.RawConfigParser, name: str) -> dict:
    if not cp.has_section(name):
        raise DomainError(f"missing [{name}] section")
    return dict(cp.items(name))


def _check_keys(section: str, data: dict, allowed: set) -> None:
    unknown = sorted(set(data) - allowed)
    if unknown:
        raise DomainError(f"unknown key(s) in [{section}]: {', '.join(unknown)}")


_MISSING = object()


def _conv(section: str, data: dict, key: str, kind, default=_MISSING, allow_inf=False):
    if key not in data:
        if default is _MISSING:
            raise DomainError(f"missing key {key!r} in [{section}]")
        return default
    raw = data[key]
    try:
        if kind is bool:
            states = configparser.RawConfigParser.BOOLEAN_STATES
            if raw.lower() not in states:
                raise ValueError(raw)
            return states[raw.lower()]
        if kind is int:
            return int(raw)
        value = float(raw)
        if math.isnan(value) or (not allow_inf and math.isinf(value)):
            raise ValueError(raw)
        return value
    except ValueError:
        raise DomainError(f"key {key!r} in [{section}]: cannot parse {raw!r} as {kind.__name__}")


def _parse_pairs(section: str, raw: str) -> tuple[tuple[float, float], ...]:
    pts = []
    for chunk in raw.split(";"):
        parts = chunk.split(",")
        if len(parts) != 2:
            raise DomainError(f"[{section}] waypoints: expected 'x,y' pairs, got {chunk!r}")
        try:
            pts.append((float(parts[0]), float(parts[1])))
        except ValueError:
            raise DomainError(f"[{section}] waypoints: cannot parse {chunk!r}")
    return tuple(pts)


def _parse_floats(section: str, raw: str) -> tuple[float, ...]:
    try:
        return tuple(float(v) for v in raw.split(","))
    except ValueError:
        raise DomainError(f"[{section}] speeds: cannot parse {raw!r}")


def _build_path(data: dict):
    kind = data.get("kind")
    if kind not in _PATH_KEYS:
        raise DomainError(f"[path] kind must be one of {sorted(_PATH_KEYS)}, got {kind!r}")
    _check_keys("path", data, _PATH_KEYS[kind])
    if kind == "circular_arc":
        return CircularArc(
            center=(_conv("path", data, "center_x", float), _conv("path", data, "center_y", float)),
            radius=_conv("path", data, "radius", float),
            start_angle=_conv("path", data, "start_angle", float, 0.0),
            angular_speed=_conv("path", data, "angular_speed", float),
        )
    if kind == "alternating_tracks":
        return alternating_tracks(
            origin=(_conv("path", data, "origin_x", float), _conv("path", data, "origin_y", float)),
            track_length=_conv("path", data, "track_length", float),
            hatch=_conv("path", data, "hatch", float),
            n_tracks=_conv("path", data, "n_tracks", int),
            speed=_conv("path", data, "speed", float),
        )
    if "waypoints" not in data or "speeds" not in data:
        raise DomainError("[path] polyline needs both waypoints and speeds")
    return PolylinePath(
        waypoints=_parse_pairs("path", data["waypoints"]),
        speeds=_parse_floats("path", data["speeds"]),
    )


def parse_config(text: str) -> SimulationConfig:
    """Build a validated SimulationConfig from INI text."""
    cp = configparser.RawConfigParser()
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise DomainError(f"malformed config: {exc}")
    known = {"run", "material", "source", "path"}
    extra = sorted(set(cp.sections()) - known)
    if extra:
        raise DomainError(f"unknown section(s): {', '.join(extra)}")

    run = _section(cp, "run")
    _check_keys("run", run, _RUN_KEYS)
    mat = _section(cp, "material")
    _check_keys("material", mat, _MATERIAL_KEYS)
    src = _section(cp, "source")
    _check_keys("source", src, _SOURCE_KEYS)
    path_data = _section(cp, "path")

    material = Material(
        conductivity=_conv("material", mat, "conductivity", float),
        specific_heat=_conv("material", mat, "specific_heat", float),
        density=_conv("material", mat, "density", float),
        initial_temperature=_conv("material", mat, "initial_temperature", float),
    )
    source = HeatSource(
        power=_conv("source", src, "power", float),
        absorptivity=_conv("source", src, "absorptivity", float),
        radius=_conv("source", src, "radius", float),
        path=_build_path(path_data),
    )
    geometry = Geometry(_conv("run", run, "side_length", float))

    dt = _conv("run", run, "dt", float)
    has_steps = "n_steps" in run
    has_tend = "t_end" in run
    if has_steps == has_tend:
        raise DomainError("[run] needs exactly one of n_steps or t_end")
    if has_steps:
        n_steps = _conv("run", run, "n_steps", int)
    else:
        t_end = _conv("run", run, "t_end", float)
        if t_end <= 0 or dt <= 0:
            raise DomainError("t_end and dt must be positive")
        n_steps = max(1, math.ceil(t_end / dt - 1e-9))

    mode = run.get("mode", "adaptive")
    max_levels = _conv("run", run, "max_levels", int)
    if mode == "non_admissible":
        m = _conv("run", run, "m", int, max_levels)
    else:
        m = _conv("run", run, "m", int, 2)

    return SimulationConfig(
        degree=_conv("run", run, "degree", int),
        base_cells=_conv("run", run, "base_cells", int, 1),
        max_levels=max_levels,
        m=m,
        alpha_r=_conv("run", run, "alpha_r", float),
        alpha_c=_conv("run", run, "alpha_c", float),
        dt=dt,
        n_steps=n_steps,
        material=material,
        source=source,
        geometry=geometry,
        tol=_conv("run", run, "tol", float, 0.0, allow_inf=True),
        i_max_first=_conv("run", run, "i_max_first", int, None),
        i_max_rest=_conv("run", run, "i_max_rest", int, 2),
        mode=mode,
        uniform_k=_conv("run", run, "uniform_k", int, None),
        sample_n=_conv("run", run, "sample_n", int, 33),
        coarsen=_conv("run", run, "coarsen", bool, True),
        out_dir=run.get("out_dir"),
    )


def load_config(path: str) -> SimulationConfig:
    if not os.path.isfile(path):
        raise DomainError(f"config file not found: {path}")
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read())


# -- scenario presets ----------------------------------------------------------------

# Single-track ring scan: high-power beam circling the plate center. The time
# step advances the beam half a beam radius per step.
_CIRCULAR_ARC = """\
[run]
mode = adaptive
degree = 3
base_cells = 1
max_levels = 7
m = 2
alpha_r = 0.1
alpha_c = 0.25
dt = 0.03184713375796178
n_steps = 40
side_length = 10.0
sample_n = 33

[material]
conductivity = 1.0
specific_heat = 1.0
density = 1.0
initial_temperature = 20.0

[source]
power = 900000.0
absorptivity = 0.33
radius = 0.1

[path]
kind = circular_arc
center_x = 5.0
center_y = 5.0
radius = 2.5
start_angle = 0.0
angular_speed = 0.628
"""

# Serpentine multi-track scan with nickel-alloy constants.
_ALTERNATING = """\
[run]
mode = adaptive
degree = 3
base_cells = 1
max_levels = 7
m = 2
alpha_r = 0.08
alpha_c = 0.25
dt = 0.003125
n_steps = 40
side_length = 10.0
sample_n = 33

[material]
conductivity = 0.029
specific_heat = 650.0
density = 8440.0
initial_temperature = 25.0

[source]
power = 190.0
absorptivity = 0.33
radius = 0.05

[path]
kind = alternating_tracks
origin_x = 1.0
origin_y = 5.0
track_length = 8.0
hatch = 0.05
n_tracks = 4
speed = 8.0
"""

PRESETS = {"circular_arc": _CIRCULAR_ARC, "alternating": _ALTERNATING}


def preset_text(name: str) -> str:
    if name not in PRESETS:
        raise DomainError(f"unknown preset {name!r}; available: {', '.join(sorted(PRESETS))}")
    return PRESETS[name]


def preset_config(name: str) -> SimulationConfig:
    return parse_config(preset_text(name))
