"""Scenario orchestration: configuration, the phase state machine, the coupled
orbit/attitude loop, and results emission."""
from __future__ import annotations

import dataclasses
import json
import logging
import math
from dataclasses import dataclass, field
from datetime import datetime, timezone
from enum import Enum
from pathlib import Path
from typing import Any

import numpy as np

from . import __version__
from . import environment as env
from .control import (DEG, ActuatorLimits, BdotEstimator, ControlGains, DesaturationTrigger,
                      TargetSpec, WheelState, attitude_error, compute_k_det, desaturation_command,
                      detumble_command, geomagnetic_inclination, lyapunov_value, pointing_error,
                      tracking_torque, wheel_allocation)
from .dynamics import (SpacecraftProperties, step_wheel_coupled, torque_aero, torque_gravity_gradient,
                       torque_magnetic, torque_srp)
from .estimation import (FilterParams, RateEstimator, attitude_error_angle, quest, triad)
from .mathcore import cross, normalize, quat_to_dcm, u_matrix
from .orbit import (OrbitPropagator, PerturbationSwitches, PropagationError, elements_from_tle, elements_to_state, parse_tle,
                    read_tle_file)
from .sensing import (ARCSEC, SensorSuite, StarCatalog, StarCatalogEntry, TrackerStatus, catalog_direction,
                      sample_frame)

log = logging.getLogger(__name__)

CSV_SCHEMA_VERSION = 1


class ConfigError(ValueError):
    """Invalid scenario configuration; the message names the offending key path."""


class ActuatorLimitViolation(AssertionError):
    pass


# ---------------------------------------------------------------- configuration

@dataclass
class StepConfig:
    orbit_dt: float = 1.0
    detumble_dt: float = 0.5
    pointing_dt: float = 0.1

    def validate(self, path: str) -> None:
        for name in ("orbit_dt", "detumble_dt", "pointing_dt"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{path}.{name}: must be positive")
            if name != "orbit_dt":
                ratio = self.orbit_dt / getattr(self, name)
                if abs(ratio - round(ratio)) > 1e-9:
                    raise ConfigError(f"{path}.{name}: attitude step must divide orbit_dt={self.orbit_dt}")


@dataclass
class ThresholdConfig:
    detumble_exit_deg_s: float = 0.05
    detumble_exit_hold_s: float = 60.0
    detumble_metric_deg_s: float = 0.1
    track_entry_deg: float = 1.0
    track_entry_hold_s: float = 30.0
    safe_hold_deg_s: float = 5.0

    def validate(self, path: str) -> None:
        for f in dataclasses.fields(self):
            if not getattr(self, f.name) > 0:
                raise ConfigError(f"{path}.{f.name}: must be positive")


@dataclass
class FilterConfig:
    detumble_w1: float = 1.0      # rad/s
    pointing_w2: float = 2.0      # rad/s
    xi: float = 0.7
    bdot_cutoff: float = 5.0      # rad/s

    def validate(self, path: str) -> None:
        try:
            FilterParams(self.detumble_w1, self.pointing_w2, self.xi, 1.0)
        except ValueError as exc:
            raise ConfigError(f"{path}: {exc}") from None
        if not self.bdot_cutoff > 0:
            raise ConfigError(f"{path}.bdot_cutoff: must be positive")


@dataclass
class GainConfig:
    k_w: float = 0.01
    k_A: float = 0.0004
    k_det: float | None = None          # None: computed from the orbit
    xi_m_deg: float | None = None       # None: computed from the orbit and dipole geometry
    detumble_threshold_deg_s: float = 1.0

    def validate(self, path: str) -> None:
        if not (self.k_w > 0 and self.k_A > 0):
            raise ConfigError(f"{path}: k_w and k_A must be positive")
        if self.k_det is not None and not self.k_det > 0:
            raise ConfigError(f"{path}.k_det: must be positive")
        if not self.detumble_threshold_deg_s > 0:
            raise ConfigError(f"{path}.detumble_threshold_deg_s: must be positive")


@dataclass
class LimitConfig:
    M_max: float = 2e-3
    h_max: float = 30e-3
    rotor_inertia: float = 5.12e-5
    m_max: float = 0.12

    def validate(self, path: str) -> None:
        try:
            self.build()
        except ValueError as exc:
            raise ConfigError(f"{path}: {exc}") from None

    def build(self) -> ActuatorLimits:
        return ActuatorLimits(self.M_max, self.h_max, self.rotor_inertia, self.m_max)


@dataclass
class SensorConfig:
    sun_sigma_deg: float = 1.25
    sun_fov_half_deg: float = 53.96
    mag_sigma_deg: float = 1.0
    star_sigma_arcsec: float = 70.0
    star_fov_half_deg: float = 90.0
    star_startup_s: float = 3600.0
    min_stars: int = 4
    sun_exclusion_deg: float = 30.0
    boresight: list = field(default_factory=lambda: [1.0, 0.0, 0.0])

    def validate(self, path: str) -> None:
        try:
            self.build(0)
        except ValueError as exc:
            raise ConfigError(f"{path}: {exc}") from None

    def build(self, seed: int) -> SensorSuite:
        kw = dataclasses.asdict(self)
        kw["boresight"] = tuple(float(x) for x in kw["boresight"])
        return SensorSuite(**kw, seed=seed)


@dataclass
class DesatConfig:
    enabled: bool = True
    start_frac: float = 0.9
    stop_frac: float = 0.2
    min_angle_deg: float = 45.0

    def validate(self, path: str) -> None:
        if not 0.0 < self.stop_frac < self.start_frac <= 1.0:
            raise ConfigError(f"{path}: need 0 < stop_frac < start_frac <= 1")


@dataclass
class InitialConfig:
    q: list | None = None                 # scalar-last, ECI -> body
    w_deg_s: list | None = None
    tumble_deg_s: float | None = None     # random axis at this rate (overrides w_deg_s)
    wheel_momentum: list = field(default_factory=lambda: [0.0, 0.0, 0.0])  # N m s
    mode: str = "detumble"

    def validate(self, path: str) -> None:
        if self.q is not None and (len(self.q) != 4 or not np.linalg.norm(self.q) > 0):
            raise ConfigError(f"{path}.q: expected four components, not all zero")
        if self.w_deg_s is not None and len(self.w_deg_s) != 3:
            raise ConfigError(f"{path}.w_deg_s: expected three components")
        if len(self.wheel_momentum) != 3:
            raise ConfigError(f"{path}.wheel_momentum: expected three components")
        if self.mode not in ("detumble", "slew"):
            raise ConfigError(f"{path}.mode: must be 'detumble' or 'slew'")
        if self.tumble_deg_s is not None and self.tumble_deg_s < 0:
            raise ConfigError(f"{path}.tumble_deg_s: must be non-negative")


@dataclass
class PerturbationConfig:
    j2: bool = True
    drag: bool = True
    srp: bool = True
    third_body: bool = True


@dataclass
class DisturbanceConfig:
    gravity_gradient: bool = True
    aero: bool = True
    srp: bool = True
    magnetic: bool = True


@dataclass
class OutputConfig:
    dir: str = "out"
    decimation: int = 1

    def validate(self, path: str) -> None:
        if self.decimation < 1:
            raise ConfigError(f"{path}.decimation: must be >= 1")


@dataclass
class ScenarioConfig:
    name: str = "scenario"
    tle_file: str | None = None
    tle_lines: list | None = None
    epoch: str | None = None
    spacecraft: Any = None                 # path to JSON or an inline mapping
    catalog: str | None = None
    targets: list = field(default_factory=lambda: ["Alpha Circini"])
    track_duration_s: float = 900.0
    stop_after_detumble: bool = False
    duration_s: float = 36000.0
    seed: int = 0
    initial: InitialConfig = field(default_factory=InitialConfig)
    steps: StepConfig = field(default_factory=StepConfig)
    thresholds: ThresholdConfig = field(default_factory=ThresholdConfig)
    filters: FilterConfig = field(default_factory=FilterConfig)
    gains: GainConfig = field(default_factory=GainConfig)
    limits: LimitConfig = field(default_factory=LimitConfig)
    sensors: SensorConfig = field(default_factory=SensorConfig)
    desaturation: DesatConfig = field(default_factory=DesatConfig)
    perturbations: PerturbationConfig = field(default_factory=PerturbationConfig)
    disturbances: DisturbanceConfig = field(default_factory=DisturbanceConfig)
    output: OutputConfig = field(default_factory=OutputConfig)
    base_dir: str = field(default=".", metadata={"internal": True})

    def validate(self, path: str = "config") -> None:
        if not self.targets:
            raise ConfigError(f"{path}.targets: at least one target is required")
        if not self.track_duration_s > 0:
            raise ConfigError(f"{path}.track_duration_s: must be positive")
        if not self.duration_s > 0:
            raise ConfigError(f"{path}.duration_s: must be positive")
        if self.tle_file is not None and self.tle_lines is not None:
            raise ConfigError(f"{path}: give tle_file or tle_lines, not both")
        if self.tle_lines is not None and len(self.tle_lines) not in (2, 3):
            raise ConfigError(f"{path}.tle_lines: expected two or three lines")
        for f in dataclasses.fields(self):
            sub = getattr(self, f.name)
            if dataclasses.is_dataclass(sub) and hasattr(sub, "validate"):
                sub.validate(f"{path}.{f.name}")

    def resolve(self, p: str) -> Path:
        q = Path(p)
        return q if q.is_absolute() else Path(self.base_dir) / q


_SCALAR_TYPES = {"float": (int, float), "int": (int,), "bool": (bool,), "str": (str,)}


def _check_scalar(value, type_str: str, path: str):
    t = type_str.replace(" ", "")
    optional = t.endswith("|None")
    base = t[: -len("|None")] if optional else t
    if value is None:
        if optional or base == "Any":
            return None
        raise ConfigError(f"{path}: must not be null")
    if base in ("float", "int"):
        if isinstance(value, bool) or not isinstance(value, _SCALAR_TYPES[base]):
            raise ConfigError(f"{path}: expected a number, got {type(value).__name__}")
        return float(value) if base == "float" else value
    if base in _SCALAR_TYPES and not isinstance(value, _SCALAR_TYPES[base]):
        raise ConfigError(f"{path}: expected {base}, got {type(value).__name__}")
    if base == "list" and not isinstance(value, list):
        raise ConfigError(f"{path}: expected a list, got {type(value).__name__}")
    return value


def _build(cls, data, path: str):
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: expected an object, got {type(data).__name__}")
    fields = {f.name: f for f in dataclasses.fields(cls) if not f.metadata.get("internal")}
    unknown = sorted(set(data) - set(fields))
    if unknown:
        raise ConfigError(f"{path}.{unknown[0]}: unknown key")
    kwargs = {}
    for name, value in data.items():
        f = fields[name]
        default = f.default_factory() if f.default_factory is not dataclasses.MISSING else f.default
        if dataclasses.is_dataclass(default):
            kwargs[name] = _build(type(default), value, f"{path}.{name}")
        else:
            kwargs[name] = _check_scalar(value, str(f.type), f"{path}.{name}")
    return cls(**kwargs)


def config_from_dict(data: dict, base_dir: str | Path = ".") -> ScenarioConfig:
    cfg = _build(ScenarioConfig, data, "config")
    cfg.base_dir = str(base_dir)
    cfg.validate()
    return cfg


def load_config(path: str | Path) -> ScenarioConfig:
    """Parse and validate a scenario JSON file; unknown keys are rejected."""
    path = Path(path)
    try:
        data = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None
    return config_from_dict(data, path.parent)


# ---------------------------------------------------------------- phase logic

class Mode(str, Enum):
    DETUMBLE = "detumble"
    SLEW = "slew"
    TRACK = "track"
    DONE = "done"


class Source(str, Enum):
    SUN_MAG = "sun_mag"
    STAR_TRACKER = "star_tracker"
    NONE = "none"


def sensor_selection(t: float, mode: Mode, eclipse: bool, tracker_status: TrackerStatus,
                     sun_valid: bool = True) -> Source:
    """Determination source for this step.

    The star tracker is used whenever it reports a valid solution; otherwise the
    sun sensor and magnetometer pair if the sun is visible; otherwise none (the
    estimator coasts on its last attitude and filtered rate).
    """
    if tracker_status == TrackerStatus.OK:
        return Source.STAR_TRACKER
    if not eclipse and sun_valid:
        return Source.SUN_MAG
    return Source.NONE


@dataclass
class PhaseState:
    mode: Mode
    entered: float
    target: int = 0
    timer_start: float | None = None   # start of the current "condition holds" window

    def enter(self, mode: Mode, t: float) -> None:
        self.mode, self.entered, self.timer_start = mode, t, None


_ALLOWED = {
    Mode.DETUMBLE: {Mode.SLEW, Mode.DONE},
    Mode.SLEW: {Mode.TRACK, Mode.DETUMBLE, Mode.DONE},
    Mode.TRACK: {Mode.SLEW, Mode.DETUMBLE, Mode.DONE},
    Mode.DONE: set(),
}


def _transition(phase: PhaseState, mode: Mode, t: float) -> None:
    if mode not in _ALLOWED[phase.mode]:
        raise RuntimeError(f"illegal mode transition {phase.mode.value} -> {mode.value}")
    log.info("t=%.1f s: %s -> %s", t, phase.mode.value, mode.value)
    phase.enter(mode, t)


# ---------------------------------------------------------------- time series

COLUMNS = (
    ["t", "mode", "target", "source", "tracker", "eclipse", "sun_valid"]
    + ["q1", "q2", "q3", "q4", "wx", "wy", "wz"]
    + ["qe1", "qe2", "qe3", "qe4", "wex", "wey", "wez"]
    + ["Lc1", "Lc2", "Lc3", "Lr1", "Lr2", "Lr3", "h1", "h2", "h3", "m1", "m2", "m3"]
    + ["theta_e_deg", "est_err_arcsec", "V", "desat", "wheel_sat"]
)
_TEXT_COLUMNS = {"mode", "source", "tracker"}


class TimeSeries:
    """Column store of per-step records plus the run parameters needed to summarize them."""

    def __init__(self, params: dict | None = None):
        self.params = dict(params or {})
        self._rows: list[list] = []
        self._cols: dict[str, np.ndarray] | None = None

    def append(self, row: list) -> None:
        self._rows.append(row)
        self._cols = None

    def __len__(self) -> int:
        return len(self._rows)

    def column(self, name: str) -> np.ndarray:
        if self._cols is None:
            self._cols = {}
            for j, c in enumerate(COLUMNS):
                vals = [r[j] for r in self._rows]
                self._cols[c] = np.array(vals, dtype=object if c in _TEXT_COLUMNS else float)
        return self._cols[name]

    @staticmethod
    def _fmt(v) -> str:
        if isinstance(v, str):
            return v
        if isinstance(v, (bool, np.bool_)):
            return str(int(v))
        if isinstance(v, (int, np.integer)):
            return str(int(v))
        return format(float(v), ".12g")

    def write_csv(self, path: str | Path) -> None:
        """Write the series; the first two lines are comments with schema version and run parameters."""
        with open(path, "w", newline="") as fh:
            fh.write(f"# adcs-sim timeseries schema v{CSV_SCHEMA_VERSION}\n")
            fh.write("# params " + json.dumps(self.params, sort_keys=True) + "\n")
            fh.write(",".join(COLUMNS) + "\n")
            for row in self._rows:
                fh.write(",".join(self._fmt(v) for v in row) + "\n")


def emit_csv(series: TimeSeries, path: str | Path) -> None:
    series.write_csv(path)


def read_csv(path: str | Path) -> TimeSeries:
    with open(path) as fh:
        first = fh.readline()
        if not first.startswith("# adcs-sim timeseries schema v"):
            raise ValueError(f"{path}: not an adcs-sim time series")
        version = int(first.strip().rsplit("v", 1)[1])
        if version != CSV_SCHEMA_VERSION:
            raise ValueError(f"{path}: unsupported schema version {version}")
        params = json.loads(fh.readline()[len("# params "):])
        header = fh.readline().strip().split(",")
        if header != COLUMNS:
            raise ValueError(f"{path}: unexpected columns")
        series = TimeSeries(params)
        for line in fh:
            parts = line.rstrip("\n").split(",")
            series.append([p if c in _TEXT_COLUMNS else float(p) for c, p in zip(COLUMNS, parts)])
    return series


# ---------------------------------------------------------------- summary

def _first_sustained(t: np.ndarray, ok: np.ndarray, hold: float) -> float | None:
    """Start time of the first window where ``ok`` holds for at least ``hold`` seconds."""
    start = None
    for ti, oi in zip(t, ok):
        if oi:
            if start is None:
                start = ti
            if ti - start >= hold:
                return float(start)
        else:
            start = None
    return None


def _verdict(flag: bool | None) -> str:
    return "n/a" if flag is None else ("pass" if flag else "fail")


def summary_report(series: TimeSeries) -> dict:
    """Mission metrics and requirement flags recomputed from a time series.

    Requirement flags are ``True``/``False`` or ``None`` when the run did not
    exercise them. ``blocking`` lists the flags that set the CLI exit code.
    """
    p = series.params
    out: dict[str, Any] = {"name": p.get("name"), "samples": len(series)}
    if len(series) == 0:
        out["requirements"] = {}
        out["blocking"] = []
        out["all_blocking_pass"] = True
        return out
    t = series.column("t")
    mode = series.column("mode")
    w_est = np.linalg.norm(np.column_stack([series.column(c) for c in ("wex", "wey", "wez")]), axis=1)
    w_true = np.linalg.norm(np.column_stack([series.column(c) for c in ("wx", "wy", "wz")]), axis=1)
    thr = p.get("detumble_metric_deg_s", 0.1) * DEG
    det_rows = mode == Mode.DETUMBLE.value
    if det_rows.any():
        hold = p.get("detumble_exit_hold_s", 60.0)
        out["detumble_time_s"] = _first_sustained(t, w_est < thr, hold)
        out["detumble_time_true_s"] = _first_sustained(t, w_true < thr, hold)
    else:
        out["detumble_time_s"] = out["detumble_time_true_s"] = None
    exits = [float(t[k]) for k in range(1, len(t)) if mode[k - 1] == Mode.DETUMBLE.value and mode[k] != Mode.DETUMBLE.value]
    if not exits and p.get("stop_after_detumble") and mode[-1] == Mode.DETUMBLE.value:
        exits = [float(t[-1])]
    out["detumble_exit_s"] = exits[0] if exits else None
    out["initial_rate_deg_s"] = float(w_true[0] / DEG)
    out["final_rate_deg_s"] = float(w_true[-1] / DEG)
    out["detumble_samples"] = int(det_rows.sum())

    theta = series.column("theta_e_deg")
    est_err = series.column("est_err_arcsec")
    target = series.column("target")
    names = p.get("targets", [])
    window = p.get("rms_window_s", 900.0)
    track_len = p.get("track_duration_s", 900.0)
    tracks = []
    for k, name in enumerate(names):
        sel = (mode == Mode.TRACK.value) & (target == k)
        if not sel.any():
            tracks.append({"target": name, "tracked_s": 0.0, "completed": False})
            continue
        ts = t[sel]
        span = float(ts[-1] - ts[0] + p.get("sample_dt", 0.0))
        last = sel & (t >= ts[-1] - window)
        tracks.append({
            "target": name,
            "track_start_s": float(ts[0]),
            "tracked_s": span,
            "completed": span >= track_len - 1e-6,
            "theta_rms_deg": float(np.sqrt(np.mean(theta[last] ** 2))),
            "theta_max_deg": float(np.max(theta[sel])),
            "determination_rms_arcsec": float(np.sqrt(np.mean(est_err[sel] ** 2))),
        })
    out["tracks"] = tracks
    h = np.column_stack([series.column(c) for c in ("h1", "h2", "h3")])
    m = np.column_stack([series.column(c) for c in ("m1", "m2", "m3")])
    out["max_wheel_momentum_Nms"] = float(np.max(np.abs(h)))
    out["max_dipole_Am2"] = float(np.max(np.abs(m)))
    out["final_wheel_momentum_Nms"] = [float(x) for x in h[-1]]
    desat = series.column("desat")
    out["desaturation_events"] = int(np.sum((desat[1:] > 0) & (desat[:-1] == 0)) + (desat[0] > 0))
    on = np.flatnonzero(desat > 0)
    off = np.flatnonzero((desat[:-1] > 0) & (desat[1:] == 0)) + 1
    out["first_dump_start_s"] = float(t[on[0]]) if on.size else None
    out["first_dump_end_s"] = float(t[off[0]]) if off.size else None
    out["wheel_saturation_steps"] = int(np.sum(series.column("wheel_sat") > 0))
    lim = p.get("limits", {})
    viol = 0
    if lim:
        viol += int(np.sum(np.abs(h) > lim["h_max"] * (1 + 1e-9)))
        viol += int(np.sum(np.abs(m) > lim["m_max"] * (1 + 1e-9)))
    out["actuator_violations"] = viol

    req: dict[str, bool | None] = {}
    if p.get("stop_after_detumble"):
        req["detumble_completed"] = out["detumble_time_s"] is not None
        req["imaging_15min"] = None
        req["multiple_targets"] = None
        req["pointing_requirement"] = None
        req["pointing_1arcmin"] = None
        req["determination_10arcsec"] = None
    else:
        done = [tr for tr in tracks if tr["completed"]]
        req["detumble_completed"] = None
        req["imaging_15min"] = len(done) == len(tracks)
        req["multiple_targets"] = (len(done) >= 2) if len(tracks) >= 2 else None
        req["pointing_requirement"] = bool(done) and all(tr["theta_rms_deg"] < 1.0 and tr["theta_max_deg"] < 1.0
                                                         for tr in done) and len(done) == len(tracks)
        req["pointing_1arcmin"] = bool(done) and all(tr["theta_rms_deg"] < 1.0 / 60.0 for tr in done)
        req["determination_10arcsec"] = bool(done) and all(tr["determination_rms_arcsec"] < 10.0 for tr in done)
    req["actuator_limits"] = viol == 0
    out["requirements"] = {k: _verdict(v) for k, v in req.items()}
    out["blocking"] = ["detumble_completed", "imaging_15min", "multiple_targets", "pointing_requirement",
                       "actuator_limits"]
    out["all_blocking_pass"] = all(req[k] is not False for k in out["blocking"])
    out["pointing_rms_thresholds_deg"] = {"requirement": 1.0, "goal": 1.0 / 60.0}
    return out


# ---------------------------------------------------------------- simulation

def _resolve_tle(cfg: ScenarioConfig):
    from importlib import resources
    if cfg.tle_lines is not None:
        lines = [str(x) for x in cfg.tle_lines]
        return parse_tle(lines[-2], lines[-1], lines[0].strip() if len(lines) == 3 else "")
    if cfg.tle_file is not None:
        return read_tle_file(cfg.resolve(cfg.tle_file))[0]
    text = resources.files("adcs_sim").joinpath("data/brite_40020.tle").read_text().splitlines()
    return parse_tle(text[1], text[2], text[0].strip())


def _resolve_spacecraft(cfg: ScenarioConfig) -> SpacecraftProperties:
    if cfg.spacecraft is None:
        return SpacecraftProperties()
    if isinstance(cfg.spacecraft, dict):
        return SpacecraftProperties.from_dict(cfg.spacecraft)
    return SpacecraftProperties.from_json(cfg.resolve(str(cfg.spacecraft)))


def _resolve_targets(cfg: ScenarioConfig, catalog: StarCatalog) -> list[TargetSpec]:
    out = []
    for k, item in enumerate(cfg.targets):
        if isinstance(item, str):
            try:
                entry = catalog[item]
            except KeyError:
                raise ConfigError(f"config.targets[{k}]: '{item}' is not in the star catalog") from None
        elif isinstance(item, dict):
            try:
                entry = StarCatalogEntry.from_strings(item["name"], item["ra_hms"], item["dec_dms"])
            except (KeyError, ValueError) as exc:
                raise ConfigError(f"config.targets[{k}]: {exc}") from None
        else:
            raise ConfigError(f"config.targets[{k}]: expected a name or an object")
        out.append(TargetSpec(entry.name, catalog_direction(entry)))
    return out


def _initial_attitude(cfg: ScenarioConfig) -> tuple[np.ndarray, np.ndarray]:
    init = cfg.initial
    rng = np.random.default_rng([cfg.seed, 1])
    q = normalize(np.asarray(init.q, float)) if init.q is not None else normalize(rng.standard_normal(4))
    if init.tumble_deg_s is not None:
        axis = rng.standard_normal(3)
        w = init.tumble_deg_s * DEG * axis / np.linalg.norm(axis)
    elif init.w_deg_s is not None:
        w = np.asarray(init.w_deg_s, float) * DEG
    else:
        w = np.zeros(3)
    if q[3] < 0:
        q = -q
    return q, w


def run_scenario(cfg: ScenarioConfig, progress: bool = False) -> tuple[TimeSeries, dict]:
    """Run the coupled orbit/attitude simulation described by ``cfg``.

    Returns:
        The per-step time series and its summary report.

    Raises:
        ActuatorLimitViolation: if any realized command exceeds a hardware limit.
        orbit.PropagationError: on orbit failures (message carries the mode).
    """
    tle = _resolve_tle(cfg)
    epoch = datetime.fromisoformat(cfg.epoch).astimezone(timezone.utc) if cfg.epoch else tle.epoch
    elements = elements_from_tle(tle)
    x_orb = elements_to_state(elements).as_vector()
    props = _resolve_spacecraft(cfg)
    J, J_inv = props.J, props.J_inv
    catalog = StarCatalog.from_csv(cfg.resolve(cfg.catalog)) if cfg.catalog else StarCatalog.default()
    targets = _resolve_targets(cfg, catalog)
    suite = cfg.sensors.build(cfg.seed)
    limits = cfg.limits.build()
    dist = cfg.disturbances
    thr = cfg.thresholds
    steps = cfg.steps

    # detumbling gain from the orbit period and geomagnetic inclination
    if cfg.gains.k_det is not None:
        k_det, xi_m = cfg.gains.k_det, float("nan")
    else:
        if cfg.gains.xi_m_deg is not None:
            xi_m = math.radians(cfg.gains.xi_m_deg)
        else:
            h_orb = cross(x_orb[:3], x_orb[3:])
            xi_m = geomagnetic_inclination(h_orb, env.dipole_axis(env.EpochTime(0.0, epoch)))
        k_det = compute_k_det(elements.period, xi_m, J)
    gains = ControlGains(cfg.gains.k_w, cfg.gains.k_A, k_det, cfg.gains.detumble_threshold_deg_s * DEG)

    q, w = _initial_attitude(cfg)
    wheels = WheelState(np.asarray(cfg.initial.wheel_momentum, float))
    if np.any(np.abs(wheels.h) > limits.h_max):
        raise ConfigError("config.initial.wheel_momentum: exceeds h_max")

    phase = PhaseState(Mode(cfg.initial.mode), 0.0)
    detumble_params = FilterParams(cfg.filters.detumble_w1, cfg.filters.pointing_w2, cfg.filters.xi, steps.detumble_dt)
    pointing_params = FilterParams(cfg.filters.detumble_w1, cfg.filters.pointing_w2, cfg.filters.xi, steps.pointing_dt)
    in_detumble = phase.mode == Mode.DETUMBLE
    rates = RateEstimator(detumble_params if in_detumble else pointing_params, order=1 if in_detumble else 2)
    bdot = BdotEstimator(cfg.filters.bdot_cutoff)
    trigger = DesaturationTrigger(limits, cfg.desaturation.start_frac, cfg.desaturation.stop_frac,
                                  cfg.desaturation.min_angle_deg)

    snapshot = {"A": quat_to_dcm(q)}
    sw = cfg.perturbations
    prop = OrbitPropagator(PerturbationSwitches(sw.j2, sw.drag, sw.srp, sw.third_body), epoch,
                           lambda t_, u: props.projected_area(snapshot["A"] @ u),
                           props.mass, props.cd, props.cr)

    params = {
        "name": cfg.name,
        "version": __version__,
        "seed": cfg.seed,
        "targets": [tg.name for tg in targets],
        "track_duration_s": cfg.track_duration_s,
        "rms_window_s": min(900.0, cfg.track_duration_s),
        "detumble_metric_deg_s": thr.detumble_metric_deg_s,
        "detumble_exit_hold_s": thr.detumble_exit_hold_s,
        "stop_after_detumble": cfg.stop_after_detumble,
        "limits": dataclasses.asdict(limits),
        "k_det": k_det,
        "xi_m_deg": math.degrees(xi_m) if not math.isnan(xi_m) else None,
        "sample_dt": steps.pointing_dt * cfg.output.decimation,
    }
    series = TimeSeries(params)

    q_est = q.copy()
    w_est = np.zeros(3)
    rate_known = False      # at least one rate difference has been formed
    t = 0.0
    step_index = 0
    tol_M = limits.M_max * (1 + 1e-12)
    tol_h = limits.h_max * (1 + 1e-12)
    tol_m = limits.m_max * (1 + 1e-12)
    residual = props.residual_dipole
    next_report = 3600.0

    while t < cfg.duration_s - 1e-9 and phase.mode != Mode.DONE:
        # orbit step, with environment at both ends for interpolation
        et = env.EpochTime(t, epoch)
        r0, v0 = x_orb[:3].copy(), x_orb[3:].copy()
        sun = env.sun_direction(et)
        shadow = env.eclipse(r0, sun)
        B0 = env.magnetic_field(r0, et)
        snapshot["A"] = quat_to_dcm(q)
        try:
            x_next = prop.step(t, x_orb, steps.orbit_dt)
        except PropagationError as exc:
            raise PropagationError(f"{exc.message} (mode {phase.mode.value})", exc.t) from exc
        B1 = env.magnetic_field(x_next[:3], env.EpochTime(t + steps.orbit_dt, epoch))

        dt = steps.detumble_dt if phase.mode == Mode.DETUMBLE else steps.pointing_dt
        n_sub = int(round(steps.orbit_dt / dt))
        for j in range(n_sub):
            tau = j * dt
            ts = t + tau
            f = tau / steps.orbit_dt
            r = r0 + v0 * tau
            B_eci = (1.0 - f) * B0 + f * B1
            A = quat_to_dcm(q)

            # sense
            frame = sample_frame(ts, A, sun, B_eci, shadow, catalog, suite)
            source = sensor_selection(ts, phase.mode, shadow, frame.tracker_status, frame.sun_valid)

            # determine
            if source == Source.STAR_TRACKER:
                q_new = quest([(o.body, o.eci) for o in frame.stars])
            elif source == Source.SUN_MAG:
                try:
                    q_new = _dcm_quat(triad(frame.sun_body, frame.mag_body, sun, B_eci))
                except ValueError:
                    q_new = _coast(q_est, w_est, dt)
                    source = Source.NONE
            else:
                q_new = _coast(q_est, w_est, dt)
            if q_new @ q_est < 0:
                q_new = -q_new
            q_est = q_new
            if source == Source.NONE:
                # hold the filtered rate; differencing restarts with the next measurement
                rates.reset()
            else:
                rate_known = rate_known or rates.q_prev is not None
                w_est = rates.update(ts, q_est)
            A_est = quat_to_dcm(q_est)

            # control
            target = targets[min(phase.target, len(targets) - 1)]
            L_cmd = np.zeros(3)
            m_cmd = np.zeros(3)
            h_dot = np.zeros(3)
            wheel_sat = False
            desat_on = False
            if phase.mode == Mode.DETUMBLE:
                b_dot = bdot.update(ts, frame.mag_body)
                m_cmd = detumble_command(w_est, frame.mag_body, b_dot, gains, limits, rate_known)
            else:
                A_e_est = attitude_error(A_est, target.A_d)
                L_cmd = tracking_torque(w_est, A_e_est, target, J, gains)
                extra = None
                if cfg.desaturation.enabled and trigger.update(wheels.h):
                    desat_on = True
                    if trigger.dump_allowed(wheels.h, frame.mag_body):
                        _, m_cmd = desaturation_command(wheels, frame.mag_body, limits)
                        # wheels absorb the magnetic torque the coils are expected to produce
                        extra = cross(m_cmd, frame.mag_body)
                alloc = wheel_allocation(L_cmd, w_est, wheels, dt, limits, extra)
                h_dot = alloc.h_dot
                wheel_sat = alloc.saturated

            if np.any(np.abs(h_dot) > tol_M) or np.any(np.abs(m_cmd) > tol_m):
                raise ActuatorLimitViolation(f"t={ts:.2f}: actuator command exceeds limits")

            # environment torques on the true state
            Md = np.zeros(3)
            if dist.gravity_gradient:
                Md = Md + torque_gravity_gradient(q, r, J, A)
            if dist.aero:
                Md = Md + torque_aero(q, r, v0, props, A)
            if dist.srp:
                Md = Md + torque_srp(q, r, sun, shadow, props, A)
            m_total = m_cmd + residual if dist.magnetic else m_cmd
            Md = Md + torque_magnetic(q, B_eci, m_total, A)

            # record the pre-step state
            A_e = attitude_error(A, target.A_d)
            theta = pointing_error(A_e)
            if step_index % cfg.output.decimation == 0:
                L_real = -wheels.A_dist @ h_dot - cross(w, wheels.A_dist @ wheels.h)
                series.append(
                    [ts, phase.mode.value, phase.target, source.value, frame.tracker_status.value, int(shadow),
                     int(frame.sun_valid)]
                    + list(q) + list(w) + list(q_est) + (list(w_est) if rate_known else [math.nan] * 3)
                    + list(L_cmd) + list(L_real) + list(wheels.h) + list(m_cmd)
                    + [math.degrees(theta), attitude_error_angle(A_est, A) / ARCSEC,
                       lyapunov_value(w, A_e, J, gains.k_A), int(desat_on), int(wheel_sat)]
                )
            step_index += 1

            # integrate body and wheels
            q, w, h_new = step_wheel_coupled(q, w, wheels.h, h_dot, Md, J, J_inv, dt)
            if np.any(np.abs(h_new) > tol_h):
                raise ActuatorLimitViolation(f"t={ts:.2f}: wheel momentum {h_new} exceeds h_max")
            wheels.h = h_new

            # mode logic on estimated quantities
            t_after = ts + dt
            rate = math.sqrt(w_est @ w_est)
            if phase.mode == Mode.DETUMBLE:
                if rate_known and source != Source.NONE and rate < thr.detumble_exit_deg_s * DEG:
                    if phase.timer_start is None:
                        phase.timer_start = ts
                    if t_after - phase.timer_start >= thr.detumble_exit_hold_s:
                        if cfg.stop_after_detumble:
                            _transition(phase, Mode.DONE, t_after)
                        else:
                            _transition(phase, Mode.SLEW, t_after)
                            rates.set_filter(2, pointing_params)
                        break
                else:
                    phase.timer_start = None
            elif rate > thr.safe_hold_deg_s * DEG:
                _transition(phase, Mode.DETUMBLE, t_after)
                rates.set_filter(1, detumble_params)
                bdot.reset()
                break
            elif phase.mode == Mode.SLEW:
                theta_est = pointing_error(attitude_error(A_est, target.A_d))
                if theta_est < thr.track_entry_deg * DEG:
                    if phase.timer_start is None:
                        phase.timer_start = ts
                    if t_after - phase.timer_start >= thr.track_entry_hold_s:
                        _transition(phase, Mode.TRACK, t_after)
                else:
                    phase.timer_start = None
            elif phase.mode == Mode.TRACK:
                if t_after - phase.entered >= cfg.track_duration_s - 1e-9:
                    if phase.target + 1 < len(targets):
                        _transition(phase, Mode.SLEW, t_after)
                        phase.target += 1
                    else:
                        _transition(phase, Mode.DONE, t_after)
                        break
        else:
            j = n_sub - 1
        # finish the orbit step; an early break from the sub-loop still completes it
        remaining = steps.orbit_dt - (j + 1) * dt
        if remaining > 1e-9 and phase.mode != Mode.DONE:
            dt_new = steps.detumble_dt if phase.mode == Mode.DETUMBLE else steps.pointing_dt
            q, w, wheels.h = _coast_substeps(q, w, wheels.h, remaining, dt_new, J, J_inv)
        x_orb = x_next
        t = round(t + steps.orbit_dt, 9)
        if progress and t >= next_report:
            log.info("t=%.0f s mode=%s |w|=%.4f deg/s", t, phase.mode.value, math.degrees(math.sqrt(w @ w)))
            next_report += 3600.0

    return series, summary_report(series)


def _dcm_quat(A: np.ndarray) -> np.ndarray:
    from .mathcore import dcm_to_quat
    return dcm_to_quat(A)


def _coast(q: np.ndarray, w: np.ndarray, dt: float) -> np.ndarray:
    """Propagate an attitude estimate with a constant rate over ``dt``."""
    n = math.sqrt(w @ w)
    if n * dt < 1e-15:
        return q.copy()
    half = 0.5 * n * dt
    Phi = math.cos(half) * np.eye(4) + (math.sin(half) / n) * u_matrix(w)
    return normalize(Phi @ q)


def _coast_substeps(q, w, h, duration, dt, J, J_inv):
    """Torque-free integration over the remainder of an orbit step after a mode change."""
    n = int(round(duration / dt))
    zero = np.zeros(3)
    for _ in range(max(n, 1)):
        q, w, h = step_wheel_coupled(q, w, h, zero, zero, J, J_inv, duration / max(n, 1))
    return q, w, h


def write_outputs(series: TimeSeries, summary: dict, out_dir: str | Path) -> tuple[Path, Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    csv_path = out / "timeseries.csv"
    json_path = out / "summary.json"
    series.write_csv(csv_path)
    json_path.write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    return csv_path, json_path
