"""Scenario configuration: TOML file -> validated, hashable dataclasses.

Every section is optional; unknown keys anywhere are rejected with their
dotted path.
"""

from __future__ import annotations

import dataclasses
import enum
import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .control import Circle, DropoutModel, TrackingGains
from .linearise import Law, LinearisationConfig
from .model import VehicleParams


class ConfigError(ValueError):
    def __init__(self, key: str, message: str):
        super().__init__(f"{key}: {message}" if key else message)
        self.key = key
        self.message = message


class Experiment(str, enum.Enum):
    OPEN_LOOP_STEPS = "open_loop_steps"
    CIRCLE_TRACKING = "circle_tracking"
    STABILITY_SWEEP = "stability_sweep"
    HOPF_THRESHOLD = "hopf_threshold"
    CUSTOM = "custom"


def _typed(default, kind, **kw):
    return field(default=default, metadata={"type": kind, **kw})


@dataclass
class VehicleSection:
    m: float = 1.9
    I_z: float = 0.0251
    l_f: float = 0.1368
    l_r: float = 0.1232
    C_f: float = 58.085
    C_r: float = 130.805
    mu: float = 0.25

    def build(self) -> VehicleParams:
        return VehicleParams(**dataclasses.asdict(self))


@dataclass
class LinearisationSection:
    law: str = "front_axle_offset"
    p: float = 0.35
    dl: float = _typed(None, float)
    l_f_est: float = _typed(None, float)
    l_r_est: float = _typed(None, float)
    singularity_margin_deg: float = 5.0

    def build(self, params: VehicleParams) -> LinearisationConfig:
        if self.dl is not None and self.l_f_est is not None:
            raise ConfigError("linearisation", "give either dl or l_f_est, not both")
        if self.l_f_est is not None:
            l_f_est = self.l_f_est
        else:
            l_f_est = params.l_f + (self.dl or 0.0)
        return LinearisationConfig(p=self.p, l_f_est=l_f_est, law=Law(self.law),
                                   singularity_margin=math.radians(self.singularity_margin_deg),
                                   l_r_est=self.l_r_est)


@dataclass
class IntegratorSection:
    dt: float = 0.01
    horizon: float = _typed(None, float)
    steer_limit_deg: float = 50.0


@dataclass
class DropoutSection:
    enabled: bool = False
    episodes: list = _typed(None, list)
    rate: float = 0.0
    duration_min: float = 0.1
    duration_max: float = 0.5

    def build(self, seed: int) -> DropoutModel:
        episodes = tuple(tuple(e) for e in (self.episodes or []))
        return DropoutModel(enabled=self.enabled, episodes=episodes, rate=self.rate,
                            duration_min=self.duration_min, duration_max=self.duration_max, seed=seed)


DEFAULT_SCHEDULE = [
    [4.0, 0.5, 0.0],
    [4.0, 0.5, 0.3],
    [4.0, 0.5, -0.3],
    [4.0, 0.5, 0.3],
    [4.0, 0.5, 0.0],
]


@dataclass
class OpenLoopSection:
    schedule: list = field(default_factory=lambda: [list(s) for s in DEFAULT_SCHEDULE])
    initial_heading_deg: float = 0.0


@dataclass
class CircleSection:
    radius: float = 1.0
    angular_velocity: float = 0.5
    center: list = field(default_factory=lambda: [0.0, 0.0])
    phase: float = 0.0
    start_offset: float = 0.3

    def build(self) -> Circle:
        return Circle(radius=self.radius, angular_velocity=self.angular_velocity,
                      center=tuple(self.center), phase=self.phase)


@dataclass
class TrackingSection:
    K_Px: float = 1.0
    K_Py: float = 1.0
    feedforward: bool = False

    def build(self) -> TrackingGains:
        return TrackingGains(self.K_Px, self.K_Py)


@dataclass
class SweepSection:
    v_bar: list = _typed(None, list)
    v_bar_min: float = 0.1
    v_bar_max: float = 5.0
    v_bar_step: float = 0.1
    dl_min: float = -0.8
    dl_max: float = 0.2
    dl_step: float = 0.001
    psi_bar_deg: float = 45.0
    workers: int = 1
    plot: bool = True


@dataclass
class HopfSection:
    v_bar: list = field(default_factory=lambda: [0.1])
    bracket: list = _typed(None, list)
    scan_from: float = _typed(None, float)
    scan_to: float = _typed(None, float)
    scan_step: float = _typed(None, float)
    psi_bar_deg: float = 45.0


SECTIONS = {
    "vehicle": VehicleSection,
    "linearisation": LinearisationSection,
    "integrator": IntegratorSection,
    "dropout": DropoutSection,
    "open_loop": OpenLoopSection,
    "circle": CircleSection,
    "tracking": TrackingSection,
    "sweep": SweepSection,
    "hopf": HopfSection,
}


@dataclass
class ScenarioConfig:
    experiment: str = "circle_tracking"
    seed: int = 0
    output_dir: str = "out"
    vehicle: VehicleSection = field(default_factory=VehicleSection)
    linearisation: LinearisationSection = field(default_factory=LinearisationSection)
    integrator: IntegratorSection = field(default_factory=IntegratorSection)
    dropout: DropoutSection = field(default_factory=DropoutSection)
    open_loop: OpenLoopSection = field(default_factory=OpenLoopSection)
    circle: CircleSection = field(default_factory=CircleSection)
    tracking: TrackingSection = field(default_factory=TrackingSection)
    sweep: SweepSection = field(default_factory=SweepSection)
    hopf: HopfSection = field(default_factory=HopfSection)

    @property
    def kind(self) -> Experiment:
        return Experiment(self.experiment)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def config_hash(self) -> str:
        """SHA-256 of every setting that can change results (``output_dir`` is excluded)."""
        data = self.to_dict()
        data.pop("output_dir")
        blob = json.dumps(data, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()

    # Built objects -------------------------------------------------------

    def params(self) -> VehicleParams:
        return _guard("vehicle", self.vehicle.build)

    def linearisation_config(self) -> LinearisationConfig:
        params = self.params()
        return _guard("linearisation", lambda: self.linearisation.build(params))

    def dropout_model(self) -> DropoutModel:
        return _guard("dropout", lambda: self.dropout.build(self.seed))

    def horizon(self, default: float) -> float:
        return default if self.integrator.horizon is None else self.integrator.horizon

    def validate(self) -> "ScenarioConfig":
        """Build every object once so that bad values surface as ConfigError."""
        try:
            self.kind
        except ValueError:
            choices = ", ".join(e.value for e in Experiment)
            raise ConfigError("experiment", f"unknown experiment {self.experiment!r} (expected one of {choices})")
        try:
            Law(self.linearisation.law)
        except ValueError:
            choices = ", ".join(e.value for e in Law)
            raise ConfigError("linearisation.law", f"unknown law {self.linearisation.law!r} (expected one of {choices})")
        self.linearisation_config()
        self.dropout_model()
        _guard("circle", self.circle.build)
        _guard("tracking", self.tracking.build)
        _positive("integrator.dt", self.integrator.dt)
        if self.integrator.horizon is not None:
            _positive("integrator.horizon", self.integrator.horizon)
            if self.integrator.horizon < self.integrator.dt:
                raise ConfigError("integrator.horizon", "must be >= integrator.dt")
        _positive("integrator.steer_limit_deg", self.integrator.steer_limit_deg)
        for i, seg in enumerate(self.open_loop.schedule):
            key = f"open_loop.schedule[{i}]"
            if len(seg) != 3 or not all(_is_number(v) for v in seg):
                raise ConfigError(key, "expected [duration, v_Px, v_Py]")
            _positive(key + "[0]", seg[0])
        if not self.open_loop.schedule:
            raise ConfigError("open_loop.schedule", "schedule is empty")
        if len(self.circle.center) != 2 or not all(_is_number(v) for v in self.circle.center):
            raise ConfigError("circle.center", "expected [x, y]")
        if self.circle.start_offset < 0:
            raise ConfigError("circle.start_offset", "must be >= 0")
        self._validate_sweep()
        self._validate_hopf()
        return self

    def _validate_sweep(self):
        s = self.sweep
        if s.v_bar is not None:
            if not s.v_bar:
                raise ConfigError("sweep.v_bar", "speed grid is empty")
            for i, v in enumerate(s.v_bar):
                if not _is_number(v) or v <= 0:
                    raise ConfigError(f"sweep.v_bar[{i}]", "speeds must be numbers > 0")
        else:
            _positive("sweep.v_bar_min", s.v_bar_min)
            _positive("sweep.v_bar_step", s.v_bar_step)
            if s.v_bar_max < s.v_bar_min:
                raise ConfigError("sweep.v_bar_max", "speed grid is empty (v_bar_max < v_bar_min)")
        _positive("sweep.dl_step", s.dl_step)
        if s.dl_max < s.dl_min:
            raise ConfigError("sweep.dl_max", "dl grid is empty (dl_max < dl_min)")
        if s.workers < 1:
            raise ConfigError("sweep.workers", "must be >= 1")

    def _validate_hopf(self):
        h = self.hopf
        if not h.v_bar:
            raise ConfigError("hopf.v_bar", "no speeds given")
        for i, v in enumerate(h.v_bar):
            if not _is_number(v) or v <= 0:
                raise ConfigError(f"hopf.v_bar[{i}]", "speeds must be numbers > 0")
        if h.bracket is not None:
            if len(h.bracket) != 2 or not all(_is_number(v) for v in h.bracket):
                raise ConfigError("hopf.bracket", "expected [dl_a, dl_b]")
            if h.bracket[0] == h.bracket[1]:
                raise ConfigError("hopf.bracket", "degenerate bracket: endpoints are equal")
        if h.scan_step is not None:
            _positive("hopf.scan_step", h.scan_step)


def _is_number(v) -> bool:
    return isinstance(v, (int, float)) and not isinstance(v, bool) and math.isfinite(v)


def _positive(key: str, value):
    if not _is_number(value) or value <= 0:
        raise ConfigError(key, f"must be a number > 0, got {value!r}")


def _guard(key: str, build):
    try:
        return build()
    except ConfigError:
        raise
    except (ValueError, TypeError) as exc:
        raise ConfigError(key, str(exc)) from exc


def _check_type(key: str, value, kind):
    if kind is float:
        if not _is_number(value):
            raise ConfigError(key, f"expected a number, got {value!r}")
        return float(value)
    if kind is int:
        if not isinstance(value, int) or isinstance(value, bool):
            raise ConfigError(key, f"expected an integer, got {value!r}")
        return value
    if kind is bool:
        if not isinstance(value, bool):
            raise ConfigError(key, f"expected true or false, got {value!r}")
        return value
    if kind is str:
        if not isinstance(value, str):
            raise ConfigError(key, f"expected a string, got {value!r}")
        return value
    if kind is list:
        if not isinstance(value, list):
            raise ConfigError(key, f"expected a list, got {value!r}")
        return value
    raise TypeError(kind)


def _field_kind(f: dataclasses.Field):
    if "type" in f.metadata:
        return f.metadata["type"]
    default = f.default_factory() if f.default_factory is not dataclasses.MISSING else f.default
    return type(default)


def _build_section(cls, data, key: str):
    if not isinstance(data, dict):
        raise ConfigError(key, "expected a table")
    known = {f.name: f for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - set(known))
    if unknown:
        raise ConfigError(f"{key}.{unknown[0]}", f"unknown key (allowed: {', '.join(known)})")
    values = {}
    for name, value in data.items():
        values[name] = _check_type(f"{key}.{name}", value, _field_kind(known[name]))
    return cls(**values)


def config_from_mapping(data: dict) -> ScenarioConfig:
    top = {f.name: f for f in dataclasses.fields(ScenarioConfig)}
    unknown = sorted(set(data) - set(top))
    if unknown:
        raise ConfigError(unknown[0], f"unknown key (allowed: {', '.join(top)})")
    values = {}
    for name, value in data.items():
        if name in SECTIONS:
            values[name] = _build_section(SECTIONS[name], value, name)
        else:
            values[name] = _check_type(name, value, _field_kind(top[name]))
    return ScenarioConfig(**values).validate()


def load_config(path) -> ScenarioConfig:
    path = Path(path)
    try:
        data = tomllib.loads(path.read_text())
    except OSError as exc:
        raise ConfigError("", f"cannot read config {path}: {exc}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError("", f"invalid TOML in {path}: {exc}") from exc
    return config_from_mapping(data)
