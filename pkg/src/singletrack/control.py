"""Outer proportional tracking loop, reference generators and pose dropout."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence, Union

import numpy as np

from .linearise import (
    Law,
    LinearisationConfig,
    PointVelocityCommand,
    SingularityError,
    linearising_law,
    point_p_position,
)
from .model import (
    DEFAULT_STEER_LIMIT,
    ModelInput,
    SpeedBelowFloorError,
    VehicleParams,
    VehicleState,
    integrate,
)

POSE_CHANNELS = ("x_G", "y_G", "psi")
LOG_COLUMNS = (
    "t", "x_G", "y_G", "psi", "r", "beta", "delta", "v_cmd", "u_delta_or_delta_cmd",
    "x_P", "y_P", "x_P_ref", "y_P_ref", "v_Px", "v_Py", "dropout_active",
)
_TIME_EPS = 1e-9


class SimulationError(RuntimeError):
    """A closed-loop run failed; ``t`` is the simulation time of the failure."""

    def __init__(self, message: str, t: float):
        super().__init__(f"{message} (t = {t:.4f} s)")
        self.t = t


@dataclass(frozen=True)
class TrackingGains:
    K_Px: float = 1.0
    K_Py: float = 1.0

    def __post_init__(self):
        # Zero gains are accepted: they turn the outer loop off.
        for name in ("K_Px", "K_Py"):
            value = getattr(self, name)
            if not (math.isfinite(value) and value >= 0):
                raise ValueError(f"{name} must be finite and >= 0, got {value!r}")


@dataclass(frozen=True)
class ReferencePoint:
    x: float
    y: float
    vx: float = 0.0
    vy: float = 0.0


@dataclass(frozen=True)
class Circle:
    radius: float = 1.0
    angular_velocity: float = 0.5
    center: tuple[float, float] = (0.0, 0.0)
    phase: float = 0.0

    def __post_init__(self):
        if not self.radius > 0:
            raise ValueError(f"radius must be > 0, got {self.radius!r}")

    def at(self, t: float) -> ReferencePoint:
        a = self.angular_velocity * t + self.phase
        R, w = self.radius, self.angular_velocity
        return ReferencePoint(
            self.center[0] + R * math.cos(a), self.center[1] + R * math.sin(a),
            -R * w * math.sin(a), R * w * math.cos(a),
        )


@dataclass(frozen=True)
class PiecewiseConstantVelocity:
    """Point-P velocity schedule ``[(duration, v_Px, v_Py), ...]`` integrated from ``start``."""

    segments: tuple[tuple[float, float, float], ...]
    start: tuple[float, float] = (0.0, 0.0)

    def __post_init__(self):
        object.__setattr__(self, "segments", tuple(tuple(float(v) for v in s) for s in self.segments))
        if not self.segments:
            raise ValueError("velocity schedule is empty")
        for dur, _, _ in self.segments:
            if not dur > 0:
                raise ValueError(f"segment durations must be > 0, got {dur!r}")

    @property
    def duration(self) -> float:
        return sum(s[0] for s in self.segments)

    def at(self, t: float) -> ReferencePoint:
        x, y = self.start
        t0 = 0.0
        for dur, vx, vy in self.segments:
            # A sample exactly on a switching instant takes the next segment's velocity.
            if t < t0 + dur - _TIME_EPS:
                tau = t - t0
                return ReferencePoint(x + vx * tau, y + vy * tau, vx, vy)
            x += vx * dur
            y += vy * dur
            t0 += dur
        return ReferencePoint(x, y, 0.0, 0.0)


@dataclass(frozen=True)
class ExternalSamples:
    """Time-stamped reference points, linearly interpolated."""

    t: tuple[float, ...]
    x: tuple[float, ...]
    y: tuple[float, ...]

    def __post_init__(self):
        if not (len(self.t) == len(self.x) == len(self.y) >= 1):
            raise ValueError("t, x and y must be non-empty and of equal length")
        if np.any(np.diff(self.t) <= 0):
            raise ValueError("sample times must be strictly increasing")

    def at(self, t: float) -> ReferencePoint:
        ts = np.asarray(self.t)
        x = float(np.interp(t, ts, self.x))
        y = float(np.interp(t, ts, self.y))
        if len(ts) < 2 or t >= ts[-1] or t < ts[0]:
            return ReferencePoint(x, y)
        k = int(np.searchsorted(ts, t, side="right")) - 1
        dt = ts[k + 1] - ts[k]
        return ReferencePoint(x, y, (self.x[k + 1] - self.x[k]) / dt, (self.y[k + 1] - self.y[k]) / dt)


ReferenceTrajectory = Union[Circle, PiecewiseConstantVelocity, ExternalSamples]


def reference_point(ref: ReferenceTrajectory, t: float) -> ReferencePoint:
    """Reference position and feedforward velocity at time ``t``.

    Past the end of a schedule the last position is held with zero velocity.
    """
    if t < 0:
        raise ValueError(f"reference time must be >= 0, got {t}")
    return ref.at(t)


def tracking_law(ref_point, meas_point, gains: TrackingGains) -> PointVelocityCommand:
    return PointVelocityCommand(
        gains.K_Px * (ref_point[0] - meas_point[0]),
        gains.K_Py * (ref_point[1] - meas_point[1]),
    )


@dataclass(frozen=True)
class DropoutModel:
    """Episodes during which no pose measurement arrives.

    Explicit ``episodes`` are ``(start, duration)`` pairs. A positive ``rate``
    adds random episodes (exponential inter-arrival times, uniform durations
    in ``[duration_min, duration_max]``) drawn from ``seed``.
    """

    enabled: bool = False
    episodes: tuple[tuple[float, float], ...] = ()
    rate: float = 0.0
    duration_min: float = 0.1
    duration_max: float = 0.5
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "episodes", tuple((float(s), float(d)) for s, d in self.episodes))
        for start, dur in self.episodes:
            if not (start >= 0 and dur > 0):
                raise ValueError(f"dropout episode ({start}, {dur}) needs start >= 0 and duration > 0")
        if self.rate < 0 or not 0 < self.duration_min <= self.duration_max:
            raise ValueError("dropout rate must be >= 0 and 0 < duration_min <= duration_max")

    def intervals(self, horizon: float) -> list[tuple[float, float]]:
        """Sorted, merged ``(start, end)`` intervals up to ``horizon``."""
        if not self.enabled:
            return []
        raw = [(s, s + d) for s, d in self.episodes]
        if self.rate > 0:
            rng = np.random.default_rng(self.seed)
            t = 0.0
            while True:
                t += rng.exponential(1.0 / self.rate)
                if t >= horizon:
                    break
                raw.append((t, t + rng.uniform(self.duration_min, self.duration_max)))
        raw.sort()
        merged: list[list[float]] = []
        for s, e in raw:
            if merged and s <= merged[-1][1]:
                merged[-1][1] = max(merged[-1][1], e)
            else:
                merged.append([s, e])
        return [(s, e) for s, e in merged]


def _inside(t, intervals) -> bool:
    return any(s + _TIME_EPS < t < e - _TIME_EPS for s, e in intervals)


def apply_dropout(t, samples: Mapping[str, Sequence[float]], model: DropoutModel,
                  channels: Sequence[str] = POSE_CHANNELS) -> dict[str, np.ndarray]:
    """Zero-order hold of the pose channels during dropout episodes.

    A sample strictly inside an episode is replaced by the last sample taken
    at or before the episode start. Channels not listed are passed through.
    """
    t = np.asarray(t, dtype=float)
    out = {k: np.array(v, dtype=float, copy=True) for k, v in samples.items()}
    if t.size == 0:
        return out
    for start, end in model.intervals(float(t[-1]) + 1.0):
        inside = (t > start + _TIME_EPS) & (t < end - _TIME_EPS)
        if not inside.any():
            continue
        before = np.nonzero(t <= start + _TIME_EPS)[0]
        k0 = int(before[-1]) if before.size else 0
        for name in channels:
            if name in out:
                out[name][inside] = out[name][k0]
    return out


@dataclass
class TrackingLog:
    law: Law
    t: np.ndarray
    states: np.ndarray
    v_cmd: np.ndarray
    steer_cmd: np.ndarray
    x_P: np.ndarray
    y_P: np.ndarray
    x_P_ref: np.ndarray
    y_P_ref: np.ndarray
    v_Px: np.ndarray
    v_Py: np.ndarray
    dropout_active: np.ndarray
    dropout_intervals: list = field(default_factory=list)

    def column(self, name: str) -> np.ndarray:
        names = ("psi", "r", "beta", "delta", "x_G", "y_G")
        if name in names:
            return self.states[:, names.index(name)]
        if name == "u_delta_or_delta_cmd":
            return self.steer_cmd
        return np.asarray(getattr(self, name))

    def write_csv(self, path) -> Path:
        path = Path(path)
        cols = [self.column(c) for c in LOG_COLUMNS]
        with path.open("w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(LOG_COLUMNS)
            for k in range(len(self.t)):
                row = [repr(float(c[k])) for c in cols[:-1]] + [str(int(cols[-1][k]))]
                writer.writerow(row)
        return path

    def point_deviation(self) -> np.ndarray:
        return np.hypot(self.x_P - self.x_P_ref, self.y_P - self.y_P_ref)


def state_with_point_at(point, psi: float, params: VehicleParams, cfg: LinearisationConfig) -> VehicleState:
    """Straight-wheeled state at heading ``psi`` whose point P is at ``point``."""
    if cfg.law is Law.FRONT_AXLE_OFFSET:
        reach = params.l_f + cfg.p
    else:
        reach = cfg.p
    return VehicleState(psi=psi, x_G=point[0] - reach * math.cos(psi), y_G=point[1] - reach * math.sin(psi))


def run_tracking(ref: ReferenceTrajectory, gains: TrackingGains, dropout: DropoutModel,
                 state0: VehicleState, params: VehicleParams, cfg: LinearisationConfig,
                 dt: float = 0.01, T: float = 60.0, *, feedforward: bool = False,
                 steer_limit: float | None = DEFAULT_STEER_LIMIT) -> TrackingLog:
    """Simulate tracking law, linearising law and vehicle in closed loop.

    The controller runs once per step and sees the true state, except that
    the pose (``x_G``, ``y_G``, ``psi``) is frozen during dropout episodes.
    When the commanded speed vanishes the vehicle is treated as parked: its
    lateral states do not evolve.
    """
    intervals = dropout.intervals(T)
    records: list[tuple] = []
    held = {}

    def measure(t: float, state: VehicleState) -> tuple[VehicleState, bool]:
        active = _inside(t, intervals)
        if not active:
            held.update(x_G=state.x_G, y_G=state.y_G, psi=state.psi)
            return state, False
        return state.replace(**held), True

    def controller(t: float, state: VehicleState) -> ModelInput:
        meas, active = measure(t, state)
        rp = reference_point(ref, t)
        p_meas = point_p_position(meas, cfg, params)
        cmd = tracking_law((rp.x, rp.y), p_meas, gains)
        if feedforward:
            cmd = PointVelocityCommand(cmd.v_Px + rp.vx, cmd.v_Py + rp.vy)
        try:
            out = linearising_law(meas, cmd, cfg, params)
        except SingularityError as exc:
            raise SimulationError(str(exc), t) from exc
        p_true = point_p_position(state, cfg, params)
        records.append((out.v, out.steering, p_true, (rp.x, rp.y), (cmd.v_Px, cmd.v_Py), active))
        return out.to_model_input()

    try:
        traj = integrate(state0, controller, params, dt, T, steer_limit=steer_limit, standstill=True)
        controller(float(traj.t[-1]), traj.final)
    except SpeedBelowFloorError as exc:
        raise SimulationError(str(exc), float(len(records) * dt)) from exc
    except SimulationError:
        raise
    except RuntimeError as exc:
        raise SimulationError(str(exc), getattr(exc, "t", float("nan"))) from exc

    v, steer, p, pr, vp, act = zip(*records)
    p = np.array(p)
    pr = np.array(pr)
    vp = np.array(vp)
    return TrackingLog(
        law=cfg.law, t=traj.t, states=traj.x, v_cmd=np.array(v), steer_cmd=np.array(steer),
        x_P=p[:, 0], y_P=p[:, 1], x_P_ref=pr[:, 0], y_P_ref=pr[:, 1], v_Px=vp[:, 0], v_Py=vp[:, 1],
        dropout_active=np.array(act, dtype=bool), dropout_intervals=intervals,
    )


def run_open_loop(schedule, dropout: DropoutModel, state0: VehicleState, params: VehicleParams,
                  cfg: LinearisationConfig, dt: float = 0.01, T: float | None = None,
                  **kwargs) -> TrackingLog:
    """Feed a point-P velocity schedule straight into the linearising law.

    The logged reference is the nominal P trajectory, i.e. the integral of the
    schedule from P's initial position.
    """
    start = point_p_position(state0, cfg, params)
    ref = PiecewiseConstantVelocity(tuple(schedule), start=start)
    T = ref.duration if T is None else T
    return run_tracking(ref, TrackingGains(0.0, 0.0), dropout, state0, params, cfg, dt, T,
                        feedforward=True, **kwargs)


def fit_sinusoid(t, y, omega: float) -> tuple[float, float, float]:
    """Least-squares fit ``y ~ A cos(omega t + phi) + c``. Returns ``(A, phi, c)``."""
    t = np.asarray(t, dtype=float)
    basis = np.column_stack([np.cos(omega * t), np.sin(omega * t), np.ones_like(t)])
    (a, b, c), *_ = np.linalg.lstsq(basis, np.asarray(y, dtype=float), rcond=None)
    # a cos + b sin = A cos(wt + phi) with A cos phi = a, -A sin phi = b
    return float(math.hypot(a, b)), float(math.atan2(-b, a)), float(c)


def _wrap(angle: float) -> float:
    return (angle + math.pi) % (2 * math.pi) - math.pi


@dataclass
class TrackingSummary:
    rms_radial_error: float
    steady_rms_radial_error: float
    amplitude_ratio_x: float
    amplitude_ratio_y: float
    phase_lag_x: float
    phase_lag_y: float
    convergence_time: float
    steady_radius: float

    def as_dict(self) -> dict:
        return dict(self.__dict__)


def circle_summary(log: TrackingLog, circle: Circle, steady_from: float | None = None,
                   band: float = 0.05) -> TrackingSummary:
    """Circle-tracking metrics.

    Amplitude ratios and phase lags compare sinusoid fits of the actual and
    reference ``x_P``, ``y_P`` over the steady window (second half of the run
    by default). Radial error is the distance of P from the circle. The
    convergence time is when ``|P - center|`` last enters, and then stays in,
    a band of ``band * radius`` around its steady-state mean.
    """
    t = log.t
    steady_from = 0.5 * t[-1] if steady_from is None else steady_from
    win = t >= steady_from
    w = circle.angular_velocity
    amp = {}
    lag = {}
    for axis, act, ref in (("x", log.x_P, log.x_P_ref), ("y", log.y_P, log.y_P_ref)):
        a_act, ph_act, _ = fit_sinusoid(t[win], act[win], w)
        a_ref, ph_ref, _ = fit_sinusoid(t[win], ref[win], w)
        amp[axis] = a_act / a_ref
        lag[axis] = _wrap(ph_ref - ph_act)
    dist = np.hypot(log.x_P - circle.center[0], log.y_P - circle.center[1])
    radial = dist - circle.radius
    steady_radius = float(dist[win].mean())
    outside = np.nonzero(np.abs(dist - steady_radius) > band * circle.radius)[0]
    if outside.size == 0:
        conv = 0.0
    elif outside[-1] == len(t) - 1:
        conv = math.inf
    else:
        conv = float(t[outside[-1] + 1])
    return TrackingSummary(
        rms_radial_error=float(np.sqrt(np.mean(radial**2))),
        steady_rms_radial_error=float(np.sqrt(np.mean(radial[win] ** 2))),
        amplitude_ratio_x=float(amp["x"]), amplitude_ratio_y=float(amp["y"]),
        phase_lag_x=float(lag["x"]), phase_lag_y=float(lag["y"]),
        convergence_time=conv, steady_radius=steady_radius,
    )
