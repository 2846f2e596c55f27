"""Single-track (bicycle) vehicle model with a linear tyre model.

State ordering used by every array-level function in the package::

    x = [psi, r, beta, delta, x_G, y_G]

The steering angle is driven through an integrator channel (``delta_dot =
u_delta``) unless a direct steering command is supplied, in which case the
steering state is overwritten at each controller update.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, fields, replace
from typing import Callable

import numpy as np

STATE_NAMES = ("psi", "r", "beta", "delta", "x_G", "y_G")
V_MIN = 1e-6
DEFAULT_STEER_LIMIT = math.radians(50.0)


class SpeedBelowFloorError(ValueError):
    """Raised when |v| is too small to evaluate the lateral dynamics."""


class DivergedTrajectoryError(RuntimeError):
    """Raised when integration produces a non-finite state."""

    def __init__(self, message: str, t: float):
        super().__init__(message)
        self.t = t


class SteeringRangeError(RuntimeError):
    def __init__(self, message: str, t: float):
        super().__init__(message)
        self.t = t


@dataclass(frozen=True)
class VehicleParams:
    """Vehicle parameters. Defaults are the 1:10 scale experimental platform.

    ``mu`` is kept for completeness; the linear tyre model does not use it.
    """

    m: float = 1.9
    I_z: float = 0.0251
    l_f: float = 0.1368
    l_r: float = 0.1232
    C_f: float = 58.085
    C_r: float = 130.805
    mu: float = 0.25

    def __post_init__(self):
        for name in ("m", "I_z", "l_f", "l_r", "C_f", "C_r"):
            value = getattr(self, name)
            if not (math.isfinite(value) and value > 0):
                raise ValueError(f"VehicleParams.{name} must be finite and > 0, got {value!r}")
        if not (math.isfinite(self.mu) and self.mu >= 0):
            raise ValueError(f"VehicleParams.mu must be finite and >= 0, got {self.mu!r}")

    @property
    def wheelbase(self) -> float:
        return self.l_f + self.l_r

    def replace(self, **changes) -> "VehicleParams":
        return replace(self, **changes)


@dataclass(frozen=True)
class VehicleState:
    psi: float = 0.0
    r: float = 0.0
    beta: float = 0.0
    delta: float = 0.0
    x_G: float = 0.0
    y_G: float = 0.0

    def __post_init__(self):
        for f in fields(self):
            if not np.all(np.isfinite(getattr(self, f.name))):
                raise ValueError(f"VehicleState.{f.name} is not finite")

    def as_array(self) -> np.ndarray:
        return np.array([self.psi, self.r, self.beta, self.delta, self.x_G, self.y_G], dtype=float)

    @classmethod
    def from_array(cls, x) -> "VehicleState":
        return cls(*(float(v) for v in x))

    def replace(self, **changes) -> "VehicleState":
        return replace(self, **changes)


@dataclass(frozen=True)
class ModelInput:
    """Speed and steering command applied to the vehicle.

    When ``delta`` is given the steering angle is commanded directly and
    ``u_delta`` is ignored.
    """

    v: float
    u_delta: float = 0.0
    delta: float | None = None

    def __post_init__(self):
        values = [self.v, self.u_delta] + ([] if self.delta is None else [self.delta])
        if not all(math.isfinite(v) for v in values):
            raise ValueError(f"ModelInput has non-finite entries: {self!r}")


def lateral_field(r, beta, delta, v, params: VehicleParams, v_min: float = V_MIN):
    """Yaw-rate and sideslip derivatives of the linear single-track model.

    Broadcasts over array arguments and accepts complex values, so it can be
    used for vectorised checks and complex-step differentiation.

    Returns
    -------
    r_dot, beta_dot
    """
    if np.any(np.abs(np.real(v)) <= v_min):
        raise SpeedBelowFloorError(
            f"|v| <= {v_min:g} m/s: the yaw-rate damping (C_f l_f^2 + C_r l_r^2)/(I_z v) "
            "and the sideslip terms (C_f + C_r)/(m v), (C_r l_r - C_f l_f)/(m v^2), "
            "C_f/(m v) are undefined"
        )
    m, I_z, l_f, l_r, C_f, C_r = params.m, params.I_z, params.l_f, params.l_r, params.C_f, params.C_r
    yaw_coupling = C_r * l_r - C_f * l_f
    r_dot = (
        yaw_coupling / I_z * beta
        - (C_f * l_f**2 + C_r * l_r**2) / (I_z * v) * r
        + C_f * l_f / I_z * delta
    )
    beta_dot = (
        -(C_f + C_r) / (m * v) * beta
        + (yaw_coupling / (m * v**2) - 1.0) * r
        + C_f / (m * v) * delta
    )
    return r_dot, beta_dot


def field(x: np.ndarray, v, u_delta, params: VehicleParams, v_min: float = V_MIN) -> np.ndarray:
    """Array-level vector field for the 6-dimensional state (see module docstring)."""
    psi, r, beta, delta = x[0], x[1], x[2], x[3]
    r_dot, beta_dot = lateral_field(r, beta, delta, v, params, v_min)
    heading = psi + beta
    return np.array([r, r_dot, beta_dot, u_delta, v * np.cos(heading), v * np.sin(heading)])


def dynamics(state: VehicleState, inp: ModelInput, params: VehicleParams, v_min: float = V_MIN) -> np.ndarray:
    """Time derivative of ``state`` under ``inp``.

    Returns the array ``(psi_dot, r_dot, beta_dot, delta_dot, xG_dot, yG_dot)``.
    With a direct steering command, ``inp.delta`` replaces the steering state
    and ``delta_dot`` is zero.
    """
    x = state.as_array()
    if inp.delta is not None:
        x[3] = inp.delta
        return field(x, inp.v, 0.0, params, v_min)
    return field(x, inp.v, inp.u_delta, params, v_min)


@dataclass
class Trajectory:
    t: np.ndarray
    x: np.ndarray
    inputs: list

    def state(self, k: int) -> VehicleState:
        return VehicleState.from_array(self.x[k])

    @property
    def final(self) -> VehicleState:
        return self.state(-1)


Controller = Callable[[float, VehicleState], ModelInput]


def rk4_step(f: Callable[[float, np.ndarray], np.ndarray], t: float, x: np.ndarray, dt: float) -> np.ndarray:
    k1 = f(t, x)
    k2 = f(t + 0.5 * dt, x + 0.5 * dt * k1)
    k3 = f(t + 0.5 * dt, x + 0.5 * dt * k2)
    k4 = f(t + dt, x + dt * k3)
    return x + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


MAX_SUBSTEPS = 2000


def stiffness_bound(v: float, params: VehicleParams) -> float:
    """Upper bound on the lateral eigenvalue magnitudes at speed ``v`` [1/s]."""
    speed = abs(v)
    return (
        (params.C_f + params.C_r) / (params.m * speed)
        + (params.C_f * params.l_f**2 + params.C_r * params.l_r**2) / (params.I_z * speed)
        + abs(params.C_r * params.l_r - params.C_f * params.l_f) / (params.m * speed**2)
        + 1.0
    )


def _auto_substeps(v: float, dt: float, params: VehicleParams, v_min: float) -> int:
    if abs(v) <= v_min:
        return 1
    return int(min(MAX_SUBSTEPS, max(1, math.ceil(dt * stiffness_bound(v, params) / 2.0))))


def integrate(
    state0: VehicleState,
    controller: Controller,
    params: VehicleParams,
    dt: float = 0.01,
    T: float = 1.0,
    *,
    zoh: bool = True,
    v_min: float = V_MIN,
    steer_limit: float | None = DEFAULT_STEER_LIMIT,
    standstill: bool = False,
    substeps: int | None = None,
) -> Trajectory:
    """Fixed-step RK4 simulation of the closed loop.

    Parameters
    ----------
    state0 : VehicleState
        Initial state.
    controller : callable
        ``controller(t, state) -> ModelInput``.
    params : VehicleParams
    dt, T : float
        Step and horizon in seconds. The trajectory has ``round(T/dt) + 1``
        samples.
    zoh : bool, optional
        If True (default) the controller is evaluated once per step and its
        output held over the step, like a discrete controller running at
        ``1/dt``. If False it is re-evaluated at every RK4 stage, which
        turns the closed loop into a smooth ODE.
    steer_limit : float or None, optional
        Abort when ``|delta|`` leaves this range [rad]. None disables the
        check.
    standstill : bool, optional
        If True, a speed command with ``|v| <= v_min`` parks the vehicle
        (yaw, yaw rate and sideslip frozen) instead of raising
        :class:`SpeedBelowFloorError`.
    substeps : int or None, optional
        RK4 steps per sample interval. None picks, for each interval, the
        smallest count keeping ``h * stiffness_bound(v) <= 2`` for the speed
        applied at its start (the lateral dynamics stiffen like ``1/v``).

    Returns
    -------
    Trajectory
        Sample times, states (``n+1`` rows) and the controller outputs used on
        each step (``n`` entries).
    """
    if not dt > 0:
        raise ValueError(f"dt must be > 0, got {dt}")
    if not T >= dt:
        raise ValueError(f"T must be >= dt, got T={T}, dt={dt}")
    n = int(round(T / dt))
    t = np.arange(n + 1) * dt
    xs = np.empty((n + 1, 6))
    xs[0] = state0.as_array()
    inputs = []

    def apply(inp: ModelInput, x: np.ndarray) -> np.ndarray:
        if standstill and abs(inp.v) <= v_min:
            u = 0.0 if inp.delta is not None else inp.u_delta
            return np.array([0.0, 0.0, 0.0, u, inp.v * math.cos(x[0] + x[2]), inp.v * math.sin(x[0] + x[2])])
        if inp.delta is None:
            return field(x, inp.v, inp.u_delta, params, v_min)
        return field(x, inp.v, 0.0, params, v_min)

    for k in range(n):
        x = xs[k].copy()
        inp = controller(t[k], VehicleState.from_array(x))
        if inp.delta is not None:
            x[3] = inp.delta
        inputs.append(inp)
        if zoh:
            rhs = lambda _t, y, inp=inp: apply(inp, y)
        else:
            rhs = lambda _t, y: apply(controller(_t, VehicleState.from_array(y)), y)
        m = substeps if substeps is not None else _auto_substeps(inp.v, dt, params, v_min)
        h = dt / m
        x_next = x
        for j in range(m):
            x_next = rk4_step(rhs, t[k] + j * h, x_next, h)
        if not np.all(np.isfinite(x_next)):
            raise DivergedTrajectoryError(f"non-finite state at t={t[k + 1]:.4f} s", float(t[k + 1]))
        if steer_limit is not None and abs(x_next[3]) > steer_limit:
            raise SteeringRangeError(
                f"|delta|={abs(x_next[3]):.4f} rad exceeds the steering range "
                f"{steer_limit:.4f} rad at t={t[k + 1]:.4f} s",
                float(t[k + 1]),
            )
        xs[k + 1] = x_next
    return Trajectory(t=t, x=xs, inputs=inputs)
