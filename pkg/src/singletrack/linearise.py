"""Point-P output maps and feedback-linearising laws.

Two placements of the output point P are supported:

``Law.FRONT_AXLE_OFFSET``
    P sits at distance ``p`` ahead of the front axle along the steering
    direction. The law outputs a speed and a steering *rate* and needs only
    the (estimated) front axle distance.
``Law.VELOCITY_DIRECTION``
    P sits at distance ``p`` from the centre of mass along the velocity
    vector. The law outputs a speed and a steering *angle* and needs the
    mass and cornering stiffnesses.

The ``*_kernel`` functions broadcast over numpy arrays and accept complex
input; the public functions wrap them for single states.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, replace

import numpy as np

from .model import V_MIN, ModelInput, VehicleParams, VehicleState, lateral_field


class Law(str, enum.Enum):
    FRONT_AXLE_OFFSET = "front_axle_offset"
    VELOCITY_DIRECTION = "velocity_direction"


class SingularityError(ValueError):
    """The linearising law is singular at the requested state."""


class WrongLawError(ValueError):
    pass


@dataclass(frozen=True)
class LinearisationConfig:
    """Controller-side configuration.

    Attributes
    ----------
    p : float
        Offset of point P [m]. Must be positive.
    l_f_est : float
        Estimated distance from the centre of mass to the front axle [m].
    law : Law
    singularity_margin : float
        Commands are refused when ``|cos(beta - delta)| <= sin(margin)``.
    l_r_est : float or None
        Estimated distance from the centre of mass to the rear axle, used only
        by the velocity-direction law. None means the estimated centre of mass
        moves along a wheelbase of known length, i.e.
        ``l_r_est = l_f + l_r - l_f_est``.
    """

    p: float = 0.35
    l_f_est: float = 0.1368
    law: Law = Law.FRONT_AXLE_OFFSET
    singularity_margin: float = math.radians(5.0)
    l_r_est: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "law", Law(self.law))
        if not (math.isfinite(self.p) and self.p > 0):
            raise ValueError(f"p must be > 0 (p = 0 makes the output point degenerate), got {self.p!r}")
        if not (math.isfinite(self.l_f_est) and self.l_f_est > 0):
            raise ValueError(f"l_f_est must be > 0, got {self.l_f_est!r}")
        if not 0 < self.singularity_margin < math.pi / 2:
            raise ValueError(f"singularity_margin must lie in (0, pi/2), got {self.singularity_margin!r}")
        if self.l_r_est is not None and not (math.isfinite(self.l_r_est) and self.l_r_est > 0):
            raise ValueError(f"l_r_est must be > 0, got {self.l_r_est!r}")

    @classmethod
    def with_deviation(cls, params: VehicleParams, dl: float, **kwargs) -> "LinearisationConfig":
        """Config whose front-axle estimate is ``params.l_f + dl``."""
        return cls(l_f_est=params.l_f + dl, **kwargs)

    def replace(self, **changes) -> "LinearisationConfig":
        return replace(self, **changes)

    def rear_estimate(self, params: VehicleParams) -> float:
        if self.l_r_est is not None:
            return self.l_r_est
        return params.wheelbase - self.l_f_est


@dataclass(frozen=True)
class PointVelocityCommand:
    v_Px: float
    v_Py: float

    def __post_init__(self):
        if not (math.isfinite(self.v_Px) and math.isfinite(self.v_Py)):
            raise ValueError(f"non-finite point velocity command {self!r}")


@dataclass(frozen=True)
class ControlCommand:
    """Output of a linearising law.

    Exactly one of ``u_delta`` (front-axle law) or ``delta`` (velocity-direction
    law) is set, matching ``law``.
    """

    v: float
    law: Law
    u_delta: float | None = None
    delta: float | None = None

    def __post_init__(self):
        if self.law is Law.FRONT_AXLE_OFFSET:
            if self.u_delta is None or self.delta is not None:
                raise ValueError("front-axle-offset commands carry u_delta only")
        elif self.delta is None or self.u_delta is not None:
            raise ValueError("velocity-direction commands carry delta only")

    @property
    def steering(self) -> float:
        return self.u_delta if self.law is Law.FRONT_AXLE_OFFSET else self.delta

    def to_model_input(self) -> ModelInput:
        if self.law is Law.FRONT_AXLE_OFFSET:
            return ModelInput(v=self.v, u_delta=self.u_delta)
        return ModelInput(v=self.v, delta=self.delta)


def front_axle_point(psi, delta, x_G, y_G, l_f, p):
    x = x_G + l_f * np.cos(psi) + p * np.cos(psi + delta)
    y = y_G + l_f * np.sin(psi) + p * np.sin(psi + delta)
    return x, y


def front_axle_point_velocity(psi, r, beta, delta, v, u_delta, l_f, p):
    heading = psi + beta
    steer = psi + delta
    xd = v * np.cos(heading) - l_f * r * np.sin(psi) - p * (r + u_delta) * np.sin(steer)
    yd = v * np.sin(heading) + l_f * r * np.cos(psi) + p * (r + u_delta) * np.cos(steer)
    return xd, yd


def velocity_direction_point(psi, beta, x_G, y_G, p):
    return x_G + p * np.cos(psi + beta), y_G + p * np.sin(psi + beta)


def velocity_direction_point_velocity(psi, beta, v, course_rate, p):
    """P velocity given ``course_rate = psi_dot + beta_dot``."""
    heading = psi + beta
    xd = v * np.cos(heading) - p * course_rate * np.sin(heading)
    yd = v * np.sin(heading) + p * course_rate * np.cos(heading)
    return xd, yd


def front_axle_law_kernel(psi, r, beta, delta, v_Px, v_Py, l_f_est, p, margin=math.radians(5.0)):
    """Speed and steering rate placing P's velocity at ``(v_Px, v_Py)``.

    Raises
    ------
    SingularityError
        If ``beta - delta`` is within ``margin`` of ``pi/2 + k pi``.
    """
    c = np.cos(beta - delta)
    if np.any(np.abs(np.real(c)) <= math.sin(margin)):
        raise SingularityError(
            "beta - delta is too close to pi/2 + k*pi: cos(beta - delta) vanishes "
            "in the denominator of the linearising law"
        )
    steer = psi + delta
    heading = psi + beta
    v = (v_Px * np.cos(steer) + v_Py * np.sin(steer) - r * l_f_est * np.sin(delta)) / c
    u_delta = (v_Py * np.cos(heading) - v_Px * np.sin(heading) - r * l_f_est * np.cos(beta)) / (p * c) - r
    return v, u_delta


def velocity_direction_law_kernel(psi, r, beta, v_Px, v_Py, p, params: VehicleParams,
                                  l_f_est=None, l_r_est=None, v_min=V_MIN):
    """Speed, steering angle and course-rate target of the velocity-direction law.

    Returns
    -------
    v, delta, omega
    """
    l_f_est = params.l_f if l_f_est is None else l_f_est
    l_r_est = params.l_r if l_r_est is None else l_r_est
    heading = psi + beta
    v = v_Px * np.cos(heading) + v_Py * np.sin(heading)
    if np.any(np.abs(np.real(v)) <= v_min):
        raise SingularityError("commanded speed is zero: the velocity-direction law divides by v")
    omega = (v_Py * np.cos(heading) - v_Px * np.sin(heading)) / p
    m, C_f, C_r = params.m, params.C_f, params.C_r
    delta = (
        m * omega / C_f * v
        - (C_r * l_r_est - C_f * l_f_est) / C_f * r / v
        + (C_r + C_f) / C_f * beta
    )
    return v, delta, omega


def point_p_position(state: VehicleState, cfg: LinearisationConfig,
                     params: VehicleParams = VehicleParams()) -> tuple[float, float]:
    """World position of P. Uses the true geometry in ``params``."""
    if cfg.law is Law.FRONT_AXLE_OFFSET:
        x, y = front_axle_point(state.psi, state.delta, state.x_G, state.y_G, params.l_f, cfg.p)
    else:
        x, y = velocity_direction_point(state.psi, state.beta, state.x_G, state.y_G, cfg.p)
    return float(x), float(y)


def point_p_velocity(state: VehicleState, inp: ModelInput, cfg: LinearisationConfig,
                     params: VehicleParams = VehicleParams()) -> tuple[float, float]:
    """World velocity of P for the given model input."""
    if cfg.law is Law.FRONT_AXLE_OFFSET:
        u_delta = 0.0 if inp.delta is not None else inp.u_delta
        delta = state.delta if inp.delta is None else inp.delta
        xd, yd = front_axle_point_velocity(state.psi, state.r, state.beta, delta,
                                           inp.v, u_delta, params.l_f, cfg.p)
    else:
        delta = state.delta if inp.delta is None else inp.delta
        r_dot, beta_dot = lateral_field(state.r, state.beta, delta, inp.v, params)
        xd, yd = velocity_direction_point_velocity(state.psi, state.beta, inp.v, state.r + beta_dot, cfg.p)
    return float(xd), float(yd)


def _require(cfg: LinearisationConfig, law: Law):
    if cfg.law is not law:
        raise WrongLawError(f"configuration selects {cfg.law.value!r}, this law needs {law.value!r}")


def linearising_law_uncertain(state: VehicleState, cmd: PointVelocityCommand,
                              cfg: LinearisationConfig) -> ControlCommand:
    """Front-axle-offset law evaluated with the estimate ``cfg.l_f_est``.

    Against a vehicle whose true front distance is ``l_f``, P then moves with
    ``(v_Px + dl sin(psi) r, v_Py - dl cos(psi) r)`` where ``dl = l_f_est - l_f``.
    """
    _require(cfg, Law.FRONT_AXLE_OFFSET)
    v, u_delta = front_axle_law_kernel(state.psi, state.r, state.beta, state.delta,
                                       cmd.v_Px, cmd.v_Py, cfg.l_f_est, cfg.p, cfg.singularity_margin)
    return ControlCommand(v=float(v), u_delta=float(u_delta), law=Law.FRONT_AXLE_OFFSET)


def linearising_law_nominal(state: VehicleState, cmd: PointVelocityCommand,
                            cfg: LinearisationConfig) -> ControlCommand:
    """Front-axle-offset law assuming ``cfg.l_f_est`` is exact."""
    return linearising_law_uncertain(state, cmd, cfg)


def linearising_law_alternative(state: VehicleState, cmd: PointVelocityCommand,
                                cfg: LinearisationConfig, params: VehicleParams) -> ControlCommand:
    """Velocity-direction law. Returns a speed and a steering angle."""
    _require(cfg, Law.VELOCITY_DIRECTION)
    v, delta, _ = velocity_direction_law_kernel(
        state.psi, state.r, state.beta, cmd.v_Px, cmd.v_Py, cfg.p, params,
        l_f_est=cfg.l_f_est, l_r_est=cfg.rear_estimate(params),
    )
    return ControlCommand(v=float(v), delta=float(delta), law=Law.VELOCITY_DIRECTION)


def linearising_law(state: VehicleState, cmd: PointVelocityCommand, cfg: LinearisationConfig,
                    params: VehicleParams) -> ControlCommand:
    """Dispatch on ``cfg.law``."""
    if cfg.law is Law.FRONT_AXLE_OFFSET:
        return linearising_law_uncertain(state, cmd, cfg)
    return linearising_law_alternative(state, cmd, cfg, params)
