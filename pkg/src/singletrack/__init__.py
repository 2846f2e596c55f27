"""Single-track vehicle model, point-P feedback linearisation and its robustness analysis."""

__version__ = "0.1.0"

from .analysis import (
    EquilibriumSpec,
    HopfPoint,
    StabilityMap,
    classify,
    closed_loop_field,
    hopf_bisect,
    jacobian,
    stability_sweep,
)
from .control import (
    Circle,
    DropoutModel,
    PiecewiseConstantVelocity,
    TrackingGains,
    apply_dropout,
    circle_summary,
    run_open_loop,
    run_tracking,
    tracking_law,
)
from .linearise import (
    ControlCommand,
    Law,
    LinearisationConfig,
    PointVelocityCommand,
    linearising_law,
    linearising_law_alternative,
    linearising_law_nominal,
    linearising_law_uncertain,
    point_p_position,
    point_p_velocity,
)
from .model import ModelInput, VehicleParams, VehicleState, dynamics, integrate

__all__ = [
    "Circle", "ControlCommand", "DropoutModel", "EquilibriumSpec", "HopfPoint", "Law",
    "LinearisationConfig", "ModelInput", "PiecewiseConstantVelocity", "PointVelocityCommand",
    "StabilityMap", "TrackingGains", "VehicleParams", "VehicleState", "apply_dropout",
    "circle_summary", "classify", "closed_loop_field", "dynamics", "hopf_bisect", "integrate",
    "jacobian", "linearising_law", "linearising_law_alternative", "linearising_law_nominal",
    "linearising_law_uncertain", "point_p_position", "point_p_velocity", "run_open_loop",
    "run_tracking", "stability_sweep", "tracking_law",
]
