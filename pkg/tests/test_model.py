import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import solve_ivp

from singletrack.model import (
    DivergedTrajectoryError,
    ModelInput,
    SpeedBelowFloorError,
    SteeringRangeError,
    VehicleParams,
    VehicleState,
    dynamics,
    field,
    integrate,
    lateral_field,
    stiffness_bound,
)

PARAMS = VehicleParams()


def test_default_parameters():
    p = VehicleParams()
    assert (p.m, p.I_z, p.l_f, p.l_r, p.C_f, p.C_r, p.mu) == (1.9, 0.0251, 0.1368, 0.1232, 58.085, 130.805, 0.25)
    assert p.wheelbase == pytest.approx(0.26)


@pytest.mark.parametrize("name", ["m", "I_z", "l_f", "l_r", "C_f", "C_r"])
def test_parameters_must_be_positive(name):
    with pytest.raises(ValueError, match=name):
        VehicleParams(**{name: 0.0})


def test_state_rejects_nan():
    with pytest.raises(ValueError):
        VehicleState(r=float("nan"))


def test_state_array_round_trip():
    s = VehicleState(0.1, 0.2, 0.3, 0.4, 0.5, 0.6)
    assert VehicleState.from_array(s.as_array()) == s


def test_zero_state_straight_line():
    d = dynamics(VehicleState(), ModelInput(v=1.0), PARAMS)
    np.testing.assert_array_equal(d, [0.0, 0.0, 0.0, 0.0, 1.0, 0.0])


def test_derivative_against_exact_rational_arithmetic():
    # Expected values evaluated with fractions.Fraction on the decimal parameters.
    r_dot, beta_dot = lateral_field(0.2, 0.05, 0.1, 0.8, PARAMS)
    assert r_dot == pytest.approx(17.329028749003985, rel=1e-13)
    assert beta_dot == pytest.approx(-1.248495394736842, rel=1e-13)


def test_direct_steering_overrides_state():
    s = VehicleState(delta=0.3)
    d_direct = dynamics(s, ModelInput(v=1.0, u_delta=5.0, delta=0.1), PARAMS)
    d_state = dynamics(s.replace(delta=0.1), ModelInput(v=1.0), PARAMS)
    assert d_direct[3] == 0.0
    np.testing.assert_array_equal(d_direct[[0, 1, 2, 4, 5]], d_state[[0, 1, 2, 4, 5]])


def test_speed_floor():
    with pytest.raises(SpeedBelowFloorError, match="undefined"):
        dynamics(VehicleState(), ModelInput(v=0.0), PARAMS)


def test_steady_turn_matches_closed_form():
    # Constant steering: the lateral subsystem is linear, its equilibrium solves A x = -b delta.
    v, delta = 1.0, 0.1
    k = PARAMS.C_r * PARAMS.l_r - PARAMS.C_f * PARAMS.l_f
    A = np.array([
        [-(PARAMS.C_f * PARAMS.l_f**2 + PARAMS.C_r * PARAMS.l_r**2) / (PARAMS.I_z * v), k / PARAMS.I_z],
        [k / (PARAMS.m * v**2) - 1, -(PARAMS.C_f + PARAMS.C_r) / (PARAMS.m * v)],
    ])
    b = np.array([PARAMS.C_f * PARAMS.l_f / PARAMS.I_z, PARAMS.C_f / (PARAMS.m * v)])
    r_ss, beta_ss = np.linalg.solve(A, -b * delta)
    traj = integrate(VehicleState(), lambda t, s: ModelInput(v=v, delta=delta), PARAMS, dt=0.01, T=5.0)
    assert traj.final.r == pytest.approx(r_ss, rel=1e-9)
    assert traj.final.beta == pytest.approx(beta_ss, rel=1e-9)


def test_integrate_matches_scipy_reference():
    def u(t):
        return 0.4 * math.sin(2 * t)

    rhs = lambda t, x: field(x, 1.5, u(t), PARAMS)
    ref = solve_ivp(rhs, (0, 2.0), np.zeros(6), method="DOP853", rtol=1e-12, atol=1e-12)
    traj = integrate(VehicleState(), lambda t, s: ModelInput(v=1.5, u_delta=u(t)), PARAMS,
                     dt=0.001, T=2.0, zoh=False)
    np.testing.assert_allclose(traj.x[-1], ref.y[:, -1], atol=1e-9)


def test_integrate_sample_count():
    traj = integrate(VehicleState(), lambda t, s: ModelInput(v=1.0), PARAMS, dt=0.01, T=1.0)
    assert traj.x.shape == (101, 6)
    assert len(traj.inputs) == 100
    assert traj.t[-1] == pytest.approx(1.0)


def test_low_speed_is_stable_with_auto_substeps():
    # The lateral modes scale like 1/v; a single RK4 step of 10 ms would diverge.
    assert 0.01 * stiffness_bound(0.1, PARAMS) > 2.8
    traj = integrate(VehicleState(), lambda t, s: ModelInput(v=0.1, delta=0.05), PARAMS, dt=0.01, T=2.0)
    assert np.all(np.isfinite(traj.x))
    with pytest.raises((DivergedTrajectoryError, SteeringRangeError, FloatingPointError, OverflowError)):
        with np.errstate(over="ignore", invalid="ignore"):
            integrate(VehicleState(), lambda t, s: ModelInput(v=0.1, delta=0.05), PARAMS,
                      dt=0.01, T=2.0, substeps=1, steer_limit=None)


def test_steering_range_error_has_timestamp():
    with pytest.raises(SteeringRangeError) as info:
        integrate(VehicleState(), lambda t, s: ModelInput(v=1.0, u_delta=2.0), PARAMS, dt=0.01, T=2.0)
    assert info.value.t == pytest.approx(0.45, abs=0.011)


def test_standstill_parks_vehicle():
    s0 = VehicleState(psi=0.3, r=0.5, beta=0.1)
    traj = integrate(s0, lambda t, s: ModelInput(v=0.0), PARAMS, dt=0.01, T=0.5, standstill=True)
    np.testing.assert_array_equal(traj.x[-1], s0.as_array())


def test_rk4_fourth_order():
    u = lambda t: 0.3 * math.cos(t)
    ctrl = lambda t, s: ModelInput(v=3.0, u_delta=u(t))
    ref = integrate(VehicleState(), ctrl, PARAMS, dt=1e-4, T=1.0, zoh=False, substeps=1).x[-1]
    errs = []
    for dt in (0.01, 0.005):
        x = integrate(VehicleState(), ctrl, PARAMS, dt=dt, T=1.0, zoh=False, substeps=1).x[-1]
        errs.append(np.abs(x - ref).max())
    assert math.log2(errs[0] / errs[1]) > 3.7


@settings(max_examples=50, deadline=None)
@given(
    beta=st.floats(-0.7, 0.7), delta=st.floats(-0.87, 0.87), r=st.floats(-3, 3),
    v=st.floats(0.05, 5.0), psi=st.floats(-math.pi, math.pi),
)
def test_position_rate_is_speed(beta, delta, r, v, psi):
    d = dynamics(VehicleState(psi=psi, r=r, beta=beta, delta=delta), ModelInput(v=v), PARAMS)
    assert math.hypot(d[4], d[5]) == pytest.approx(v, rel=1e-12)
    assert d[0] == r


@settings(max_examples=50, deadline=None)
@given(beta=st.floats(-0.7, 0.7), delta=st.floats(-0.87, 0.87), r=st.floats(-3, 3), v=st.floats(0.05, 5.0))
def test_mirror_symmetry(beta, delta, r, v):
    a = lateral_field(r, beta, delta, v, PARAMS)
    b = lateral_field(-r, -beta, -delta, v, PARAMS)
    assert a[0] == pytest.approx(-b[0], abs=1e-9)
    assert a[1] == pytest.approx(-b[1], abs=1e-9)
