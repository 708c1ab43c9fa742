"""Cascaded controller tests.

Closed-loop expectations derived by hand: with natural frequency 2 rad/s
the position loop has kp = 4, so a pure mass overestimate of 20% settles
at 9.81 * 0.2 / 4 = 0.4905 m below the setpoint (no integral action), and
a 45 degree tilt demand with time constant 0.2 s commands pi/4/0.2 rad/s.
"""

import numpy as np
import pytest

from proxfly import sim
from proxfly.controller import (
    CONTROL_DT,
    SIM_DT,
    TICKS_PER_CONTROL,
    ControllerGains,
    DesiredState,
    HighLevelCommand,
    StateEstimator,
    basic_command,
    basic_command_arrays,
    low_level_control,
    position_control,
)
from proxfly.rotations import quat_from_rotation_vector

GAINS = ControllerGains()


def fly(state, sim_params, ctrl_params, des_fn, duration, wrench=sim.ZERO_WRENCH):
    """Minimal closed loop at the nominal 500/200/50 Hz rate structure."""
    estimator = StateEstimator()
    cmd = None
    trace = []
    for k in range(int(round(duration / SIM_DT))):
        t = k * SIM_DT
        est = estimator.update(t, state)
        if k % TICKS_PER_CONTROL == 0:
            cmd = basic_command(est, des_fn(t), GAINS)
            trace.append((t, state.position.copy(), cmd))
        motors = low_level_control(est, cmd, ctrl_params, GAINS)
        state = sim.step(state, motors, wrench, sim_params, SIM_DT)
    return state, trace


def test_estimator_latches_at_200hz():
    params = sim.large_quad()
    estimator = StateEstimator()
    seen = []
    state = sim.rest_state([0.0, 0.0, 1.0])
    for k in range(501):  # one second inclusive of t = 0
        t = k * SIM_DT
        state.position[0] = t
        est = estimator.update(t, state)
        if not seen or est.position[0] != seen[-1]:
            seen.append(est.position[0])
    assert len(seen) == 201  # 200 Hz: instants 0.000, 0.005, ..., 1.000
    # instants between ticks latch the most recent earlier tick
    assert seen[1] == 0.004  # 5 ms instant -> 4 ms tick
    assert seen[2] == 0.010  # 10 ms instant falls on a tick
    assert seen[3] == 0.014


def test_estimator_holds_between_instants():
    estimator = StateEstimator()
    state = sim.rest_state([0.0, 0.0, 1.0])
    values = []
    for k in range(6):
        t = k * SIM_DT
        state.position[0] = t
        values.append(estimator.update(t, state).position[0])
    assert values == [0.0, 0.0, 0.0, 0.004, 0.004, 0.010]


def test_estimator_noise_off_by_default():
    estimator = StateEstimator()
    state = sim.rest_state([1.0, 2.0, 3.0])
    est = estimator.update(0.0, state)
    np.testing.assert_array_equal(est.position, state.position)
    np.testing.assert_array_equal(est.quaternion, state.quaternion)


def test_estimator_noise_perturbs_latch():
    rng = np.random.default_rng(0)
    estimator = StateEstimator(position_noise_std=0.01, attitude_noise_std=0.002, rng=rng)
    state = sim.rest_state([1.0, 2.0, 3.0])
    est = estimator.update(0.0, state)
    assert np.all(est.position != state.position)
    assert abs(np.linalg.norm(est.quaternion) - 1.0) < 1e-12


def test_position_control_pd_hand_case():
    est = sim.rest_state([0.0, 0.0, 1.0])
    des = DesiredState(position=[0.0, 0.0, 1.2])
    np.testing.assert_allclose(position_control(est, des, GAINS), [0.0, 0.0, 0.8], atol=1e-12)

    est.velocity = np.array([0.5, 0.0, 0.0])
    des = DesiredState(position=[0.0, 0.0, 1.0], velocity=[1.0, 0.0, 0.0])
    np.testing.assert_allclose(
        position_control(est, des, GAINS), [2.8 * 0.5, 0.0, 0.0], atol=1e-12
    )


def test_position_control_clamps_each_axis():
    est = sim.rest_state([0.0, 0.0, 0.0])
    des = DesiredState(position=[10.0, -10.0, 1.0])
    np.testing.assert_allclose(
        position_control(est, des, GAINS), [12.0, -12.0, 4.0], atol=1e-12
    )


def test_hover_command_is_gravity_feedforward():
    est = sim.rest_state([0.0, 0.0, 1.2])
    cmd = basic_command(est, DesiredState(position=[0.0, 0.0, 1.2]), GAINS)
    assert abs(cmd.thrust - 9.81) < 1e-12
    np.testing.assert_allclose(cmd.body_rates, 0.0, atol=1e-12)


def test_tilt_demand_pitches_toward_acceleration():
    est = sim.rest_state([0.0, 0.0, 1.2])
    des = DesiredState(position=[0.0, 0.0, 1.2])
    from proxfly.controller import attitude_thrust_command

    cmd = attitude_thrust_command(np.array([9.81, 0.0, 0.0]), est, des, GAINS)
    assert abs(cmd.thrust - 9.81) < 1e-12  # projection on current body z
    np.testing.assert_allclose(
        cmd.body_rates, [0.0, (np.pi / 4) / 0.2, 0.0], atol=1e-9
    )


def test_yaw_error_uses_yaw_time_constant():
    est = sim.rest_state([0.0, 0.0, 1.2])
    cmd = basic_command(
        est, DesiredState(position=[0.0, 0.0, 1.2], yaw=np.pi / 2), GAINS
    )
    np.testing.assert_allclose(cmd.body_rates, [0.0, 0.0, np.pi], atol=1e-9)


def test_degenerate_thrust_demand_zeroes_command():
    est = sim.rest_state([0.0, 0.0, 1.2])
    est.body_rates = np.array([1.0, -2.0, 0.5])
    des = DesiredState(position=[0.0, 0.0, 1.2])
    from proxfly.controller import attitude_thrust_command

    cmd = attitude_thrust_command(np.array([0.0, 0.0, -9.80]), est, des, GAINS)
    assert cmd.thrust == 0.0
    np.testing.assert_array_equal(cmd.body_rates, np.zeros(3))


def test_thrust_projected_on_tilted_body_axis():
    tilt = quat_from_rotation_vector(np.array([0.0, 0.3, 0.0]))
    est = sim.rest_state([0.0, 0.0, 1.2])
    est.quaternion = tilt
    cmd = basic_command(est, DesiredState(position=[0.0, 0.0, 1.2]), GAINS)
    assert abs(cmd.thrust - 9.81 * np.cos(0.3)) < 1e-9


def test_low_level_hand_case():
    params = sim.large_quad()
    est = sim.rest_state([0.0, 0.0, 1.2])
    cmd = HighLevelCommand(thrust=9.81, body_rates=[1.0, 0.0, 0.0])
    speeds = low_level_control(est, cmd, params, GAINS)
    torque = params.inertia_diag[0] * 20.0 * 1.0
    arm = params.arm_length * np.sqrt(0.5)
    force = params.mass * 9.81
    expect = np.array(
        [
            (force + torque / arm) / 4.0,
            (force - torque / arm) / 4.0,
            (force - torque / arm) / 4.0,
            (force + torque / arm) / 4.0,
        ]
    )
    np.testing.assert_allclose(
        params.thrust_coeff * speeds**2, expect, rtol=1e-12
    )


def test_allocation_round_trip():
    # motor speeds from a command must reproduce the requested wrench exactly
    rng = np.random.default_rng(21)
    params = sim.small_quad()
    est = sim.rest_state([0.0, 0.0, 1.0])
    geometry = params.torque_geometry()
    for _ in range(200):
        est.body_rates = rng.uniform(-1.0, 1.0, 3)
        cmd = HighLevelCommand(
            thrust=rng.uniform(5.0, 20.0), body_rates=rng.uniform(-1.0, 1.0, 3)
        )
        speeds = low_level_control(est, cmd, params, GAINS)
        thrusts = params.thrust_coeff * speeds**2
        requested_torque = params.inertia_diag * GAINS.body_rate_gain * (
            cmd.body_rates - est.body_rates
        )
        if np.all(thrusts > 1e-12):  # clamping inactive
            assert abs(thrusts.sum() - params.mass * cmd.thrust) < 1e-9
            np.testing.assert_allclose(
                geometry @ thrusts, requested_torque, atol=1e-9
            )


def test_pure_yaw_moves_diagonal_pairs_oppositely():
    params = sim.large_quad()
    est = sim.rest_state([0.0, 0.0, 1.0])
    base = low_level_control(est, HighLevelCommand(9.81, [0.0, 0.0, 0.0]), params, GAINS)
    yawed = low_level_control(est, HighLevelCommand(9.81, [0.0, 0.0, 0.5]), params, GAINS)
    d = params.thrust_coeff * (yawed**2 - base**2)
    assert d[1] > 0 and d[3] > 0  # CW props speed up for +z torque
    assert d[0] < 0 and d[2] < 0
    np.testing.assert_allclose(d.sum(), 0.0, atol=1e-12)
    np.testing.assert_allclose(d[0], d[2], rtol=1e-9)
    np.testing.assert_allclose(d[1], d[3], rtol=1e-9)


def test_negative_thrust_solutions_clamp_to_zero():
    params = sim.large_quad()
    est = sim.rest_state([0.0, 0.0, 1.0])
    cmd = HighLevelCommand(thrust=0.2, body_rates=[8.0, 0.0, 0.0])
    speeds = low_level_control(est, cmd, params, GAINS)
    assert np.all(speeds >= 0.0)
    assert speeds[1] == 0.0 and speeds[2] == 0.0


def test_zero_thrust_zero_rates_stops_motors():
    params = sim.large_quad()
    est = sim.rest_state([0.0, 0.0, 1.0])
    speeds = low_level_control(est, HighLevelCommand(0.0, np.zeros(3)), params, GAINS)
    np.testing.assert_array_equal(speeds, np.zeros(4))


def test_batched_command_matches_single():
    rng = np.random.default_rng(22)
    n = 9
    pos = rng.uniform(-2.0, 2.0, (n, 3))
    vel = rng.uniform(-1.0, 1.0, (n, 3))
    quat = rng.normal(size=(n, 4))
    quat /= np.linalg.norm(quat, axis=-1, keepdims=True)
    des_p = rng.uniform(-2.0, 2.0, (n, 3))
    des_v = rng.uniform(-1.0, 1.0, (n, 3))
    des_yaw = rng.uniform(-np.pi, np.pi, n)
    thrust, rates = basic_command_arrays(pos, vel, quat, des_p, des_v, des_yaw, GAINS)
    for i in range(n):
        est = sim.rest_state(pos[i])
        est.velocity = vel[i]
        est.quaternion = quat[i]
        cmd = basic_command(
            est, DesiredState(position=des_p[i], velocity=des_v[i], yaw=des_yaw[i]), GAINS
        )
        assert thrust[i] == cmd.thrust
        np.testing.assert_array_equal(rates[i], cmd.body_rates)


def test_step_response_settles_without_integrator():
    params = sim.large_quad()
    state = sim.hover_state(params, [0.0, 0.0, 1.0])
    des = DesiredState(position=[0.0, 0.0, 1.2])
    final, trace = fly(state, params, params, lambda t: des, 5.0)
    assert abs(final.position[2] - 1.2) < 0.02
    peak = max(p[2] for _, p, _ in trace)
    assert peak < 1.2 + 0.1 * 0.2  # overshoot below 10% of the step


def test_hover_tracking_is_tight_with_true_model():
    params = sim.large_quad()
    state = sim.hover_state(params, [0.3, -0.2, 1.2])
    des = DesiredState(position=[0.3, -0.2, 1.2])
    final, trace = fly(state, params, params, lambda t: des, 3.0)
    np.testing.assert_allclose(final.position, [0.3, -0.2, 1.2], atol=1e-6)


def test_mass_mismatch_leaves_documented_offset():
    # simulated vehicle 20% heavier than the controller's model
    true_params = sim.large_quad()
    true_params.mass = 0.85 * 1.2
    ctrl_params = sim.large_quad()
    state = sim.hover_state(true_params, [0.0, 0.0, 1.2])
    des = DesiredState(position=[0.0, 0.0, 1.2])
    final, _ = fly(state, true_params, ctrl_params, lambda t: des, 8.0)
    offset = 1.2 - final.position[2]
    assert abs(offset - 0.4905) < 0.01


def test_constant_force_disturbance_leaves_offset():
    params = sim.large_quad()
    state = sim.hover_state(params, [0.0, 0.0, 1.2])
    wrench = sim.ExternalWrench(np.array([0.0, 0.0, -0.85]), np.zeros(3))
    des = DesiredState(position=[0.0, 0.0, 1.2])
    final, _ = fly(state, params, params, lambda t: des, 8.0, wrench)
    # -1 m/s^2 equivalent force -> 1/kp = 0.25 m sag
    assert abs((1.2 - final.position[2]) - 0.25) < 0.01
