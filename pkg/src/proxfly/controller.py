"""Cascaded flight controller.

Three loops, mirroring a conventional autopilot stack:

* high level, 50 Hz: PD position control produces a desired acceleration
  (clamped per axis), which is converted into a collective thrust along
  the current body z-axis plus desired body rates that steer the vehicle
  toward the tilt-and-yaw attitude realizing that acceleration,
* low level, 500 Hz: proportional body-rate control scaled by the inertia,
  followed by X-configuration thrust allocation and conversion to motor
  speed commands,
* a state estimator that latches the simulated truth at 200 Hz with
  optional additive noise, so the high-rate loops act on sampled data.

The high-level command is deliberately free of integral action: constant
force or model errors leave a steady-state offset.  Closing that gap is
the job of the learned residual, not of this controller.

All commands are mass-normalized where possible: collective thrust is in
m/s^2 and becomes a force only inside the low-level allocation.  The
controller always uses the vehicle's nominal parameters; whatever the
simulated vehicle actually does differently is invisible to it.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .rotations import (
    quat_conjugate,
    quat_from_rotation_vector,
    quat_from_yaw,
    quat_multiply,
    rotation_vector_from_quat,
)
from .sim import GRAVITY, VehicleState

SIM_RATE = 500.0
ESTIMATOR_RATE = 200.0
CONTROL_RATE = 50.0

SIM_DT = 1.0 / SIM_RATE
CONTROL_DT = 1.0 / CONTROL_RATE

# a control step spans this many simulator ticks
TICKS_PER_CONTROL = int(round(SIM_RATE / CONTROL_RATE))

_TIME_EPS = 1e-9


@dataclass
class ControllerGains:
    """Gains shared by both vehicle classes."""

    natural_frequency: float = 2.0
    damping_ratio: float = 0.7
    attitude_time_constant_rp: float = 0.2
    attitude_time_constant_yaw: float = 0.5
    body_rate_gain: float = 20.0
    accel_limit: float = 12.0


@dataclass
class DesiredState:
    """Setpoint for the high-level loop: where to be, how fast, which way."""

    position: np.ndarray
    velocity: np.ndarray = field(default_factory=lambda: np.zeros(3))
    yaw: float = 0.0

    def __post_init__(self):
        self.position = np.asarray(self.position, dtype=float)
        self.velocity = np.asarray(self.velocity, dtype=float)


@dataclass
class HighLevelCommand:
    """Collective thrust (mass-normalized, m/s^2) and body-rate commands."""

    thrust: float
    body_rates: np.ndarray

    def __post_init__(self):
        self.body_rates = np.asarray(self.body_rates, dtype=float)

    def as_array(self):
        return np.concatenate([[self.thrust], self.body_rates])


class SampleClock:
    """Yields the sampling instants of a fixed-rate process.

    advance(t) returns the instants in (t_prev, t]; callers latch whatever
    data belongs to each instant.  Instants are generated on an exact grid
    so rate ratios like 500/200 repeat without drift.
    """

    def __init__(self, period):
        self.period = period
        self._index = 0

    def advance(self, t):
        instants = []
        while self._index * self.period <= t + _TIME_EPS:
            instants.append(self._index * self.period)
            self._index += 1
        return instants


class StateEstimator:
    """Zero-order-hold estimate of the truth state at the estimator rate.

    Each sampling instant latches the most recent simulator tick at or
    before it; between instants the estimate is held.  update() must be
    called once per simulator tick with the current truth.  Optional
    zero-mean Gaussian noise perturbs the latched position and attitude
    (as a rotation-vector perturbation); with zero stds no random numbers
    are drawn.
    """

    def __init__(self, position_noise_std=0.0, attitude_noise_std=0.0, rng=None):
        self.position_noise_std = position_noise_std
        self.attitude_noise_std = attitude_noise_std
        self.rng = rng
        self._clock = SampleClock(1.0 / ESTIMATOR_RATE)
        self._prev = None
        self._latched = None

    def update(self, t, truth):
        for instant in self._clock.advance(t):
            source = truth if abs(instant - t) < _TIME_EPS else self._prev
            if source is None:
                source = truth
            self._latch(source)
        self._prev = truth.copy()
        return self._latched

    def _latch(self, state):
        est = state.copy()
        if self.position_noise_std > 0.0:
            est.position = est.position + self.rng.normal(
                0.0, self.position_noise_std, 3
            )
        if self.attitude_noise_std > 0.0:
            wobble = quat_from_rotation_vector(
                self.rng.normal(0.0, self.attitude_noise_std, 3)
            )
            est.quaternion = quat_multiply(est.quaternion, wobble)
        self._latched = est


def position_control_arrays(position, velocity, des_position, des_velocity, gains):
    """PD acceleration demand, clamped per axis. Shapes (..., 3)."""
    wn = gains.natural_frequency
    kd = 2.0 * gains.damping_ratio * wn
    accel = wn * wn * (des_position - position) + kd * (des_velocity - velocity)
    return np.clip(accel, -gains.accel_limit, gains.accel_limit)


def desired_attitude_arrays(accel_des, des_yaw):
    """Attitude setpoint quaternion (..., 4) for an acceleration demand.

    The body z-axis is tilted onto the demand-plus-gravity direction by
    the shortest rotation, then the desired yaw is applied on top.
    Demands shorter than 0.1 m/s^2 (free-fall-like) degrade to the
    yaw-only attitude.
    """
    f = np.asarray(accel_des, dtype=float).copy()
    f[..., 2] += GRAVITY
    norm = np.linalg.norm(f, axis=-1)
    safe = norm >= 0.1

    denom = np.where(safe, norm, 1.0)
    z_des = f / denom[..., None]
    z_des = np.where(safe[..., None], z_des, np.array([0.0, 0.0, 1.0]))
    cos_yaw = np.cos(des_yaw)
    sin_yaw = np.sin(des_yaw)
    # thrust direction expressed in the desired-yaw frame
    zx = cos_yaw * z_des[..., 0] + sin_yaw * z_des[..., 1]
    zy = -sin_yaw * z_des[..., 0] + cos_yaw * z_des[..., 1]
    zz = z_des[..., 2]

    sin_tilt = np.sqrt(zx * zx + zy * zy)
    tilt = np.arctan2(sin_tilt, zz)
    near_axis = sin_tilt < 1e-9
    k = np.where(near_axis, 1.0, tilt / np.where(near_axis, 1.0, sin_tilt))
    # straight-down demand: pitch by pi as an arbitrary, consistent choice
    flipped = near_axis & (zz < 0.0)
    tilt_vec = np.stack([-zy * k, zx * k, np.zeros_like(zz)], axis=-1)
    tilt_vec = np.where(flipped[..., None], np.array([0.0, np.pi, 0.0]), tilt_vec)

    return quat_multiply(quat_from_yaw(des_yaw), quat_from_rotation_vector(tilt_vec))


def attitude_thrust_arrays(accel_des, quaternion, des_yaw, gains):
    """Thrust-vector attitude loop over a leading batch axis.

    Maps the acceleration demand to (collective thrust (...,), desired
    body rates (..., 3)).  Thrust is the demand plus gravity projected on
    the current body z-axis, floored at zero.  The desired attitude tilts
    the body z-axis onto the demand direction and holds the desired yaw;
    the attitude error, as a body-frame rotation vector, is converted to
    rates by per-axis time constants.  Demands shorter than 0.1 m/s^2
    (free-fall-like) zero the command instead of steering.
    """
    f = accel_des.copy()
    f[..., 2] += GRAVITY
    norm = np.linalg.norm(f, axis=-1)
    safe = norm >= 0.1

    w, x, y, z = quaternion[..., 0], quaternion[..., 1], quaternion[..., 2], quaternion[..., 3]
    body_z = np.stack(
        [2.0 * (x * z + w * y), 2.0 * (y * z - w * x), 1.0 - 2.0 * (x * x + y * y)],
        axis=-1,
    )
    thrust = np.maximum(np.einsum("...i,...i->...", f, body_z), 0.0)

    q_des = desired_attitude_arrays(accel_des, des_yaw)
    err = rotation_vector_from_quat(quat_multiply(quat_conjugate(quaternion), q_des))
    gain = np.array(
        [
            1.0 / gains.attitude_time_constant_rp,
            1.0 / gains.attitude_time_constant_rp,
            1.0 / gains.attitude_time_constant_yaw,
        ]
    )
    rates = err * gain

    thrust = np.where(safe, thrust, 0.0)
    rates = np.where(safe[..., None], rates, 0.0)
    return thrust, rates


def basic_command_arrays(position, velocity, quaternion, des_position, des_velocity, des_yaw, gains):
    accel = position_control_arrays(position, velocity, des_position, des_velocity, gains)
    return attitude_thrust_arrays(accel, quaternion, des_yaw, gains)


def low_level_arrays(body_rates, thrust_cmd, rate_cmd, mass, inertia_diag, thrust_coeff, moment_arm, yaw_coeff, gains):
    """Body-rate loop plus thrust allocation. Returns motor speed commands.

    The allocation inverts the X-configuration geometry in closed form;
    negative per-propeller thrusts are clamped to zero before conversion
    to speeds, so saturated commands degrade gracefully.
    """
    torque = inertia_diag * (gains.body_rate_gain * (rate_cmd - body_rates))
    force = mass * np.maximum(thrust_cmd, 0.0)
    roll = torque[..., 0] / moment_arm
    pitch = torque[..., 1] / moment_arm
    yaw = torque[..., 2] / yaw_coeff
    quarter = 0.25
    t_fl = quarter * (force + roll - pitch - yaw)
    t_fr = quarter * (force - roll - pitch + yaw)
    t_rr = quarter * (force - roll + pitch - yaw)
    t_rl = quarter * (force + roll + pitch + yaw)
    thrusts = np.stack([t_fl, t_fr, t_rr, t_rl], axis=-1)
    thrusts = np.maximum(thrusts, 0.0)
    return np.sqrt(thrusts / np.asarray(thrust_coeff)[..., None])


def position_control(est, des, gains):
    """Desired world acceleration (3,) from the latched estimate."""
    return position_control_arrays(
        est.position, est.velocity, des.position, des.velocity, gains
    )


def attitude_thrust_command(accel_des, est, des, gains):
    """High-level command realizing a desired acceleration."""
    thrust, rates = attitude_thrust_arrays(
        np.asarray(accel_des, dtype=float)[None],
        est.quaternion[None],
        np.array([des.yaw]),
        gains,
    )
    return HighLevelCommand(float(thrust[0]), rates[0])


def basic_command(est, des, gains):
    """The full high-level cascade: position PD then thrust-vector attitude.

    Depends only on the estimate, the setpoint and the gains; the learned
    residual never enters here.
    """
    return attitude_thrust_command(position_control(est, des, gains), est, des, gains)


def low_level_control(est, cmd, params, gains):
    """Motor speed commands (4,) tracking a high-level command."""
    return low_level_arrays(
        est.body_rates[None],
        np.array([cmd.thrust]),
        cmd.body_rates[None],
        params.mass,
        params.inertia_diag[None],
        np.array([params.thrust_coeff]),
        params.arm_length * np.sqrt(0.5),
        params.torque_to_thrust,
        gains,
    )[0]
