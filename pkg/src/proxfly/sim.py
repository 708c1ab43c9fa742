"""Rigid-body quadcopter simulator.

Models a quadcopter as a single 6-DOF rigid body with four thrust-producing
propellers on first-order motor dynamics.  The simulator is deterministic:
every call to :func:`step` is a pure function of its inputs, randomness and
disturbances enter only through the external wrench and the parameter
factors chosen by the caller.

Frames and units
----------------
* world frame: right-handed, z up, gravity ``(0, 0, -9.81)`` m/s^2,
* body frame: x forward, y left, z up (thrust axis),
* positions in m, velocities m/s, body rates rad/s, motor speeds rad/s,
* per-propeller thrust ``T_i = factor_i * thrust_coeff * speed_i^2`` in N,
* propeller reaction torque about body z is ``torque_to_thrust * T_i``.

Motor layout (X configuration, viewed from above)::

       x (front)
   FL  |  FR
    0  |  1      0: front-left,  spins CCW
  y ---+---      1: front-right, spins CW
    3  |  2      2: rear-right,  spins CCW
   RL  |  RR     3: rear-left,   spins CW

Integration is semi-implicit Euler at a fixed step: velocities are updated
from accelerations first, then positions from the new velocities.  Attitude
uses the exact quaternion exponential of the new body rates and is
renormalized every step.  A ground plane at z = 0 absorbs downward motion
without bounce.

The module exposes a single-vehicle API built on an array core that
broadcasts over a leading batch axis, so many independent vehicles can be
stepped in lockstep at numpy speed.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .rotations import quat_from_yaw

GRAVITY = 9.81

# Mounting height of a docked vehicle above the carrier's center of mass, m.
DOCK_MOUNT_HEIGHT = 0.05

_SQRT2_HALF = np.sqrt(0.5)

# Per-motor signs for roll / pitch / yaw torque in the order FL, FR, RR, RL.
_ROLL_SIGNS = np.array([1.0, -1.0, -1.0, 1.0])
_PITCH_SIGNS = np.array([-1.0, -1.0, 1.0, 1.0])
_YAW_SIGNS = np.array([-1.0, 1.0, -1.0, 1.0])


@dataclass
class VehicleParams:
    """Physical constants of one vehicle. SI units throughout."""

    mass: float
    inertia_diag: np.ndarray
    arm_length: float
    thrust_coeff: float
    torque_to_thrust: float
    motor_time_constant: float
    per_propeller_thrust_factors: np.ndarray = field(
        default_factory=lambda: np.ones(4)
    )

    def __post_init__(self):
        self.inertia_diag = np.asarray(self.inertia_diag, dtype=float)
        self.per_propeller_thrust_factors = np.asarray(
            self.per_propeller_thrust_factors, dtype=float
        )

    def torque_geometry(self):
        """(3, 4) map from per-propeller thrusts to body torques."""
        moment_arm = self.arm_length * _SQRT2_HALF
        return np.stack(
            [
                moment_arm * _ROLL_SIGNS,
                moment_arm * _PITCH_SIGNS,
                self.torque_to_thrust * _YAW_SIGNS,
            ]
        )

    def hover_motor_speed(self):
        """Speed at which four unit-factor propellers carry the weight."""
        return float(np.sqrt(self.mass * GRAVITY / (4.0 * self.thrust_coeff)))


@dataclass
class VehicleState:
    """Instantaneous truth state of one vehicle."""

    position: np.ndarray
    velocity: np.ndarray
    quaternion: np.ndarray
    body_rates: np.ndarray
    motor_speeds: np.ndarray

    def copy(self):
        return VehicleState(
            self.position.copy(),
            self.velocity.copy(),
            self.quaternion.copy(),
            self.body_rates.copy(),
            self.motor_speeds.copy(),
        )


@dataclass
class ExternalWrench:
    """Force in the world frame (N), torque in the body frame (N m)."""

    force: np.ndarray = field(default_factory=lambda: np.zeros(3))
    torque: np.ndarray = field(default_factory=lambda: np.zeros(3))


ZERO_WRENCH = ExternalWrench()


def small_quad():
    """Nominal parameters of the docking-capable small quadcopter."""
    return VehicleParams(
        mass=0.280,
        inertia_diag=np.array([2.36e-4, 2.36e-4, 3.03e-4]),
        arm_length=0.058,
        thrust_coeff=1.145e-7,
        torque_to_thrust=0.014,
        motor_time_constant=0.02,
    )


def large_quad():
    """Nominal parameters of the carrier large quadcopter."""
    return VehicleParams(
        mass=0.850,
        inertia_diag=np.array([5.51e-3, 5.51e-3, 9.88e-3]),
        arm_length=0.165,
        thrust_coeff=7.640e-6,
        torque_to_thrust=0.022,
        motor_time_constant=0.02,
    )


def rest_state(position, yaw=0.0):
    """Vehicle at rest with motors stopped."""
    return VehicleState(
        position=np.asarray(position, dtype=float).copy(),
        velocity=np.zeros(3),
        quaternion=quat_from_yaw(float(yaw)),
        body_rates=np.zeros(3),
        motor_speeds=np.zeros(4),
    )


def hover_state(params, position, yaw=0.0):
    """Vehicle in nominal hover equilibrium (unit thrust factors assumed)."""
    state = rest_state(position, yaw)
    state.motor_speeds = np.full(4, params.hover_motor_speed())
    return state


def motor_dynamics(motor_speeds, commanded_speeds, dt, params):
    """First-order lag toward the commanded speeds, exact discretization."""
    decay = np.exp(-dt / params.motor_time_constant)
    return commanded_speeds + (motor_speeds - commanded_speeds) * decay


def step_arrays(
    position,
    velocity,
    quaternion,
    body_rates,
    motor_speeds,
    motor_cmds,
    force_world,
    torque_body,
    mass,
    inertia_diag,
    thrust_coeff,
    thrust_factors,
    moment_arm,
    yaw_coeff,
    motor_time_constant,
    dt,
):
    """One semi-implicit Euler step over a leading batch axis.

    State arrays are (B, 3) / (B, 4); mass, thrust_coeff, moment_arm and
    yaw_coeff are (B,) or scalars, inertia_diag (B, 3), thrust_factors
    (B, 4); motor_time_constant is shared by the batch.  All arithmetic is
    elementwise, so results are bitwise independent of the batch size.
    Returns the new state arrays; inputs are not modified.
    """
    decay = np.exp(-dt / motor_time_constant)
    motors = motor_cmds + (motor_speeds - motor_cmds) * decay

    thrusts = thrust_factors * (np.asarray(thrust_coeff)[..., None] * motors * motors)
    t0, t1, t2, t3 = thrusts[..., 0], thrusts[..., 1], thrusts[..., 2], thrusts[..., 3]
    total_thrust = (t0 + t1) + (t2 + t3)

    w, x, y, z = (
        quaternion[..., 0],
        quaternion[..., 1],
        quaternion[..., 2],
        quaternion[..., 3],
    )
    body_z = np.stack(
        [2.0 * (x * z + w * y), 2.0 * (y * z - w * x), 1.0 - 2.0 * (x * x + y * y)],
        axis=-1,
    )

    accel = body_z * (total_thrust / mass)[..., None] + force_world / mass[..., None]
    accel[..., 2] -= GRAVITY

    lx = inertia_diag[..., 0] * body_rates[..., 0]
    ly = inertia_diag[..., 1] * body_rates[..., 1]
    lz = inertia_diag[..., 2] * body_rates[..., 2]
    wx, wy, wz = body_rates[..., 0], body_rates[..., 1], body_rates[..., 2]
    torque = np.stack(
        [
            moment_arm * ((t0 - t1) + (t3 - t2)) - (wy * lz - wz * ly),
            moment_arm * ((t2 - t1) + (t3 - t0)) - (wz * lx - wx * lz),
            yaw_coeff * ((t1 - t0) + (t3 - t2)) - (wx * ly - wy * lx),
        ],
        axis=-1,
    )
    torque = torque + torque_body
    rate_dot = torque / inertia_diag

    velocity = velocity + accel * dt
    position = position + velocity * dt
    body_rates = body_rates + rate_dot * dt

    rot = body_rates * dt
    angle = np.linalg.norm(rot, axis=-1, keepdims=True)
    half = 0.5 * angle
    small = angle < 1e-12
    k = np.where(small, 0.5, np.sin(half) / np.where(small, 1.0, angle))
    dw = np.cos(half)[..., 0]
    dv = k * rot
    quaternion = np.stack(
        [
            w * dw - x * dv[..., 0] - y * dv[..., 1] - z * dv[..., 2],
            w * dv[..., 0] + x * dw + y * dv[..., 2] - z * dv[..., 1],
            w * dv[..., 1] - x * dv[..., 2] + y * dw + z * dv[..., 0],
            w * dv[..., 2] + x * dv[..., 1] - y * dv[..., 0] + z * dw,
        ],
        axis=-1,
    )
    quaternion = quaternion / np.linalg.norm(quaternion, axis=-1, keepdims=True)

    # ground plane: no penetration, no bounce
    grounded = position[..., 2] < 0.0
    if np.any(grounded):
        position[..., 2] = np.where(grounded, 0.0, position[..., 2])
        velocity[..., 2] = np.where(
            grounded & (velocity[..., 2] < 0.0), 0.0, velocity[..., 2]
        )

    return position, velocity, quaternion, body_rates, motors


def step(state, motor_cmds, wrench, params, dt):
    """Advance one vehicle by dt. Returns a new VehicleState."""
    pos, vel, quat, rates, motors = step_arrays(
        state.position[None],
        state.velocity[None],
        state.quaternion[None],
        state.body_rates[None],
        state.motor_speeds[None],
        np.asarray(motor_cmds, dtype=float)[None],
        np.asarray(wrench.force, dtype=float)[None],
        np.asarray(wrench.torque, dtype=float)[None],
        np.array([params.mass]),
        params.inertia_diag[None],
        np.array([params.thrust_coeff]),
        params.per_propeller_thrust_factors[None],
        params.arm_length * _SQRT2_HALF,
        params.torque_to_thrust,
        params.motor_time_constant,
        dt,
    )
    return VehicleState(pos[0], vel[0], quat[0], rates[0], motors[0])


def apply_dock_event(params_lower, params_upper, impact_velocity, state_lower):
    """Merge an upper vehicle landing on the lower one into a single body.

    The upper vehicle is treated as a point mass mounted DOCK_MOUNT_HEIGHT
    above the lower vehicle's center of mass: masses add, roll and pitch
    inertia gain the parallel-axis term, yaw inertia is unchanged.  The
    impact is inelastic, transferring the vertical momentum of the upper
    vehicle to the combined body.  impact_velocity is the downward-positive
    closing speed in m/s.

    Returns (combined_params, updated_lower_state).
    """
    m_l = params_lower.mass
    m_u = params_upper.mass
    combined_mass = m_l + m_u
    inertia = params_lower.inertia_diag.copy()
    inertia[0] += m_u * DOCK_MOUNT_HEIGHT**2
    inertia[1] += m_u * DOCK_MOUNT_HEIGHT**2
    combined = replace(
        params_lower,
        mass=combined_mass,
        inertia_diag=inertia,
        per_propeller_thrust_factors=params_lower.per_propeller_thrust_factors.copy(),
    )
    state = state_lower.copy()
    state.velocity[2] -= m_u * impact_velocity / combined_mass
    return combined, state
