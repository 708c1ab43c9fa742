"""Training episode rollouts, batched along a leading axis.

Episodes of one epoch run in lockstep through the vectorized simulator core:
on a single core, stepping ten randomized simulators as (10, ...) arrays is
what keeps a full training run inside the minutes range. All per-episode
randomness (model factors, disturbance profile, torque noise, exploration
noise) is pre-drawn from a per-episode generator before stepping starts, so
an episode's outcome depends only on its own stream, not on batch
composition or on when its neighbors crash.
"""

from dataclasses import dataclass

import numpy as np

from . import policy as policy_mod
from .controller import (
    ControllerGains,
    SIM_DT,
    TICKS_PER_CONTROL,
    basic_command_arrays,
    low_level_arrays,
)
from .disturbances import (
    DisturbanceProfile,
    ZERO_PROFILE,
    sample_randomization,
    sample_training_profile,
    triangular_wave_arrays,
)
from .reward import reward_arrays
from .sim import GRAVITY, VehicleParams, step_arrays

EPISODE_DURATION = 20.0
CONTROL_STEPS = 1000  # 20 s at 50 Hz
HOVER_SETPOINT = np.array([0.0, 0.0, 1.2])
DESCENT_START = 15.0
DESCENT_SPEED = 0.2
START_HALF_WIDTH = 1.0  # takeoff anywhere in a 2 m x 2 m ground patch

# early termination bounds
POSITION_ERROR_LIMIT = 3.0
UNDERGROUND_LIMIT = -0.05
LIFTOFF_HEIGHT = 0.1

_SQRT2_HALF = np.sqrt(0.5)


def training_setpoint(t: float):
    """Desired (position, velocity, yaw) of the training task at time t:
    hover at 1.2 m, then descend at 0.2 m/s for the last five seconds."""
    if t < DESCENT_START:
        return HOVER_SETPOINT, np.zeros(3), 0.0
    dz = DESCENT_SPEED * (t - DESCENT_START)
    return (
        HOVER_SETPOINT - np.array([0.0, 0.0, dz]),
        np.array([0.0, 0.0, -DESCENT_SPEED]),
        0.0,
    )


@dataclass
class EpisodeSetup:
    """Everything random about one episode, drawn up front."""

    start_xy: np.ndarray
    mass_factor: float
    inertia_factor: float
    profile: DisturbanceProfile
    torque_noise: np.ndarray  # (CONTROL_STEPS, 3), held over each control step
    action_noise: np.ndarray  # (CONTROL_STEPS, 4), standard normal


def sample_episode_setup(rng, vehicle_class: str) -> EpisodeSetup:
    """Fixed draw order: start position, model factors, disturbance profile,
    torque noise, exploration noise."""
    start_xy = rng.uniform(-START_HALF_WIDTH, START_HALF_WIDTH, 2)
    mass_factor, inertia_factor = sample_randomization(rng, vehicle_class)
    profile = sample_training_profile(rng, vehicle_class)
    torque_noise = rng.normal(0.0, profile.torque_sigma, (CONTROL_STEPS, 3))
    action_noise = rng.standard_normal((CONTROL_STEPS, 4))
    return EpisodeSetup(
        start_xy=start_xy,
        mass_factor=mass_factor,
        inertia_factor=inertia_factor,
        profile=profile,
        torque_noise=torque_noise,
        action_noise=action_noise,
    )


def nominal_episode_setup(start_xy=(0.0, 0.0)) -> EpisodeSetup:
    """All factors pinned to one, no disturbance, no exploration noise."""
    return EpisodeSetup(
        start_xy=np.asarray(start_xy, dtype=float),
        mass_factor=1.0,
        inertia_factor=1.0,
        profile=ZERO_PROFILE,
        torque_noise=np.zeros((CONTROL_STEPS, 3)),
        action_noise=np.zeros((CONTROL_STEPS, 4)),
    )


@dataclass
class EpisodeBatch:
    """Per-control-step transition data for a batch of episodes.

    Arrays are (B, T, ...) padded to T = CONTROL_STEPS; only the first
    lengths[b] entries of row b are meaningful. crashed rows bootstrap with
    zero, surviving rows with the value estimate of the state past the end.
    """

    observations: np.ndarray
    raw_actions: np.ndarray
    log_probs: np.ndarray
    values: np.ndarray
    rewards: np.ndarray
    lengths: np.ndarray
    crashed: np.ndarray
    bootstrap_values: np.ndarray

    def episode_returns(self) -> np.ndarray:
        mask = np.arange(self.rewards.shape[1]) < self.lengths[:, None]
        return (self.rewards * mask).sum(axis=1)


def _latch(dst, src):
    for key in dst:
        dst[key] = src[key].copy()


def rollout_batch(
    params: policy_mod.PolicyParams,
    vehicle: VehicleParams,
    setups,
    gains: ControllerGains | None = None,
    deterministic: bool = False,
) -> EpisodeBatch:
    """Run len(setups) episodes in lockstep under one policy.

    The controller always uses the nominal vehicle model; each simulated
    vehicle uses its episode's randomized mass, inertia and thrust factors.
    That mismatch, plus the disturbance profile, is what the residual learns
    to absorb.
    """
    gains = gains or ControllerGains()
    n = len(setups)
    ticks = CONTROL_STEPS * TICKS_PER_CONTROL

    # simulated (randomized) physical parameters
    mass = vehicle.mass * np.array([s.mass_factor for s in setups])
    inertia = vehicle.inertia_diag * np.array(
        [s.inertia_factor for s in setups]
    )[:, None]
    thrust_factors = np.stack(
        [s.profile.per_propeller_thrust_factors for s in setups]
    )
    moment_arm = vehicle.arm_length * _SQRT2_HALF

    wave_periods = np.stack([s.profile.force_periods for s in setups])
    wave_amplitudes = np.stack([s.profile.force_amplitudes for s in setups])
    wave_phases = np.stack([s.profile.force_phases for s in setups])
    wave_caps = np.stack([s.profile.force_caps for s in setups])
    torque_noise = np.stack([s.torque_noise for s in setups])
    action_noise = np.stack([s.action_noise for s in setups])

    # truth state
    position = np.zeros((n, 3))
    position[:, :2] = np.stack([s.start_xy for s in setups])
    velocity = np.zeros((n, 3))
    quaternion = np.zeros((n, 4))
    quaternion[:, 0] = 1.0
    body_rates = np.zeros((n, 3))
    motor_speeds = np.zeros((n, 4))

    truth = lambda: {
        "position": position,
        "velocity": velocity,
        "quaternion": quaternion,
        "body_rates": body_rates,
    }
    est = {k: v.copy() for k, v in truth().items()}
    held = {k: v.copy() for k, v in truth().items()}

    observations = np.zeros((n, CONTROL_STEPS, policy_mod.OBS_DIM))
    raw_actions = np.zeros((n, CONTROL_STEPS, policy_mod.ACTION_DIM))
    log_probs = np.zeros((n, CONTROL_STEPS))
    values = np.zeros((n, CONTROL_STEPS))
    rewards = np.zeros((n, CONTROL_STEPS))
    lengths = np.full(n, CONTROL_STEPS, dtype=int)
    crashed = np.zeros(n, dtype=bool)
    bootstrap_values = np.zeros(n)

    active = np.ones(n, dtype=bool)
    lifted = np.zeros(n, dtype=bool)
    prev_residual = np.zeros((n, 4))
    cmd_thrust = np.zeros(n)
    cmd_rates = np.zeros((n, 3))
    prev_cmd_thrust = np.zeros(n)
    prev_cmd_rates = np.zeros((n, 3))
    log_std = policy_mod.clipped_log_std(params)

    def check_termination(step_index, des_position):
        nonlocal active
        err = np.linalg.norm(des_position - position, axis=-1)
        upside_down = (
            1.0 - 2.0 * (quaternion[:, 1] ** 2 + quaternion[:, 2] ** 2)
        ) < 0.0
        underground = lifted & (position[:, 2] < UNDERGROUND_LIMIT)
        gone = active & ((err > POSITION_ERROR_LIMIT) | upside_down | underground)
        if gone.any():
            lengths[gone] = step_index
            crashed[gone] = True
            active = active & ~gone

    for k in range(ticks):
        # 200 Hz estimator latch pattern on the 500 Hz tick grid
        if k % 5 == 0:
            _latch(est, truth())
        elif k % 5 == 3:
            _latch(est, held)
        if k % 5 == 2:
            _latch(held, truth())

        if k % TICKS_PER_CONTROL == 0:
            i = k // TICKS_PER_CONTROL
            t = k * SIM_DT
            des_position, des_velocity, des_yaw = training_setpoint(t)
            lifted = lifted | (position[:, 2] > LIFTOFF_HEIGHT)
            check_termination(i, des_position)

            cas_thrust, cas_rates = basic_command_arrays(
                est["position"],
                est["velocity"],
                est["quaternion"],
                des_position,
                des_velocity,
                des_yaw,
                gains,
            )
            obs = policy_mod.observation_arrays(
                est["position"],
                est["velocity"],
                est["quaternion"],
                est["body_rates"],
                des_position,
                des_velocity,
                des_yaw,
                cas_thrust,
                cas_rates,
                prev_residual,
            )
            mean, value = policy_mod.policy_forward(obs, params)
            if deterministic:
                raw = mean
            else:
                raw = np.clip(mean + np.exp(log_std) * action_noise[:, i], -1.0, 1.0)
            logp = policy_mod.gaussian_log_prob(raw, mean, log_std)
            residual = raw * policy_mod.ACTION_SCALES
            cmd_thrust, cmd_rates = policy_mod.superpose_arrays(
                cas_thrust, cas_rates, residual
            )
            # crashed rows coast with zero command so their states stay bounded
            cmd_thrust = np.where(active, cmd_thrust, 0.0)
            cmd_rates = np.where(active[:, None], cmd_rates, 0.0)
            if i == 0:
                prev_cmd_thrust = cmd_thrust.copy()
                prev_cmd_rates = cmd_rates.copy()
            reward_total = reward_arrays(
                prev_cmd_thrust,
                prev_cmd_rates,
                cmd_thrust,
                cmd_rates,
                est["position"],
                est["quaternion"],
                des_position,
                des_yaw,
            )[-1]

            observations[:, i] = obs
            raw_actions[:, i] = raw
            log_probs[:, i] = logp
            values[:, i] = value
            rewards[:, i] = reward_total
            prev_residual = residual
            prev_cmd_thrust = cmd_thrust
            prev_cmd_rates = cmd_rates

        motor_cmds = low_level_arrays(
            est["body_rates"],
            cmd_thrust,
            cmd_rates,
            vehicle.mass,
            vehicle.inertia_diag,
            vehicle.thrust_coeff,
            moment_arm,
            vehicle.torque_to_thrust,
            gains,
        )
        t = k * SIM_DT
        force = triangular_wave_arrays(
            wave_periods, wave_amplitudes, wave_phases, wave_caps, t
        )
        torque = torque_noise[:, k // TICKS_PER_CONTROL]
        position, velocity, quaternion, body_rates, motor_speeds = step_arrays(
            position,
            velocity,
            quaternion,
            body_rates,
            motor_speeds,
            motor_cmds,
            force,
            torque,
            mass,
            inertia,
            vehicle.thrust_coeff,
            thrust_factors,
            moment_arm,
            vehicle.torque_to_thrust,
            vehicle.motor_time_constant,
            SIM_DT,
        )

    # closing bookkeeping at t = 20 s: final latch, final crash check,
    # value bootstrap for episodes that ran to truncation
    _latch(est, truth())
    des_position, des_velocity, des_yaw = training_setpoint(EPISODE_DURATION)
    lifted = lifted | (position[:, 2] > LIFTOFF_HEIGHT)
    check_termination(CONTROL_STEPS, des_position)
    if active.any():
        cas_thrust, cas_rates = basic_command_arrays(
            est["position"],
            est["velocity"],
            est["quaternion"],
            des_position,
            des_velocity,
            des_yaw,
            gains,
        )
        obs = policy_mod.observation_arrays(
            est["position"],
            est["velocity"],
            est["quaternion"],
            est["body_rates"],
            des_position,
            des_velocity,
            des_yaw,
            cas_thrust,
            cas_rates,
            prev_residual,
        )
        _, value = policy_mod.policy_forward(obs, params)
        bootstrap_values = np.where(active, value, 0.0)

    return EpisodeBatch(
        observations=observations,
        raw_actions=raw_actions,
        log_probs=log_probs,
        values=values,
        rewards=rewards,
        lengths=lengths,
        crashed=crashed,
        bootstrap_values=bootstrap_values,
    )


def evaluate_hover(
    params: policy_mod.PolicyParams,
    vehicle: VehicleParams,
    window=(5.0, 15.0),
):
    """Deterministic nominal-conditions episode; returns (E_pos, mean |c_res|)
    over the time window, both from the policy's own observations."""
    batch = rollout_batch(params, vehicle, [nominal_episode_setup()], deterministic=True)
    lo = int(window[0] / 0.02)
    hi = int(window[1] / 0.02)
    if batch.lengths[0] < hi:
        return float("inf"), float("inf")
    pos_err = batch.observations[0, lo:hi, 0:3]  # unit scale: meters
    e_pos = float(np.sqrt(np.mean(np.sum(pos_err**2, axis=-1))))
    c_res = batch.raw_actions[0, lo:hi, 0] * policy_mod.ACTION_SCALES[0]
    mean_abs_c = float(np.mean(np.abs(c_res)))
    return e_pos, mean_abs_c
