"""Disturbance models: training-time randomization and proximity downwash.

Two unrelated disturbance sources live here because both enter the
simulator through the same external-wrench interface:

* randomized training disturbances, sampled per episode: truncated
  triangular force waves in the world frame, white Gaussian torque noise
  in the body frame, and per-propeller thrust factors, with ranges that
  depend on the vehicle class,
* a deterministic parametric downwash model applied to the lower vehicle
  whenever another vehicle thrusts above it.

The downwash vertical force follows an exponential decay with vertical
separation and a radial Gaussian profile whose width grows linearly with
vertical separation.  An antisymmetric roll/pitch torque models the force
acting off-center: zero directly underneath, peaking at one Gaussian
width of horizontal offset.  Flying in disturbed inflow also costs rotor
efficiency, modeled as a factor on the lower vehicle's propeller thrust
factors that drops with the strength of the impinging wake.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class VehicleClassRanges:
    """Per-class randomization bounds. Forces N, torques N m."""

    mass_factor: tuple
    force_amplitude_xy: tuple
    force_amplitude_z: tuple
    force_cap_xy: float
    force_cap_z: float
    torque_sigma: float


CLASS_RANGES = {
    "small_quad": VehicleClassRanges(
        mass_factor=(0.8, 1.2),
        force_amplitude_xy=(0.0, 0.5),
        force_amplitude_z=(0.0, 2.0),
        force_cap_xy=0.25,
        force_cap_z=1.0,
        torque_sigma=0.005,
    ),
    "large_quad": VehicleClassRanges(
        mass_factor=(0.5, 1.5),
        force_amplitude_xy=(0.0, 2.0),
        force_amplitude_z=(0.0, 8.0),
        force_cap_xy=1.0,
        force_cap_z=4.0,
        torque_sigma=0.02,
    ),
}

FORCE_PERIOD_RANGE = (2.0, 8.0)
THRUST_FACTOR_RANGE = (0.6, 1.2)
INERTIA_FACTOR_SPREAD = (0.8, 1.2)


@dataclass
class DisturbanceProfile:
    """One episode's worth of sampled disturbance parameters."""

    force_periods: np.ndarray
    force_amplitudes: np.ndarray
    force_phases: np.ndarray
    force_caps: np.ndarray
    torque_sigma: float
    per_propeller_thrust_factors: np.ndarray

    def __post_init__(self):
        for name in ("force_periods", "force_amplitudes", "force_phases",
                     "force_caps", "per_propeller_thrust_factors"):
            setattr(self, name, np.asarray(getattr(self, name), dtype=float))


ZERO_PROFILE = DisturbanceProfile(
    force_periods=np.ones(3),
    force_amplitudes=np.zeros(3),
    force_phases=np.zeros(3),
    force_caps=np.zeros(3),
    torque_sigma=0.0,
    per_propeller_thrust_factors=np.ones(4),
)


def sample_training_profile(rng, vehicle_class):
    """Draw one episode's disturbance profile for a vehicle class.

    Draw order is fixed (periods, amplitudes, phases, thrust factors) so a
    given rng stream always yields the same profile.
    """
    ranges = CLASS_RANGES[vehicle_class]
    periods = rng.uniform(*FORCE_PERIOD_RANGE, 3)
    amplitudes = np.array(
        [
            rng.uniform(*ranges.force_amplitude_xy),
            rng.uniform(*ranges.force_amplitude_xy),
            rng.uniform(*ranges.force_amplitude_z),
        ]
    )
    phases = rng.uniform(0.0, 1.0, 3) * periods
    factors = rng.uniform(*THRUST_FACTOR_RANGE, 4)
    return DisturbanceProfile(
        force_periods=periods,
        force_amplitudes=amplitudes,
        force_phases=phases,
        force_caps=np.array([ranges.force_cap_xy, ranges.force_cap_xy, ranges.force_cap_z]),
        torque_sigma=ranges.torque_sigma,
        per_propeller_thrust_factors=factors,
    )


def sample_randomization(rng, vehicle_class):
    """Draw (mass_factor, inertia_factor) for one episode.

    The inertia factor follows the mass factor times an independent spread,
    so heavier samples also tend to carry more inertia.
    """
    ranges = CLASS_RANGES[vehicle_class]
    mass_factor = rng.uniform(*ranges.mass_factor)
    inertia_factor = mass_factor * rng.uniform(*INERTIA_FACTOR_SPREAD)
    return mass_factor, inertia_factor


def triangular_wave_arrays(periods, amplitudes, phases, caps, t):
    """Truncated zero-mean triangular waves, elementwise over any shape.

    The wave crosses zero upward at t = phase, peaks at +amplitude a quarter
    period later, and is clipped to +-cap.
    """
    u = (np.asarray(t) - phases) / periods
    u = u - np.floor(u)
    tri = np.where(u < 0.25, 4.0 * u, np.where(u < 0.75, 2.0 - 4.0 * u, 4.0 * u - 4.0))
    return np.clip(amplitudes * tri, -caps, caps)


def triangular_force(profile, t):
    """World-frame disturbance force (3,) at time t, in N."""
    return triangular_wave_arrays(
        profile.force_periods,
        profile.force_amplitudes,
        profile.force_phases,
        profile.force_caps,
        t,
    )


def gaussian_torque(profile, rng):
    """Body-frame torque noise draw (3,), in N m."""
    return rng.normal(0.0, profile.torque_sigma, 3)


@dataclass
class DownwashParams:
    """Calibration of the parametric downwash model.

    peak_force_scale is the peak force directly underneath at zero vertical
    separation, as a fraction of the upper vehicle's weight-equivalent
    thrust.  Lengths in m.
    """

    peak_force_scale: float = 0.8
    vertical_decay_length: float = 0.5
    horizontal_sigma_base: float = 0.15
    horizontal_sigma_growth: float = 0.3
    torque_arm_scale: float = 0.05
    efficiency_loss_scale: float = 0.4


def downwash_wrench(upper_position, lower_position, upper_weight, params):
    """Wake wrench on the lower vehicle plus its thrust efficiency factor.

    upper_weight is the weight-equivalent momentum flux of the upper
    vehicle's wake in N; passing its current total thrust makes the wake
    die with the rotors.  Returns (force_world (3,), torque_body (3,),
    efficiency_factor).  The torque is expressed in the body frame under a
    near-level assumption for the lower vehicle.
    """
    d_v = upper_position[2] - lower_position[2]
    if d_v <= 0.0 or upper_weight <= 0.0:
        return np.zeros(3), np.zeros(3), 1.0

    dx = upper_position[0] - lower_position[0]
    dy = upper_position[1] - lower_position[1]
    sigma = params.horizontal_sigma_base + params.horizontal_sigma_growth * d_v
    radial = np.exp(-(dx * dx + dy * dy) / (2.0 * sigma * sigma))
    magnitude = (
        upper_weight
        * params.peak_force_scale
        * np.exp(-d_v / params.vertical_decay_length)
        * radial
    )
    force = np.array([0.0, 0.0, -magnitude])
    # off-center wake pushes the near side down: torque ~ z_hat x offset
    scale = params.torque_arm_scale * magnitude / sigma
    torque = np.array([-dy * scale, dx * scale, 0.0])
    efficiency = 1.0 - params.efficiency_loss_scale * magnitude / upper_weight
    return force, torque, float(np.clip(efficiency, 0.5, 1.0))
