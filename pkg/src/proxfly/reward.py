"""Per-step training reward.

Computed once per 50 Hz control step on the overall (superposed) command;
commands are constant between control steps so nothing is lost by not
evaluating at the simulation rate.
"""

from dataclasses import dataclass

import numpy as np

from .rotations import quat_from_yaw, quat_to_rotmat

# weights on [position error, attitude error, thrust penalty, rate penalty, survival]
REWARD_WEIGHTS = np.array([-1.0, -1.0, -0.01, -0.1, 1.0])
SURVIVAL_BONUS = 0.1


@dataclass
class RewardBreakdown:
    e_pos: float
    e_att: float
    p_thrust: float
    p_rates: float
    r_survive: float
    total: float

    def as_array(self) -> np.ndarray:
        return np.array([self.e_pos, self.e_att, self.p_thrust, self.p_rates, self.total])


def reward_arrays(
    prev_thrust,
    prev_rates,
    thrust,
    rates,
    position,
    quaternion,
    des_position,
    des_yaw,
):
    """Reward terms for one control step; broadcasts over leading axes.

    Returns (e_pos, e_att, p_thrust, p_rates, total). The attitude target is
    level flight at the desired yaw; e_att = 3 - trace(R^T R_des) which equals
    2 - 2 cos(relative angle).
    """
    e_pos = np.linalg.norm(des_position - position, axis=-1)
    rot = quat_to_rotmat(quaternion)
    rot_des = quat_to_rotmat(quat_from_yaw(des_yaw))
    e_att = 3.0 - np.einsum("...ij,...ij->...", rot, rot_des)
    p_thrust = np.abs(thrust) + 2.0 * np.abs(thrust - prev_thrust)
    p_rates = np.linalg.norm(rates, axis=-1) + 2.0 * np.linalg.norm(
        rates - prev_rates, axis=-1
    )
    total = (
        REWARD_WEIGHTS[0] * e_pos
        + REWARD_WEIGHTS[1] * e_att
        + REWARD_WEIGHTS[2] * p_thrust
        + REWARD_WEIGHTS[3] * p_rates
        + REWARD_WEIGHTS[4] * SURVIVAL_BONUS
    )
    return e_pos, e_att, p_thrust, p_rates, total


def compute_reward(prev_cmd, cmd, est, des) -> RewardBreakdown:
    e_pos, e_att, p_thrust, p_rates, total = reward_arrays(
        float(prev_cmd.thrust),
        np.asarray(prev_cmd.body_rates, dtype=float),
        float(cmd.thrust),
        np.asarray(cmd.body_rates, dtype=float),
        np.asarray(est.position, dtype=float),
        np.asarray(est.quaternion, dtype=float),
        np.asarray(des.position, dtype=float),
        float(des.yaw),
    )
    return RewardBreakdown(
        e_pos=float(e_pos),
        e_att=float(e_att),
        p_thrust=float(p_thrust),
        p_rates=float(p_rates),
        r_survive=SURVIVAL_BONUS,
        total=float(total),
    )
