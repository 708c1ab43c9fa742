"""Residual policy: observations, MLP networks, action scaling, superposition.

The policy outputs a bounded correction on top of the basic cascaded command.
Two separate 3-layer MLPs (policy and value) are small enough that hand-rolled
numpy forward/backward passes cover everything training needs; no deep
learning framework is pulled in.
"""

import json
from dataclasses import dataclass, field

import numpy as np

from .controller import HighLevelCommand
from .rotations import (
    quat_conjugate,
    quat_from_yaw,
    quat_multiply,
    rotation_vector_from_quat,
)

OBS_DIM = 20
ACTION_DIM = 4
HIDDEN_UNITS = 128
LEAKY_SLOPE = 0.01

# residual ranges: thrust in m/s^2, body rates in rad/s
ACTION_SCALES = np.array([10.0, 1.0, 1.0, 1.0])

# fixed per-entry normalization, in observation order: position error,
# velocity error, attitude error, body rate error, cascaded thrust,
# cascaded body rates, previous residual by its own range
OBS_SCALES = np.concatenate(
    [
        np.full(3, 1.0),
        np.full(3, 2.0),
        np.full(3, 1.0),
        np.full(3, 2.0),
        [20.0],
        np.full(3, 2.0),
        ACTION_SCALES,
    ]
)

LOG_STD_INIT = float(np.log(0.3))
LOG_STD_MIN = float(np.log(0.01))
LOG_STD_MAX = float(np.log(1.0))

CHECKPOINT_FORMAT = "proxfly-policy-v1"

PARAM_FIELDS = (
    "policy_w1",
    "policy_b1",
    "policy_w2",
    "policy_b2",
    "policy_w3",
    "policy_b3",
    "value_w1",
    "value_b1",
    "value_w2",
    "value_b2",
    "value_w3",
    "value_b3",
    "log_std",
)


@dataclass
class ResidualAction:
    """Correction added to the cascaded command, already in physical units."""

    thrust: float = 0.0
    body_rates: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def as_array(self) -> np.ndarray:
        return np.concatenate(([self.thrust], self.body_rates))


ZERO_RESIDUAL = ResidualAction()


@dataclass
class PolicyParams:
    policy_w1: np.ndarray
    policy_b1: np.ndarray
    policy_w2: np.ndarray
    policy_b2: np.ndarray
    policy_w3: np.ndarray
    policy_b3: np.ndarray
    value_w1: np.ndarray
    value_b1: np.ndarray
    value_w2: np.ndarray
    value_b2: np.ndarray
    value_w3: np.ndarray
    value_b3: np.ndarray
    log_std: np.ndarray

    def copy(self) -> "PolicyParams":
        return PolicyParams(**{name: getattr(self, name).copy() for name in PARAM_FIELDS})


def _param_shapes() -> dict:
    h = HIDDEN_UNITS
    return {
        "policy_w1": (OBS_DIM, h),
        "policy_b1": (h,),
        "policy_w2": (h, h),
        "policy_b2": (h,),
        "policy_w3": (h, ACTION_DIM),
        "policy_b3": (ACTION_DIM,),
        "value_w1": (OBS_DIM, h),
        "value_b1": (h,),
        "value_w2": (h, h),
        "value_b2": (h,),
        "value_w3": (h, 1),
        "value_b3": (1,),
        "log_std": (ACTION_DIM,),
    }


def _orthogonal(rng, rows: int, cols: int, gain: float) -> np.ndarray:
    a = rng.standard_normal((max(rows, cols), min(rows, cols)))
    q, r = np.linalg.qr(a)
    q = q * np.sign(np.diagonal(r))
    if rows < cols:
        q = q.T
    return np.ascontiguousarray(gain * q[:rows, :cols])


def init_params(rng) -> PolicyParams:
    """Orthogonal init; the policy output layer starts near zero so the
    residual barely perturbs the basic controller at first."""
    h = HIDDEN_UNITS
    g = np.sqrt(2.0)
    return PolicyParams(
        policy_w1=_orthogonal(rng, OBS_DIM, h, g),
        policy_b1=np.zeros(h),
        policy_w2=_orthogonal(rng, h, h, g),
        policy_b2=np.zeros(h),
        policy_w3=_orthogonal(rng, h, ACTION_DIM, 0.01),
        policy_b3=np.zeros(ACTION_DIM),
        value_w1=_orthogonal(rng, OBS_DIM, h, g),
        value_b1=np.zeros(h),
        value_w2=_orthogonal(rng, h, h, g),
        value_b2=np.zeros(h),
        value_w3=_orthogonal(rng, h, 1, 1.0),
        value_b3=np.zeros(1),
        log_std=np.full(ACTION_DIM, LOG_STD_INIT),
    )


def zero_params() -> PolicyParams:
    return PolicyParams(**{name: np.zeros(shape) for name, shape in _param_shapes().items()})


# ---------------------------------------------------------------- observations


def observation_arrays(
    position,
    velocity,
    quaternion,
    body_rates,
    des_position,
    des_velocity,
    des_yaw,
    cas_thrust,
    cas_rates,
    prev_residual,
):
    """Normalized 20-entry observation; broadcasts over leading axes.

    State error is desired minus estimated, attitude error is the rotation
    vector from the estimated attitude to the yaw-only desired attitude,
    desired body rates are zero.
    """
    q_err = quat_multiply(quat_conjugate(quaternion), quat_from_yaw(des_yaw))
    att_err = rotation_vector_from_quat(q_err)
    raw = np.concatenate(
        [
            des_position - position,
            des_velocity - velocity,
            att_err,
            -np.asarray(body_rates, dtype=float),
            np.asarray(cas_thrust, dtype=float)[..., None],
            np.asarray(cas_rates, dtype=float),
            np.asarray(prev_residual, dtype=float),
        ],
        axis=-1,
    )
    return raw / OBS_SCALES


def build_observation(est, des, u_cas: HighLevelCommand, prev: ResidualAction) -> np.ndarray:
    return observation_arrays(
        np.asarray(est.position, dtype=float),
        np.asarray(est.velocity, dtype=float),
        np.asarray(est.quaternion, dtype=float),
        np.asarray(est.body_rates, dtype=float),
        np.asarray(des.position, dtype=float),
        np.asarray(des.velocity, dtype=float),
        float(des.yaw),
        float(u_cas.thrust),
        np.asarray(u_cas.body_rates, dtype=float),
        prev.as_array(),
    )


# --------------------------------------------------------------------- network


def _leaky(z):
    return np.where(z > 0.0, z, LEAKY_SLOPE * z)


def _mlp_forward(x, w1, b1, w2, b2, w3, b3, tanh_out: bool):
    z1 = x @ w1 + b1
    h1 = _leaky(z1)
    z2 = h1 @ w2 + b2
    h2 = _leaky(z2)
    z3 = h2 @ w3 + b3
    out = np.tanh(z3) if tanh_out else z3
    return out, (x, z1, z2, h1, h2, out)


def _mlp_backward(dz3, cache, w2, w3):
    x, z1, z2, h1, h2, _ = cache
    dw3 = h2.T @ dz3
    db3 = dz3.sum(axis=0)
    dz2 = (dz3 @ w3.T) * np.where(z2 > 0.0, 1.0, LEAKY_SLOPE)
    dw2 = h1.T @ dz2
    db2 = dz2.sum(axis=0)
    dz1 = (dz2 @ w2.T) * np.where(z1 > 0.0, 1.0, LEAKY_SLOPE)
    dw1 = x.T @ dz1
    db1 = dz1.sum(axis=0)
    return dw1, db1, dw2, db2, dw3, db3


def policy_mean_cached(obs, params: PolicyParams):
    return _mlp_forward(
        obs,
        params.policy_w1,
        params.policy_b1,
        params.policy_w2,
        params.policy_b2,
        params.policy_w3,
        params.policy_b3,
        tanh_out=True,
    )


def value_cached(obs, params: PolicyParams):
    out, cache = _mlp_forward(
        obs,
        params.value_w1,
        params.value_b1,
        params.value_w2,
        params.value_b2,
        params.value_w3,
        params.value_b3,
        tanh_out=False,
    )
    return out[..., 0], cache


def policy_forward(obs, params: PolicyParams):
    """Deterministic forward pass: (action mean in (-1, 1), value estimate)."""
    mean, _ = policy_mean_cached(obs, params)
    value, _ = value_cached(obs, params)
    return mean, value


def policy_backward(dmean, cache, params: PolicyParams) -> dict:
    """Gradients of a scalar loss given d(loss)/d(mean); batched rows only."""
    out = cache[5]
    dz3 = dmean * (1.0 - out * out)
    grads = _mlp_backward(dz3, cache, params.policy_w2, params.policy_w3)
    names = ("policy_w1", "policy_b1", "policy_w2", "policy_b2", "policy_w3", "policy_b3")
    return dict(zip(names, grads))


def value_backward(dvalue, cache, params: PolicyParams) -> dict:
    grads = _mlp_backward(dvalue[:, None], cache, params.value_w2, params.value_w3)
    names = ("value_w1", "value_b1", "value_w2", "value_b2", "value_w3", "value_b3")
    return dict(zip(names, grads))


# ------------------------------------------------------------- action handling


def clipped_log_std(params: PolicyParams) -> np.ndarray:
    return np.clip(params.log_std, LOG_STD_MIN, LOG_STD_MAX)


def sample_raw_action(mean, log_std, rng) -> np.ndarray:
    raw = mean + np.exp(log_std) * rng.standard_normal(np.shape(mean))
    return np.clip(raw, -1.0, 1.0)


def gaussian_log_prob(raw, mean, log_std):
    z = (raw - mean) / np.exp(log_std)
    return -0.5 * np.sum(z * z, axis=-1) - np.sum(log_std) - 0.5 * ACTION_DIM * np.log(2.0 * np.pi)


def distribution_entropy(log_std) -> float:
    return float(np.sum(log_std) + 0.5 * ACTION_DIM * (1.0 + np.log(2.0 * np.pi)))


def scale_action(raw) -> ResidualAction:
    scaled = np.asarray(raw, dtype=float) * ACTION_SCALES
    return ResidualAction(thrust=float(scaled[0]), body_rates=scaled[1:4].copy())


def superpose(u_cas: HighLevelCommand, a_res: ResidualAction) -> HighLevelCommand:
    # collective thrust cannot go negative: props only push
    thrust = max(u_cas.thrust + a_res.thrust, 0.0)
    return HighLevelCommand(thrust=thrust, body_rates=u_cas.body_rates + a_res.body_rates)


def superpose_arrays(cas_thrust, cas_rates, residual):
    thrust = np.maximum(cas_thrust + residual[..., 0], 0.0)
    return thrust, cas_rates + residual[..., 1:4]


# ----------------------------------------------------------------- checkpoints


def save_checkpoint(path, params: PolicyParams, extra: dict | None = None) -> None:
    """Single-file .npz dump: tensors plus a JSON header describing layout."""
    header = {
        "format": CHECKPOINT_FORMAT,
        "obs_dim": OBS_DIM,
        "action_dim": ACTION_DIM,
        "hidden_units": HIDDEN_UNITS,
        "obs_scales": OBS_SCALES.tolist(),
        "action_scales": ACTION_SCALES.tolist(),
    }
    if extra:
        header.update(extra)
    blob = np.frombuffer(json.dumps(header, sort_keys=True).encode("utf-8"), dtype=np.uint8)
    arrays = {name: getattr(params, name) for name in PARAM_FIELDS}
    np.savez(path, header=blob, **arrays)


def load_checkpoint(path):
    """Returns (params, header); raises ValueError on a malformed file."""
    with np.load(path) as data:
        if "header" not in data:
            raise ValueError(f"{path}: not a policy checkpoint (missing header)")
        header = json.loads(bytes(data["header"].tobytes()).decode("utf-8"))
        if header.get("format") != CHECKPOINT_FORMAT:
            raise ValueError(f"{path}: unsupported checkpoint format {header.get('format')!r}")
        shapes = _param_shapes()
        fields = {}
        for name in PARAM_FIELDS:
            if name not in data:
                raise ValueError(f"{path}: checkpoint is missing tensor {name!r}")
            arr = np.asarray(data[name], dtype=float)
            if arr.shape != shapes[name]:
                raise ValueError(
                    f"{path}: tensor {name} has shape {arr.shape}, expected {shapes[name]}"
                )
            fields[name] = arr
    return PolicyParams(**fields), header
