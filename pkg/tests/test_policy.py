import numpy as np
import pytest
from scipy import stats

from proxfly import policy, sim
from proxfly.controller import DesiredState, HighLevelCommand


def hover_inputs():
    est = sim.rest_state([0.0, 0.0, 1.2])
    des = DesiredState(position=[0.0, 0.0, 1.2])
    cmd = HighLevelCommand(thrust=9.81, body_rates=np.zeros(3))
    return est, des, cmd


def test_observation_at_setpoint_has_only_thrust_entry():
    est, des, cmd = hover_inputs()
    obs = policy.build_observation(est, des, cmd, policy.ZERO_RESIDUAL)
    assert obs.shape == (20,)
    expect = np.zeros(20)
    expect[12] = 9.81 / 20.0
    np.testing.assert_allclose(obs, expect, atol=1e-15)


def test_observation_normalization_hand_case():
    est, des, cmd = hover_inputs()
    est.position = np.array([-0.5, 0.0, 1.2])
    est.velocity = np.array([0.0, 1.0, 0.0])
    est.body_rates = np.array([0.4, 0.0, 0.0])
    des = DesiredState(position=[0.0, 0.0, 1.2], yaw=np.pi / 2)
    cmd = HighLevelCommand(thrust=9.81, body_rates=[1.0, 0.0, 0.0])
    prev = policy.ResidualAction(thrust=5.0, body_rates=np.array([0.0, 0.0, -1.0]))
    obs = policy.build_observation(est, des, cmd, prev)
    assert obs[0] == pytest.approx(0.5)        # 0.5 m error over 1 m scale
    assert obs[4] == pytest.approx(-0.5)       # -1 m/s over 2 m/s
    assert obs[8] == pytest.approx(np.pi / 2)  # pi/2 yaw error over 1 rad
    assert obs[9] == pytest.approx(-0.2)       # rate error is minus the rate
    assert obs[13] == pytest.approx(0.5)
    assert obs[16] == pytest.approx(0.5)       # 5 m/s^2 over the 10 m/s^2 range
    assert obs[19] == pytest.approx(-1.0)


def test_observation_batch_matches_single():
    rng = np.random.default_rng(3)
    n = 6
    quat = rng.normal(size=(n, 4))
    quat /= np.linalg.norm(quat, axis=-1, keepdims=True)
    args = dict(
        position=rng.normal(size=(n, 3)),
        velocity=rng.normal(size=(n, 3)),
        quaternion=quat,
        body_rates=rng.normal(size=(n, 3)),
        des_position=rng.normal(size=(n, 3)),
        des_velocity=rng.normal(size=(n, 3)),
        des_yaw=rng.uniform(-3.0, 3.0, n),
        cas_thrust=rng.uniform(0.0, 15.0, n),
        cas_rates=rng.normal(size=(n, 3)),
        prev_residual=rng.uniform(-1.0, 1.0, (n, 4)) * policy.ACTION_SCALES,
    )
    batch = policy.observation_arrays(**args)
    assert batch.shape == (n, 20)
    for i in range(n):
        single = policy.observation_arrays(**{k: v[i] for k, v in args.items()})
        np.testing.assert_array_equal(batch[i], single)


def test_zero_params_give_zero_outputs():
    params = policy.zero_params()
    obs = np.linspace(-1.0, 1.0, 20)
    mean, value = policy.policy_forward(obs, params)
    np.testing.assert_array_equal(mean, np.zeros(4))
    assert value == 0.0


def test_mean_respects_tanh_bounds():
    rng = np.random.default_rng(4)
    params = policy.init_params(rng)
    for name in policy.PARAM_FIELDS[:6]:
        setattr(params, name, getattr(params, name) * 3.0)
    obs = rng.normal(size=(32, 20)) * 5.0
    mean, _ = policy.policy_forward(obs, params)
    assert np.all(np.abs(mean) < 1.0)
    assert np.max(np.abs(mean)) > 0.5  # the scaling did push the head hard


def test_fresh_policy_outputs_near_zero_residual():
    rng = np.random.default_rng(5)
    params = policy.init_params(rng)
    obs = rng.normal(size=(64, 20))
    mean, _ = policy.policy_forward(obs, params)
    assert np.max(np.abs(mean)) < 0.05
    np.testing.assert_allclose(params.log_std, np.log(0.3))


def test_init_is_orthogonal_and_seeded():
    params = policy.init_params(np.random.default_rng(9))
    again = policy.init_params(np.random.default_rng(9))
    for name in policy.PARAM_FIELDS:
        np.testing.assert_array_equal(getattr(params, name), getattr(again, name))
    np.testing.assert_allclose(
        params.policy_w1 @ params.policy_w1.T, 2.0 * np.eye(20), atol=1e-12
    )
    np.testing.assert_allclose(
        params.value_w3.T @ params.value_w3, np.eye(1), atol=1e-12
    )


def test_forward_is_deterministic():
    params = policy.init_params(np.random.default_rng(6))
    obs = np.random.default_rng(7).normal(size=(5, 20))
    m1, v1 = policy.policy_forward(obs, params)
    m2, v2 = policy.policy_forward(obs, params)
    np.testing.assert_array_equal(m1, m2)
    np.testing.assert_array_equal(v1, v2)


def _relative_error(a, b):
    return np.abs(a - b) / np.maximum(np.abs(a) + np.abs(b), 1e-8)


def test_network_gradients_match_finite_differences():
    # scalar loss: weighted sums of policy mean and value over a small batch
    rng = np.random.default_rng(10)
    params = policy.init_params(rng)
    obs = rng.normal(size=(5, 20))
    c_mean = rng.normal(size=(5, 4))
    c_value = rng.normal(size=5)

    def loss_fn(p):
        mean, cache_p = policy.policy_mean_cached(obs, p)
        value, cache_v = policy.value_cached(obs, p)
        return float(np.sum(mean * c_mean) + np.sum(value * c_value)), cache_p, cache_v

    loss, cache_p, cache_v = loss_fn(params)
    grads = policy.policy_backward(c_mean, cache_p, params)
    grads.update(policy.value_backward(c_value, cache_v, params))

    eps = 1e-5
    for name in policy.PARAM_FIELDS:
        if name == "log_std":
            continue  # no distribution term in this loss
        base = getattr(params, name)
        analytic = grads[name]
        numeric = np.empty(base.shape)
        for idx in np.ndindex(base.shape):
            keep = base[idx]
            base[idx] = keep + eps
            up = loss_fn(params)[0]
            base[idx] = keep - eps
            down = loss_fn(params)[0]
            base[idx] = keep
            numeric[idx] = (up - down) / (2.0 * eps)
        bad = _relative_error(analytic, numeric) > 1e-4
        bad &= np.abs(analytic - numeric) > 1e-8
        assert not bad.any(), f"{name}: worst {np.abs(analytic - numeric).max():.3e}"


def test_log_prob_matches_scipy():
    rng = np.random.default_rng(11)
    mean = rng.normal(size=(8, 4)) * 0.5
    log_std = rng.uniform(np.log(0.05), 0.0, size=4)
    raw = rng.uniform(-1.0, 1.0, size=(8, 4))
    ours = policy.gaussian_log_prob(raw, mean, log_std)
    ref = stats.norm.logpdf(raw, loc=mean, scale=np.exp(log_std)).sum(axis=-1)
    np.testing.assert_allclose(ours, ref, rtol=1e-12)


def test_entropy_matches_scipy():
    log_std = np.array([np.log(0.3), np.log(0.1), np.log(0.5), 0.0])
    ref = sum(stats.norm(0.0, s).entropy() for s in np.exp(log_std))
    assert policy.distribution_entropy(log_std) == pytest.approx(ref, rel=1e-12)


def test_sampling_clamps_and_tracks_mean():
    rng = np.random.default_rng(12)
    mean = np.array([0.95, -0.95, 0.0, 0.5])
    raw = policy.sample_raw_action(mean, np.full(4, np.log(1.0)), rng)
    assert np.all(raw >= -1.0) and np.all(raw <= 1.0)
    almost = policy.sample_raw_action(mean, np.full(4, np.log(1e-8)), rng)
    np.testing.assert_allclose(almost, mean, atol=1e-6)


def test_log_std_clipping():
    params = policy.zero_params()
    params.log_std = np.array([-10.0, 0.0, 5.0, np.log(0.3)])
    clipped = policy.clipped_log_std(params)
    np.testing.assert_allclose(
        clipped, [np.log(0.01), 0.0, 0.0, np.log(0.3)], atol=1e-15
    )


def test_scale_action_ranges():
    a = policy.scale_action(np.array([1.0, 0.0, 0.0, 0.0]))
    assert a.thrust == 10.0
    np.testing.assert_array_equal(a.body_rates, np.zeros(3))
    b = policy.scale_action(-np.ones(4))
    assert b.thrust == -10.0
    np.testing.assert_array_equal(b.body_rates, -np.ones(3))
    assert policy.scale_action(np.zeros(4)).thrust == 0.0


def test_superpose_adds_componentwise():
    cas = HighLevelCommand(thrust=9.81, body_rates=np.zeros(3))
    res = policy.ResidualAction(thrust=2.0, body_rates=np.array([0.1, -0.1, 0.0]))
    out = policy.superpose(cas, res)
    assert out.thrust == pytest.approx(11.81)
    np.testing.assert_allclose(out.body_rates, [0.1, -0.1, 0.0])
    same = policy.superpose(cas, policy.ZERO_RESIDUAL)
    assert same.thrust == cas.thrust
    np.testing.assert_array_equal(same.body_rates, cas.body_rates)


def test_superpose_floors_thrust_at_zero():
    cas = HighLevelCommand(thrust=1.0, body_rates=np.zeros(3))
    res = policy.ResidualAction(thrust=-10.0, body_rates=np.zeros(3))
    assert policy.superpose(cas, res).thrust == 0.0


def test_overall_command_moves_exactly_with_residual():
    # away from the thrust floor the superposition is a plain sum, so a
    # parameter change shifts the overall command by the residual change alone
    rng = np.random.default_rng(13)
    p1 = policy.init_params(rng)
    p2 = p1.copy()
    p2.policy_b3 = p2.policy_b3 + 0.3
    est, des, cas = hover_inputs()
    obs = policy.build_observation(est, des, cas, policy.ZERO_RESIDUAL)
    out1 = policy.superpose(cas, policy.scale_action(policy.policy_forward(obs, p1)[0]))
    out2 = policy.superpose(cas, policy.scale_action(policy.policy_forward(obs, p2)[0]))
    r1 = policy.scale_action(policy.policy_forward(obs, p1)[0]).as_array()
    r2 = policy.scale_action(policy.policy_forward(obs, p2)[0]).as_array()
    np.testing.assert_allclose(
        out2.as_array() - out1.as_array(), r2 - r1, atol=1e-12
    )


def test_checkpoint_round_trip(tmp_path):
    params = policy.init_params(np.random.default_rng(14))
    path = tmp_path / "policy.npz"
    policy.save_checkpoint(path, params, extra={"vehicle": "large_quad", "epoch": 17})
    loaded, header = policy.load_checkpoint(path)
    for name in policy.PARAM_FIELDS:
        np.testing.assert_array_equal(getattr(loaded, name), getattr(params, name))
    assert header["format"] == "proxfly-policy-v1"
    assert header["vehicle"] == "large_quad"
    assert header["epoch"] == 17
    assert header["hidden_units"] == 128
    assert header["action_scales"] == [10.0, 1.0, 1.0, 1.0]


def test_checkpoint_rejects_wrong_shapes(tmp_path):
    params = policy.init_params(np.random.default_rng(15))
    params.policy_w2 = np.zeros((64, 64))
    path = tmp_path / "bad.npz"
    policy.save_checkpoint(path, params)
    with pytest.raises(ValueError, match="policy_w2"):
        policy.load_checkpoint(path)


def test_checkpoint_rejects_foreign_file(tmp_path):
    path = tmp_path / "foreign.npz"
    np.savez(path, stuff=np.arange(3))
    with pytest.raises(ValueError, match="header"):
        policy.load_checkpoint(path)
