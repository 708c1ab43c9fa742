"""PPO training on top of the batched rollout engine.

Manual gradients throughout: the loss pieces are simple enough (clipped
surrogate, value MSE, Gaussian entropy) that backprop by hand through the
two small MLPs is less machinery than adopting an autograd dependency.
"""

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import policy as policy_mod
from .rollout import nominal_episode_setup, rollout_batch, sample_episode_setup
from .sim import large_quad, small_quad

VEHICLE_PRESETS = {"small_quad": small_quad, "large_quad": large_quad}

LEARNING_CURVE_COLUMNS = (
    "epoch",
    "mean_return",
    "mean_episode_length",
    "policy_loss",
    "value_loss",
    "entropy",
)


@dataclass
class TrainConfig:
    epochs: int = 500
    episodes_per_epoch: int = 10
    gamma: float = 0.99
    gae_lambda: float = 0.95
    clip_ratio: float = 0.2
    learning_rate: float = 3e-4
    update_passes: int = 4
    minibatch_size: int = 250
    entropy_coef: float = 1e-3
    value_coef: float = 0.5
    max_grad_norm: float = 0.5
    seed: int = 0
    vehicle: str = "large_quad"
    checkpoint_every: int = 100


def gae_advantages(rewards, values, bootstrap_value, gamma, lam):
    """Generalized advantage estimation over one episode.

    bootstrap_value is the value past the last step (zero for a crash).
    Returns (advantages, returns) with returns = advantages + values.
    """
    rewards = np.asarray(rewards, dtype=float)
    values = np.asarray(values, dtype=float)
    steps = len(rewards)
    advantages = np.zeros(steps)
    carry = 0.0
    next_value = bootstrap_value
    for t in reversed(range(steps)):
        delta = rewards[t] + gamma * next_value - values[t]
        carry = delta + gamma * lam * carry
        advantages[t] = carry
        next_value = values[t]
    return advantages, advantages + values


def normalize_advantages(advantages):
    mean = advantages.mean()
    std = advantages.std()
    return (advantages - mean) / (std + 1e-8)


class Adam:
    """Adam with bias correction; updates parameter tensors in place."""

    def __init__(self, learning_rate, beta1=0.9, beta2=0.999, eps=1e-8):
        self.learning_rate = learning_rate
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self._m = {}
        self._v = {}
        self._t = 0

    def step(self, params, grads):
        self._t += 1
        bias1 = 1.0 - self.beta1**self._t
        bias2 = 1.0 - self.beta2**self._t
        for name, g in grads.items():
            m = self._m.setdefault(name, np.zeros_like(g))
            v = self._v.setdefault(name, np.zeros_like(g))
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            target = getattr(params, name)
            target -= self.learning_rate * (m / bias1) / (np.sqrt(v / bias2) + self.eps)


def clip_gradient_norm(grads, max_norm):
    """Global-norm clip across every tensor, in place. Returns the norm."""
    total = np.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
    if total > max_norm:
        scale = max_norm / total
        for g in grads.values():
            g *= scale
    return total


def ppo_loss_and_grads(params, obs, raw_actions, old_log_probs, advantages, returns, config):
    """Clipped-surrogate + value + entropy loss with analytic gradients.

    Returns (loss, grads keyed like PARAM_FIELDS, stats). The gradient of
    the min(surrogate, clipped surrogate) flows through the unclipped branch
    exactly when that branch attains the minimum.
    """
    batch = obs.shape[0]
    mean, cache_p = policy_mod.policy_mean_cached(obs, params)
    value, cache_v = policy_mod.value_cached(obs, params)
    log_std = policy_mod.clipped_log_std(params)
    std = np.exp(log_std)

    z = (raw_actions - mean) / std
    log_probs = (
        -0.5 * np.sum(z * z, axis=-1)
        - np.sum(log_std)
        - 0.5 * policy_mod.ACTION_DIM * np.log(2.0 * np.pi)
    )
    ratio = np.exp(log_probs - old_log_probs)
    clipped = np.clip(ratio, 1.0 - config.clip_ratio, 1.0 + config.clip_ratio)
    surrogate = ratio * advantages
    surrogate_clipped = clipped * advantages
    unclipped_wins = surrogate <= surrogate_clipped
    policy_loss = -float(np.mean(np.minimum(surrogate, surrogate_clipped)))

    value_error = value - returns
    value_loss = float(np.mean(value_error**2))
    entropy = policy_mod.distribution_entropy(log_std)
    loss = policy_loss + config.value_coef * value_loss - config.entropy_coef * entropy

    d_log_prob = np.where(unclipped_wins, -advantages * ratio, 0.0) / batch
    d_mean = d_log_prob[:, None] * (z / std)
    d_log_std = (d_log_prob[:, None] * (z * z - 1.0)).sum(axis=0) - config.entropy_coef
    # the clamp on log_std is flat outside its bounds
    inside = (params.log_std > policy_mod.LOG_STD_MIN) & (
        params.log_std < policy_mod.LOG_STD_MAX
    )
    d_value = config.value_coef * 2.0 * value_error / batch

    grads = policy_mod.policy_backward(d_mean, cache_p, params)
    grads.update(policy_mod.value_backward(d_value, cache_v, params))
    grads["log_std"] = np.where(inside, d_log_std, 0.0)

    stats = {
        "policy_loss": policy_loss,
        "value_loss": value_loss,
        "entropy": entropy,
        "clip_fraction": float(np.mean(~unclipped_wins)),
        "approx_kl": float(np.mean(old_log_probs - log_probs)),
    }
    return loss, grads, stats


def _flatten_epoch(batch, gamma, lam):
    """Concatenate the valid prefix of every episode and run GAE per episode."""
    obs, actions, log_probs, advantages, returns = [], [], [], [], []
    for b in range(batch.rewards.shape[0]):
        steps = int(batch.lengths[b])
        if steps == 0:
            continue
        adv, ret = gae_advantages(
            batch.rewards[b, :steps],
            batch.values[b, :steps],
            float(batch.bootstrap_values[b]),
            gamma,
            lam,
        )
        obs.append(batch.observations[b, :steps])
        actions.append(batch.raw_actions[b, :steps])
        log_probs.append(batch.log_probs[b, :steps])
        advantages.append(adv)
        returns.append(ret)
    return (
        np.concatenate(obs),
        np.concatenate(actions),
        np.concatenate(log_probs),
        np.concatenate(advantages),
        np.concatenate(returns),
    )


def _episode_rngs(seed, epoch, count):
    return [
        np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(epoch, episode)))
        for episode in range(count)
    ]


# Checkpoint selection: every VALIDATION_EVERY epochs the current policy is
# scored, deterministically, on a fixed held-out suite of one nominal and
# VALIDATION_RANDOMIZED randomized episodes; the best-scoring parameters are
# what the run finally returns.  The two halves get equal weight so the
# selected policy must fly the nominal vehicle accurately, not only survive
# the randomization envelope.
VALIDATION_EVERY = 10
VALIDATION_RANDOMIZED = 6


def _validation_setups(config):
    rngs = _episode_rngs(config.seed, config.epochs, VALIDATION_RANDOMIZED)
    setups = [nominal_episode_setup()]
    setups.extend(sample_episode_setup(rng, config.vehicle) for rng in rngs)
    return setups


def _validation_score(params, vehicle, setups):
    batch = rollout_batch(params, vehicle, setups, deterministic=True)
    returns = batch.episode_returns()
    return 0.5 * float(returns[0]) + 0.5 * float(returns[1:].mean())


def train(config: TrainConfig, out_dir=None, progress=None):
    """Full training run. Returns (params, learning curve rows).

    With out_dir set, writes learning_curve.csv, periodic checkpoints and
    policy_final.npz there. progress, if given, is called with each epoch's
    curve row.
    """
    if config.vehicle not in VEHICLE_PRESETS:
        raise ValueError(f"unknown vehicle preset {config.vehicle!r}")
    vehicle = VEHICLE_PRESETS[config.vehicle]()
    params = policy_mod.init_params(np.random.default_rng(np.random.SeedSequence(config.seed)))
    optimizer = Adam(config.learning_rate)
    curve = []
    out_path = Path(out_dir) if out_dir is not None else None
    if out_path is not None:
        out_path.mkdir(parents=True, exist_ok=True)
    validation_setups = _validation_setups(config)
    best_params, best_score, best_epoch = None, -np.inf, -1

    for epoch in range(config.epochs):
        # Linear decay to zero stops the policy random-walking around the
        # optimum once exploration noise dominates the advantage signal.
        optimizer.learning_rate = config.learning_rate * (
            1.0 - epoch / max(config.epochs, 1)
        )
        rngs = _episode_rngs(config.seed, epoch, config.episodes_per_epoch)
        setups = [sample_episode_setup(rng, config.vehicle) for rng in rngs]
        batch = rollout_batch(params, vehicle, setups)
        obs, actions, old_log_probs, advantages, returns = _flatten_epoch(
            batch, config.gamma, config.gae_lambda
        )
        advantages = normalize_advantages(advantages)

        update_rng = np.random.default_rng(
            np.random.SeedSequence(config.seed, spawn_key=(epoch,))
        )
        count = len(advantages)
        stat_rows = []
        for _ in range(config.update_passes):
            order = update_rng.permutation(count)
            for start in range(0, count, config.minibatch_size):
                idx = order[start : start + config.minibatch_size]
                loss, grads, stats = ppo_loss_and_grads(
                    params,
                    obs[idx],
                    actions[idx],
                    old_log_probs[idx],
                    advantages[idx],
                    returns[idx],
                    config,
                )
                if not np.isfinite(loss):
                    raise FloatingPointError(
                        f"non-finite PPO loss at epoch {epoch}: {stats}"
                    )
                clip_gradient_norm(grads, config.max_grad_norm)
                optimizer.step(params, grads)
                stat_rows.append(stats)

        row = {
            "epoch": epoch,
            "mean_return": float(batch.episode_returns().mean()),
            "mean_episode_length": float(batch.lengths.mean()),
            "policy_loss": float(np.mean([s["policy_loss"] for s in stat_rows])),
            "value_loss": float(np.mean([s["value_loss"] for s in stat_rows])),
            "entropy": float(np.mean([s["entropy"] for s in stat_rows])),
        }
        curve.append(row)
        if progress is not None:
            progress(row)
        if (epoch + 1) % VALIDATION_EVERY == 0 or epoch == config.epochs - 1:
            score = _validation_score(params, vehicle, validation_setups)
            if score > best_score:
                best_params, best_score, best_epoch = params.copy(), score, epoch + 1
        if out_path is not None and (epoch + 1) % config.checkpoint_every == 0:
            policy_mod.save_checkpoint(
                out_path / f"policy_epoch{epoch + 1:04d}.npz",
                params,
                extra={"vehicle": config.vehicle, "epoch": epoch + 1, "seed": config.seed},
            )

    if best_params is None:
        best_params, best_epoch = params, config.epochs
    if out_path is not None:
        policy_mod.save_checkpoint(
            out_path / "policy_final.npz",
            best_params,
            extra={"vehicle": config.vehicle, "epoch": best_epoch, "seed": config.seed},
        )
        write_learning_curve(out_path / "learning_curve.csv", curve)
    return best_params, curve


def write_learning_curve(path, curve) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(LEARNING_CURVE_COLUMNS)
        for row in curve:
            writer.writerow(
                [row["epoch"]] + [f"{row[c]:.17g}" for c in LEARNING_CURVE_COLUMNS[1:]]
            )
