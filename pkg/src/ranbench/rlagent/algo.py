"""Advantage estimation, loss gradients and parameter updates for the
actor-critic agent (clipped-surrogate and vanilla policy-gradient variants)."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .policy import PolicyArch, backward, forward_cached, log_softmax

ADV_NORM_EPS = 1e-8


@dataclass
class HyperParams:
    algo: str = "ppo"  # "ppo" | "a2c"
    ent_coeff: float = 1e-3
    gae_lambda: float = 0.95
    gamma: float = 0.98
    learning_rate: float = 3e-5
    max_grad_norm: float = 1.0
    n_steps: int = 256
    vf_coeff: float = 0.25
    n_envs: int = 16
    # a2c only
    normalization_advantage: bool = False
    use_rms_prop: bool = True
    # ppo only
    clip_range: float = 0.2
    batch_size: int = 128
    n_epochs: int = 20

    def __post_init__(self):
        if self.algo not in ("ppo", "a2c"):
            raise ValueError(f"unknown algo {self.algo!r}")
        if not 0.0 < self.gamma <= 1.0:
            raise ValueError("gamma must lie in (0, 1]")
        if not 0.0 <= self.gae_lambda <= 1.0:
            raise ValueError("gae_lambda must lie in [0, 1]")
        if self.clip_range <= 0.0:
            raise ValueError("clip_range must be positive")
        if min(self.n_steps, self.n_envs, self.batch_size, self.n_epochs) < 1:
            raise ValueError("n_steps, n_envs, batch_size, n_epochs must be >= 1")


def gae(rewards, values, dones, bootstrap_value, gamma: float, lam: float):
    """Generalized advantage estimation over (T,) or (T, n_envs) arrays.

    Episode ends (dones) cut the bootstrapping chain; the value of the state
    after the final step enters through `bootstrap_value`. Returns
    (advantages, returns) with returns = advantages + values.
    """
    rewards = np.asarray(rewards, dtype=float)
    values = np.asarray(values, dtype=float)
    nonterminal = 1.0 - np.asarray(dones, dtype=float)
    if not rewards.shape == values.shape == nonterminal.shape:
        raise ValueError("rewards, values and dones must share a shape")
    advantages = np.zeros_like(rewards)
    next_value = np.broadcast_to(np.asarray(bootstrap_value, dtype=float),
                                 rewards.shape[1:]).astype(float) \
        if rewards.ndim > 1 else float(bootstrap_value)
    next_adv = np.zeros(rewards.shape[1:]) if rewards.ndim > 1 else 0.0
    for t in range(len(rewards) - 1, -1, -1):
        delta = rewards[t] + gamma * next_value * nonterminal[t] - values[t]
        next_adv = delta + gamma * lam * nonterminal[t] * next_adv
        advantages[t] = next_adv
        next_value = values[t]
    return advantages, advantages + values


class RolloutBuffer:
    """Fixed-capacity on-policy storage: (n_steps, n_envs) per field.
    Advantages are recomputed from the stored values/rewards at update time."""

    def __init__(self, n_steps: int, n_envs: int, obs_shape: tuple):
        self.n_steps = n_steps
        self.n_envs = n_envs
        self.obs = np.zeros((n_steps, n_envs) + tuple(obs_shape))
        self.actions = np.zeros((n_steps, n_envs), dtype=int)
        self.log_probs = np.zeros((n_steps, n_envs))
        self.values = np.zeros((n_steps, n_envs))
        self.rewards = np.zeros((n_steps, n_envs))
        self.dones = np.zeros((n_steps, n_envs))
        self.bootstrap = np.zeros(n_envs)
        self.pos = 0

    @property
    def full(self) -> bool:
        return self.pos == self.n_steps

    def add(self, obs, actions, log_probs, values, rewards, dones) -> None:
        if self.full:
            raise RuntimeError("rollout buffer is full")
        t = self.pos
        self.obs[t] = obs
        self.actions[t] = actions
        self.log_probs[t] = log_probs
        self.values[t] = values
        self.rewards[t] = rewards
        self.dones[t] = dones
        self.pos += 1

    def set_bootstrap(self, values) -> None:
        self.bootstrap = np.asarray(values, dtype=float)

    def reset(self) -> None:
        self.pos = 0

    def flat(self, gamma: float, lam: float) -> dict[str, np.ndarray]:
        if not self.full:
            raise RuntimeError("rollout buffer is not full")
        adv, ret = gae(self.rewards, self.values, self.dones, self.bootstrap,
                       gamma, lam)
        n = self.n_steps * self.n_envs
        return {
            "obs": self.obs.reshape((n,) + self.obs.shape[2:]),
            "actions": self.actions.reshape(n),
            "old_log_probs": self.log_probs.reshape(n),
            "advantages": adv.reshape(n),
            "returns": ret.reshape(n),
        }


def _normalize(adv: np.ndarray) -> np.ndarray:
    return (adv - adv.mean()) / (adv.std() + ADV_NORM_EPS)


def _loss_and_grads(params, arch: PolicyArch, batch, hp: HyperParams,
                    clipped_surrogate: bool):
    """Total loss (policy term + vf_coeff * value MSE - ent_coeff * entropy)
    and its parameter gradients on one minibatch."""
    obs = batch["obs"]
    actions = batch["actions"]
    adv = batch["advantages"]
    n = len(actions)

    if clipped_surrogate:
        adv = _normalize(adv)
    elif hp.normalization_advantage:
        adv = _normalize(adv)

    logits, values, caches = forward_cached(params, arch, obs)
    logp_all = log_softmax(logits)
    probs = np.exp(logp_all)
    rows = np.arange(n)
    logp = logp_all[rows, actions]

    onehot_minus_p = -probs
    onehot_minus_p[rows, actions] += 1.0

    if clipped_surrogate:
        ratio = np.exp(logp - batch["old_log_probs"])
        unclipped = ratio * adv
        clipped = np.clip(ratio, 1.0 - hp.clip_range, 1.0 + hp.clip_range) * adv
        pg_loss = -np.minimum(unclipped, clipped).mean()
        take_unclipped = unclipped <= clipped
        inside = (ratio > 1.0 - hp.clip_range) & (ratio < 1.0 + hp.clip_range)
        dpg_dratio = np.where(take_unclipped, -adv,
                              np.where(inside, -adv, 0.0)) / n
        dlogp = dpg_dratio * ratio
        clip_fraction = float(np.mean(~take_unclipped & ~inside))
    else:
        pg_loss = -(logp * adv).mean()
        dlogp = -adv / n
        clip_fraction = 0.0

    entropy_per = -(probs * logp_all).sum(axis=1)
    entropy = entropy_per.mean()
    v_err = values - batch["returns"]
    v_loss = float((v_err ** 2).mean())
    loss = float(pg_loss + hp.vf_coeff * v_loss - hp.ent_coeff * entropy)

    dlogits = dlogp[:, None] * onehot_minus_p
    # d(-ent_coeff * mean entropy)/dlogits
    dlogits += hp.ent_coeff * probs * (logp_all + entropy_per[:, None]) / n
    dvalues = 2.0 * hp.vf_coeff * v_err / n

    grads = backward(params, arch, caches, dlogits, dvalues)
    stats = {"loss": loss, "policy_loss": float(pg_loss), "value_loss": v_loss,
             "entropy": float(entropy), "clip_fraction": clip_fraction}
    return loss, stats, grads


def ppo_loss_and_grads(params, arch, batch, hp):
    return _loss_and_grads(params, arch, batch, hp, clipped_surrogate=True)


def a2c_loss_and_grads(params, arch, batch, hp):
    return _loss_and_grads(params, arch, batch, hp, clipped_surrogate=False)


def clip_grad_norm(grads: dict, max_norm: float) -> tuple[dict, float]:
    total = math.sqrt(sum(float((g * g).sum()) for g in grads.values()))
    if max_norm > 0 and total > max_norm:
        scale = max_norm / total
        grads = {k: g * scale for k, g in grads.items()}
    return grads, total


class Adam:
    def __init__(self, lr: float, beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-5):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}
        self.t = 0

    def step(self, params: dict, grads: dict) -> dict:
        self.t += 1
        out = {}
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for k, p in params.items():
            g = grads[k]
            m = self.m.get(k)
            if m is None:
                m = self.m[k] = np.zeros_like(p)
                self.v[k] = np.zeros_like(p)
            v = self.v[k]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            denom = np.sqrt(v / bc2)
            denom += self.eps
            update = m / denom
            update *= self.lr / bc1
            out[k] = p - update
        return out


class RMSProp:
    def __init__(self, lr: float, alpha: float = 0.99, eps: float = 1e-5):
        self.lr, self.alpha, self.eps = lr, alpha, eps
        self.sq: dict[str, np.ndarray] = {}

    def step(self, params: dict, grads: dict) -> dict:
        out = {}
        for k, p in params.items():
            g = grads[k]
            sq = self.sq.get(k)
            if sq is None:
                sq = self.sq[k] = np.zeros_like(p)
            sq *= self.alpha
            sq += (1.0 - self.alpha) * (g * g)
            denom = np.sqrt(sq)
            denom += self.eps
            out[k] = p - self.lr * g / denom
        return out


def make_optimizer(hp: HyperParams):
    if hp.algo == "a2c" and hp.use_rms_prop:
        return RMSProp(hp.learning_rate)
    return Adam(hp.learning_rate)


def _check_finite(loss: float) -> None:
    if not math.isfinite(loss):
        raise FloatingPointError(f"non-finite loss: {loss}")


def ppo_update(params, buffer: RolloutBuffer, hp: HyperParams,
               arch: PolicyArch, opt, rng: np.random.Generator):
    """n_epochs of shuffled minibatches with the clipped surrogate; the final
    partial minibatch of each epoch is dropped."""
    data = buffer.flat(hp.gamma, hp.gae_lambda)
    n = len(data["actions"])
    agg: dict[str, float] = {}
    count = 0
    for _ in range(hp.n_epochs):
        perm = rng.permutation(n)
        for start in range(0, n - hp.batch_size + 1, hp.batch_size):
            idx = perm[start:start + hp.batch_size]
            mb = {k: v[idx] for k, v in data.items()}
            loss, stats, grads = ppo_loss_and_grads(params, arch, mb, hp)
            _check_finite(loss)
            grads, norm = clip_grad_norm(grads, hp.max_grad_norm)
            params = opt.step(params, grads)
            stats["grad_norm"] = norm
            for k, v in stats.items():
                agg[k] = agg.get(k, 0.0) + v
            count += 1
    return params, {k: v / max(count, 1) for k, v in agg.items()}


def a2c_update(params, buffer: RolloutBuffer, hp: HyperParams,
               arch: PolicyArch, opt):
    """Single full-batch policy-gradient step."""
    data = buffer.flat(hp.gamma, hp.gae_lambda)
    loss, stats, grads = a2c_loss_and_grads(params, arch, data, hp)
    _check_finite(loss)
    grads, norm = clip_grad_norm(grads, hp.max_grad_norm)
    params = opt.step(params, grads)
    stats["grad_norm"] = norm
    return params, stats
