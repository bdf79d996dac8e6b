"""Rollout collection across parallel environments, the update loop, and
greedy evaluation with power-trajectory capture."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np

from ..envproto import EnvConfig, PowerTuningEnv
from ..ransim import DEFAULT_RADIO
from ..scoring import DEFAULT_SCORE
from ..study import StudyStore, TrialRecord
from .algo import (HyperParams, RolloutBuffer, a2c_update, make_optimizer,
                   ppo_update)
from .policy import (PolicyArch, forward, greedy_actions, init_params,
                     sample_actions, save_checkpoint)

logger = logging.getLogger(__name__)


@dataclass
class TrainResult:
    params: dict
    arch: PolicyArch
    hp: HyperParams
    curve: list[dict] = field(default_factory=list)
    episode_scores: list[tuple[int, float]] = field(default_factory=list)
    total_timesteps: int = 0


def train(make_env, hp: HyperParams, arch: PolicyArch, total_timesteps: int,
          seed: int = 0, checkpoint_path=None, checkpoint_every: int = 0,
          init_seed: int | None = None, callback=None) -> TrainResult:
    """On-policy training loop: collect n_envs x n_steps, update, repeat.

    `make_env(i)` builds the i-th environment. Episodes are reset with seeds
    drawn from per-environment streams, so the whole run is reproducible under
    (seed, n_envs). Episodes truncated by the time limit bootstrap the final
    reward with the value estimate; terminations do not. An optional
    `callback(update, timesteps, params)` runs after every update and stops
    training early when it returns True.
    """
    batch = hp.n_steps * hp.n_envs
    if total_timesteps < batch:
        raise ValueError(f"total_timesteps={total_timesteps} is below one "
                         f"rollout ({batch})")
    ss = np.random.SeedSequence(seed)
    action_seed, update_seed, *env_seeds = ss.spawn(2 + hp.n_envs)
    action_rng = np.random.default_rng(action_seed)
    update_rng = np.random.default_rng(update_seed)
    episode_rngs = [np.random.default_rng(s) for s in env_seeds]

    def next_episode_seed(i: int) -> int:
        return int(episode_rngs[i].integers(0, 2 ** 63))

    envs = [make_env(i) for i in range(hp.n_envs)]
    obs = np.stack([envs[i].reset(next_episode_seed(i))
                    for i in range(hp.n_envs)])

    params = init_params(arch, seed if init_seed is None else init_seed)
    opt = make_optimizer(hp)
    buffer = RolloutBuffer(hp.n_steps, hp.n_envs, arch.obs_shape)
    result = TrainResult(params=params, arch=arch, hp=hp)

    n_updates = total_timesteps // batch
    timesteps = 0
    for update in range(n_updates):
        buffer.reset()
        episodes_this_update = []
        for _ in range(hp.n_steps):
            logits, values = forward(params, arch, obs)
            actions, log_probs = sample_actions(logits, action_rng)
            rewards = np.zeros(hp.n_envs)
            dones = np.zeros(hp.n_envs)
            new_obs = obs.copy()
            truncated_idx = []
            truncated_obs = []
            for i, env in enumerate(envs):
                res = env.step(int(actions[i]))
                rewards[i] = res.reward
                if res.done:
                    dones[i] = 1.0
                    if res.info.get("truncated"):
                        truncated_idx.append(i)
                        truncated_obs.append(res.observation)
                    score = res.info.get("score")
                    if score is not None:
                        episodes_this_update.append(float(score))
                        result.episode_scores.append((timesteps + i, float(score)))
                    new_obs[i] = env.reset(next_episode_seed(i))
                else:
                    new_obs[i] = res.observation
            if truncated_idx:
                _, tail_values = forward(params, arch, np.stack(truncated_obs))
                for i, v in zip(truncated_idx, tail_values):
                    rewards[i] += hp.gamma * float(v)
            buffer.add(obs, actions, log_probs, values, rewards, dones)
            obs = new_obs
            timesteps += hp.n_envs
        _, bootstrap = forward(params, arch, obs)
        buffer.set_bootstrap(bootstrap)

        if hp.algo == "ppo":
            params, stats = ppo_update(params, buffer, hp, arch, opt, update_rng)
        else:
            params, stats = a2c_update(params, buffer, hp, arch, opt)
        entry = {"update": update, "timesteps": timesteps,
                 "n_episodes": len(episodes_this_update),
                 "mean_episode_score": (float(np.mean(episodes_this_update))
                                        if episodes_this_update else float("nan"))}
        entry.update(stats)
        result.curve.append(entry)
        logger.debug("update %d/%d: %s", update + 1, n_updates, entry)

        if (checkpoint_path is not None and checkpoint_every > 0
                and (update + 1) % checkpoint_every == 0):
            save_checkpoint(checkpoint_path, arch, params,
                            meta={"timesteps": timesteps, "update": update})
        if callback is not None and callback(update, timesteps, params):
            break

    result.params = params
    result.total_timesteps = timesteps
    if checkpoint_path is not None:
        save_checkpoint(checkpoint_path, arch, params,
                        meta={"timesteps": timesteps, "update": n_updates - 1})
    return result


@dataclass
class EvalTrial:
    index: int
    episode_seed: int
    score: float
    initial_powers: tuple
    times_ms: np.ndarray
    powers: np.ndarray   # (samples, n_enbs)
    scores: np.ndarray


def evaluate(params: dict, arch: PolicyArch, env_config: EnvConfig,
             n_trials: int, duration_s: float = 30.0, seed: int = 0,
             score_params=DEFAULT_SCORE, radio=DEFAULT_RADIO,
             store: StudyStore | None = None,
             study: str | None = None) -> list[EvalTrial]:
    """Greedy-action evaluation episodes with random initial powers.

    Each trial records the final score and the full power trajectory; when a
    store and study name are given, one TrialRecord is appended per trial.
    """
    duration_ms = int(round(duration_s * 1000))
    cfg = replace(env_config, randomize_init=True, train_duration_ms=duration_ms)
    env = PowerTuningEnv(cfg, score_params=score_params, radio=radio)
    seed_rng = np.random.default_rng(np.random.SeedSequence(seed))
    expected_steps = duration_ms // cfg.interaction_interval_ms
    trials = []
    if store is not None and study is not None:
        store.ensure_study(study, ["init_power_1", "init_power_2",
                                   "init_power_3", "episode_seed"])
    for k in range(n_trials):
        episode_seed = int(seed_rng.integers(0, 2 ** 63))
        obs = env.reset(episode_seed)
        initial = tuple(float(p) for p in env.powers_dbm())
        times, powers, scores = [], [], []
        calls = 0
        score = env.post_warmup_score
        while not env.done and calls < 4 * expected_steps:
            logits, _ = forward(params, arch, obs)
            res = env.step(int(greedy_actions(logits[None])[0]))
            calls += 1
            if not res.info["oob"]:
                times.append(env.clock_ms)
                powers.append(res.info["powers"])
                scores.append(res.info["score"])
            obs = res.observation
            score = res.info["score"]
        trial = EvalTrial(index=k, episode_seed=episode_seed, score=float(score),
                          initial_powers=initial,
                          times_ms=np.array(times, dtype=int),
                          powers=np.array(powers, dtype=float),
                          scores=np.array(scores, dtype=float))
        trials.append(trial)
        if store is not None and study is not None:
            store.append_trial(TrialRecord(
                study=study, trial_id=None,
                params={"init_power_1": initial[0], "init_power_2": initial[1],
                        "init_power_3": initial[2], "episode_seed": episode_seed},
                score=trial.score, seed=episode_seed))
    return trials
