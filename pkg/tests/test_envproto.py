import io
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ranbench.envproto import (ActMsg, DoneMsg, EnvConfig, ErrMsg, EventMsg,
                               ObsMsg, PowerTuningEnv, ProtocolError,
                               RewardMsg, StepMsg, canonical_real, format_real,
                               parse_line, serialize, serve_stdio)
from ranbench.scoring import total_score


@pytest.fixture
def cfg(ts1):
    return EnvConfig(scenario=ts1, randomize_init=False,
                     train_duration_ms=2000)


@pytest.fixture
def env(cfg):
    return PowerTuningEnv(cfg)


def random_inbounds_action(env, rng):
    """Uniform over actions that cannot go out of bounds."""
    while True:
        a = int(rng.integers(env.n_actions))
        if a == 0:
            return a
        enb = (a - 1) // 2
        sign = -1 if a % 2 == 1 else 1
        p = env.powers_dbm()[enb] + sign * env.config.step_size_dbm
        if 20.0 <= p <= 40.0:
            return a


class TestReset:
    def test_default_powers(self, env):
        env.reset(0)
        np.testing.assert_array_equal(env.powers_dbm(), [30.0, 30.0, 30.0])

    def test_randomized_powers_reproducible(self, ts1):
        cfg = EnvConfig(scenario=ts1, randomize_init=True)
        env = PowerTuningEnv(cfg)
        env.reset(42)
        first = env.powers_dbm()
        assert np.all(first >= 20.0) and np.all(first <= 40.0)
        env.reset(42)
        np.testing.assert_array_equal(env.powers_dbm(), first)
        env.reset(43)
        assert not np.array_equal(env.powers_dbm(), first)

    def test_observation_shape_is_3x16x2(self, ts1):
        env = PowerTuningEnv(EnvConfig(scenario=ts1))  # T=16, Q=1 defaults
        obs = env.reset(0)
        assert obs.shape == (3, 16, 2)

    def test_history_zero_filled_before_start(self, env):
        obs = env.reset(0)
        assert np.all(obs[:, :-1, :] == 0.0)
        # live slice: normalized power 0.5, counts summing to 12/12
        np.testing.assert_allclose(obs[:, -1, 0], 0.5)
        assert obs[:, -1, 1].sum() == pytest.approx(1.0)

    def test_quantile_features_and_empty_cell_sentinel(self, ts1):
        cfg = EnvConfig(scenario=ts1, randomize_init=False, rsrq_quantiles=3)
        env = PowerTuningEnv(cfg)
        obs = env.reset(0)
        assert obs.shape == (3, 16, 4)
        live = obs[:, -1, :]
        counts = live[:, 1]
        for b in range(3):
            if counts[b] == 0.0:
                np.testing.assert_array_equal(live[b, 2:], -1.0)
            else:
                assert np.all(live[b, 2:] <= 0.0)
                assert np.all(live[b, 2:] >= -1.0)
                assert live[b, 2] <= live[b, 3]  # quantiles are ordered


class TestStep:
    def test_noop_reward_zero_once_steady(self, env):
        env.reset(0)
        res = env.step(0)
        # static scenario, full window on both sides: byte flow is steady
        assert res.reward == 0.0

    def test_action_indexing(self, env):
        env.reset(0)
        env.step(1)  # decrease eNB 1
        np.testing.assert_allclose(env.powers_dbm(), [29.7, 30.0, 30.0])
        env.step(6)  # increase eNB 3
        np.testing.assert_allclose(env.powers_dbm(), [29.7, 30.0, 30.3])

    def test_action_symmetry_exact(self, ts1):
        cfg = EnvConfig(scenario=ts1, randomize_init=True,
                        train_duration_ms=2000)
        env = PowerTuningEnv(cfg)
        env.reset(7)
        start = env.powers_dbm().copy()
        env.step(2)  # up eNB 1
        env.step(1)  # down eNB 1
        np.testing.assert_array_equal(env.powers_dbm(), start)

    def test_oob_penalized_ignored_and_terminal(self, ts1):
        cfg = EnvConfig(scenario=ts1, randomize_init=False, step_size_dbm=0.5,
                        oob_means_gameover=True, oob_penalty_factor=1.0)
        env = PowerTuningEnv(cfg)
        env.reset(0)
        for _ in range(20):  # 30 + 20 * 0.5 = 40.0 exactly
            res = env.step(2)
        assert env.powers_dbm()[0] == 40.0
        clock_before = env.clock_ms
        res = env.step(2)
        assert res.reward == -1.0
        assert res.done and res.info["terminated"] and res.info["oob"]
        assert env.powers_dbm()[0] == 40.0
        assert env.clock_ms == clock_before  # the simulator did not advance

    def test_oob_without_gameover_continues(self, ts1):
        cfg = EnvConfig(scenario=ts1, randomize_init=False, step_size_dbm=0.5,
                        oob_means_gameover=False, oob_penalty_factor=0.01)
        env = PowerTuningEnv(cfg)
        env.reset(0)
        for _ in range(20):
            env.step(1)  # down to 20.0 exactly
        res = env.step(1)
        assert res.reward == -0.01 and not res.done
        res = env.step(0)
        assert not res.info["oob"]

    def test_reward_telescopes_to_score_delta(self, env):
        env.reset(3)
        start = env.post_warmup_score
        rng = np.random.default_rng(0)
        rewards, final = [], start
        while True:
            res = env.step(random_inbounds_action(env, rng))
            rewards.append(res.reward)
            final = res.info["score"]
            if res.done:
                break
        assert abs(sum(rewards) - (final - start)) <= 1e-9

    def test_episode_ends_at_train_duration(self, env):
        env.reset(0)
        steps = 0
        while True:
            res = env.step(0)
            steps += 1
            if res.done:
                break
        assert steps == 20  # 2000 ms / 100 ms
        assert res.info["truncated"] and not res.info["terminated"]

    def test_step_after_done_raises(self, env):
        env.reset(0)
        for _ in range(20):
            env.step(0)
        with pytest.raises(RuntimeError):
            env.step(0)

    def test_invalid_action_rejected(self, env):
        env.reset(0)
        with pytest.raises(ValueError):
            env.step(7)
        with pytest.raises(ValueError):
            env.step(-1)

    def test_history_is_pure_shifting(self, env):
        obs = env.reset(0)
        lives = [obs[:, -1, :].copy()]
        observations = [obs]
        for _ in range(6):
            res = env.step(2)
            lives.append(res.observation[:, -1, :].copy())
            observations.append(res.observation)
        final = observations[-1]
        for k in range(len(lives)):
            np.testing.assert_array_equal(final[:, -1 - k, :],
                                          lives[len(lives) - 1 - k])

    def test_score_matches_simulator(self, env):
        env.reset(0)
        res = env.step(0)
        assert res.info["score"] == pytest.approx(
            total_score(env.sim), abs=0.0)


# -- protocol ---------------------------------------------------------------


MESSAGES = [
    ObsMsg(4000, (0.5, 0.25, canonical_real(-0.123456789))),
    RewardMsg(4100, canonical_real(0.0123456789)),
    EventMsg(4100, 3, 1, 2),
    StepMsg(4200),
    ActMsg(5),
    DoneMsg(14000, canonical_real(11.87654321)),
    ErrMsg("expected ACT, got 'garbage'"),
]


class TestProtocol:
    @pytest.mark.parametrize("msg", MESSAGES, ids=lambda m: type(m).__name__)
    def test_round_trip(self, msg):
        assert parse_line(serialize(msg)) == msg

    @given(st.integers(0, 10 ** 8),
           st.lists(st.floats(-1e6, 1e6, allow_nan=False), min_size=1,
                    max_size=8))
    @settings(max_examples=100)
    def test_obs_round_trip_canonical(self, t_ms, values):
        msg = ObsMsg(t_ms, tuple(canonical_real(v) for v in values))
        assert parse_line(serialize(msg)) == msg

    def test_nine_significant_digits(self):
        assert format_real(11.123456789123) == "11.1234568"
        assert format_real(0.0) == "0"

    @pytest.mark.parametrize("line", [
        "", "BOGUS 1 2", "ACT", "ACT x", "REWARD 1", "EVENT 1 HANDOVER 2 3",
        "STEP 1 2", "DONE 5",
    ])
    def test_malformed_lines_raise(self, line):
        with pytest.raises(ProtocolError):
            parse_line(line)


def run_server(cfg, actions, episode_seed=0):
    stdin = io.StringIO("".join(f"ACT {a}\n" for a in actions))
    stdout = io.StringIO()
    code = serve_stdio(cfg, episode_seed=episode_seed, stdin=stdin,
                       stdout=stdout)
    return code, stdout.getvalue().splitlines()


class TestServeStdio:
    def test_transcript_matches_in_process_rollout(self, cfg):
        env = PowerTuningEnv(cfg)
        rng = np.random.default_rng(5)
        env.reset(11)
        actions, rewards = [], [0.0]
        while True:
            a = random_inbounds_action(env, rng)
            res = env.step(a)
            actions.append(a)
            rewards.append(res.reward)
            if res.done:
                final_score = res.info["score"]
                break

        code, lines = run_server(cfg, actions, episode_seed=11)
        assert code == 0
        reward_lines = [l for l in lines if l.startswith("REWARD")]
        assert len(reward_lines) == len(rewards)
        for line, r in zip(reward_lines, rewards):
            assert line.split()[2] == format_real(r)
        done = parse_line(lines[-1])
        assert isinstance(done, DoneMsg)
        assert format_real(final_score) == format_real(done.final_score)

    def test_step_line_count(self, ts1):
        cfg = EnvConfig(scenario=ts1, randomize_init=False,
                        train_duration_ms=1000)
        code, lines = run_server(cfg, [0] * 10)
        assert code == 0
        assert sum(1 for l in lines if l.startswith("STEP")) == 10
        assert sum(1 for l in lines if l.startswith("OBS")) == 11

    def test_garbage_peer_errors(self, cfg):
        stdin = io.StringIO("ACT 0\nflagrant nonsense\n")
        stdout = io.StringIO()
        code = serve_stdio(cfg, stdin=stdin, stdout=stdout)
        assert code == 1
        assert stdout.getvalue().splitlines()[-1].startswith("ERR")

    def test_out_of_range_action_errors(self, cfg):
        code, lines = run_server(cfg, [99])
        assert code == 1
        assert lines[-1].startswith("ERR")

    def test_early_eof_errors(self, cfg):
        code, lines = run_server(cfg, [0] * 3)  # episode needs 20 actions
        assert code == 1
        assert lines[-1].startswith("ERR")

    def test_oob_gameover_emits_done(self, ts1):
        cfg = EnvConfig(scenario=ts1, randomize_init=False, step_size_dbm=0.5,
                        train_duration_ms=5000, oob_means_gameover=True)
        code, lines = run_server(cfg, [2] * 21)
        assert code == 0
        done = parse_line(lines[-1])
        assert isinstance(done, DoneMsg)
        assert sum(1 for l in lines if l.startswith("STEP")) == 21
