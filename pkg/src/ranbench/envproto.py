"""Episodic power-tuning environment over the simulator, plus the line
protocol that lets an external agent drive it over stdin/stdout.

Observations stack, per eNB and per history slot, the normalized transmit
power, the attached-UE fraction, and Q-1 RSRQ quantiles of the attached UEs.
Actions nudge a single eNB's power by a fixed step; out-of-bounds requests
are ignored and penalized (optionally ending the episode).
"""

from __future__ import annotations

import sys
from dataclasses import dataclass, field, replace

import numpy as np

from .ransim import DEFAULT_RADIO, RadioParams, ScenarioSpec, SimEvent, Simulator
from .scoring import DEFAULT_SCORE, ScoreParams, total_score

RSRQ_NORM_FLOOR_DB = -30.0  # RSRQ below this maps to the -1 sentinel


class ProtocolError(Exception):
    """Malformed line on the text protocol."""


@dataclass(frozen=True)
class EnvConfig:
    scenario: ScenarioSpec
    history_len: int = 16
    rsrq_quantiles: int = 1
    step_size_dbm: float = 0.3
    randomize_init: bool = True
    train_duration_ms: int = 10000
    oob_means_gameover: bool = True
    oob_penalty_factor: float = 1.0
    interaction_interval_ms: int = 100
    warmup_ms: int = 4000

    def __post_init__(self):
        if self.history_len < 1:
            raise ValueError("history_len must be >= 1")
        if self.rsrq_quantiles < 1:
            raise ValueError("rsrq_quantiles must be >= 1")
        if self.step_size_dbm <= 0:
            raise ValueError("step_size_dbm must be positive")
        if self.train_duration_ms % self.interaction_interval_ms:
            raise ValueError("train_duration_ms must be a multiple of the "
                             "interaction interval")


@dataclass
class StepResult:
    observation: np.ndarray
    reward: float
    done: bool
    info: dict


class PowerTuningEnv:
    """One episode at a time; call reset() before step().

    Observation shape is (n_enbs, history_len, rsrq_quantiles + 1), oldest
    history slot first; slots before the episode start are zero. Action 0 is
    a no-op; action 2i-1 decreases and 2i increases eNB i (1-based) by the
    configured step.
    """

    def __init__(self, config: EnvConfig,
                 score_params: ScoreParams = DEFAULT_SCORE,
                 radio: RadioParams = DEFAULT_RADIO):
        self.config = config
        self.score_params = score_params
        self.radio = radio
        self.n_enbs = 3
        self.n_actions = 2 * self.n_enbs + 1
        self.n_features = config.rsrq_quantiles + 1
        self.obs_shape = (self.n_enbs, config.history_len, self.n_features)
        self.sim: Simulator | None = None
        self._done = True
        self._quantile_levels = (np.arange(1, config.rsrq_quantiles)
                                 / config.rsrq_quantiles)

    # -- lifecycle ------------------------------------------------------------

    def reset(self, episode_seed: int = 0) -> np.ndarray:
        cfg = self.config
        rng = np.random.default_rng(episode_seed)
        if cfg.randomize_init:
            base = rng.uniform(self.radio.tx_power_min_dbm,
                               self.radio.tx_power_max_dbm, self.n_enbs)
        else:
            base = np.full(self.n_enbs, 30.0)
        # powers are kept as base + step_count * step so that an up/down pair
        # restores the value bit-exactly
        self._base_dbm = base
        self._step_counts = np.zeros(self.n_enbs, dtype=int)
        self.sim = Simulator(cfg.scenario, initial_powers_dbm=base,
                             radio=self.radio,
                             rx_window_ms=max(self.score_params.window_ms, 2000))
        self.sim.advance(cfg.warmup_ms)
        self._score_prev = total_score(self.sim, params=self.score_params)
        self.post_warmup_score = self._score_prev
        self._elapsed_ms = 0
        self._done = False
        self._history = np.zeros(self.obs_shape)
        self._history[:, -1, :] = self._live_slice()
        return self._history.copy()

    @property
    def clock_ms(self) -> int:
        return self.sim.clock_ms if self.sim is not None else 0

    @property
    def done(self) -> bool:
        return self._done

    def powers_dbm(self) -> np.ndarray:
        return self._base_dbm + self._step_counts * self.config.step_size_dbm

    # -- observations -----------------------------------------------------------

    def _live_slice(self) -> np.ndarray:
        """(n_enbs, n_features) for the current instant."""
        radio = self.radio
        span = radio.tx_power_max_dbm - radio.tx_power_min_dbm
        powers = (self.powers_dbm() - radio.tx_power_min_dbm) / span
        counts = self.sim.attachment_counts() / self.sim.n_ues
        out = np.empty((self.n_enbs, self.n_features))
        out[:, 0] = powers
        out[:, 1] = counts
        if self.config.rsrq_quantiles > 1:
            serving = self.sim.serving_rsrq()
            att = self.sim.attachments
            for b in range(self.n_enbs):
                vals = serving[att == b]
                if vals.size:
                    q = np.quantile(vals, self._quantile_levels)
                    out[b, 2:] = np.maximum(q / abs(RSRQ_NORM_FLOOR_DB), -1.0)
                else:
                    out[b, 2:] = -1.0
        return out

    def _shift_history(self) -> None:
        self._history[:, :-1, :] = self._history[:, 1:, :]
        self._history[:, -1, :] = self._live_slice()

    # -- stepping -----------------------------------------------------------------

    def step(self, action: int) -> StepResult:
        if self._done:
            raise RuntimeError("episode is finished; call reset()")
        action = int(action)
        if not 0 <= action < self.n_actions:
            raise ValueError(f"action {action} outside 0..{self.n_actions - 1}")
        cfg = self.config

        if action != 0:
            enb = (action - 1) // 2
            sign = -1 if action % 2 == 1 else 1
            new_count = self._step_counts[enb] + sign
            candidate = self._base_dbm[enb] + new_count * cfg.step_size_dbm
            if (candidate < self.radio.tx_power_min_dbm
                    or candidate > self.radio.tx_power_max_dbm):
                self._done = cfg.oob_means_gameover
                info = {"score": self._score_prev, "oob": True,
                        "terminated": self._done, "truncated": False,
                        "events": [], "powers": tuple(self.powers_dbm())}
                return StepResult(self._history.copy(),
                                  -cfg.oob_penalty_factor, self._done, info)
            self._step_counts[enb] = new_count
            self.sim.set_powers(self.powers_dbm())

        events = self.sim.advance(cfg.interaction_interval_ms)
        self._elapsed_ms += cfg.interaction_interval_ms
        score = total_score(self.sim, params=self.score_params)
        reward = score - self._score_prev
        self._score_prev = score
        self._shift_history()

        truncated = self._elapsed_ms >= cfg.train_duration_ms
        self._done = truncated
        info = {"score": score, "oob": False, "terminated": False,
                "truncated": truncated, "events": events,
                "powers": tuple(self.powers_dbm())}
        return StepResult(self._history.copy(), reward, self._done, info)


# -- text protocol -------------------------------------------------------------


@dataclass(frozen=True)
class ObsMsg:
    t_ms: int
    values: tuple[float, ...]


@dataclass(frozen=True)
class RewardMsg:
    t_ms: int
    value: float


@dataclass(frozen=True)
class EventMsg:
    t_ms: int
    ue: int
    enb_from: int
    enb_to: int


@dataclass(frozen=True)
class StepMsg:
    t_ms: int


@dataclass(frozen=True)
class ActMsg:
    action: int


@dataclass(frozen=True)
class DoneMsg:
    t_ms: int
    final_score: float


@dataclass(frozen=True)
class ErrMsg:
    reason: str


def format_real(x: float) -> str:
    """All reals on the wire carry 9 significant digits."""
    return f"{x:.9g}"


def canonical_real(x: float) -> float:
    """The float a peer recovers after one trip over the wire."""
    return float(format_real(x))


def serialize(msg) -> str:
    if isinstance(msg, ObsMsg):
        vals = " ".join(format_real(v) for v in msg.values)
        return f"OBS {msg.t_ms} {vals}"
    if isinstance(msg, RewardMsg):
        return f"REWARD {msg.t_ms} {format_real(msg.value)}"
    if isinstance(msg, EventMsg):
        return f"EVENT {msg.t_ms} HANDOVER {msg.ue} {msg.enb_from} {msg.enb_to}"
    if isinstance(msg, StepMsg):
        return f"STEP {msg.t_ms}"
    if isinstance(msg, ActMsg):
        return f"ACT {msg.action}"
    if isinstance(msg, DoneMsg):
        return f"DONE {msg.t_ms} {format_real(msg.final_score)}"
    if isinstance(msg, ErrMsg):
        return f"ERR {msg.reason}"
    raise TypeError(f"not a protocol message: {msg!r}")


def parse_line(line: str):
    parts = line.strip().split()
    if not parts:
        raise ProtocolError("empty line")
    tag = parts[0]
    try:
        if tag == "OBS":
            return ObsMsg(int(parts[1]), tuple(float(v) for v in parts[2:]))
        if tag == "REWARD" and len(parts) == 3:
            return RewardMsg(int(parts[1]), float(parts[2]))
        if tag == "EVENT" and len(parts) == 6 and parts[2] == "HANDOVER":
            return EventMsg(int(parts[1]), int(parts[3]), int(parts[4]),
                            int(parts[5]))
        if tag == "STEP" and len(parts) == 2:
            return StepMsg(int(parts[1]))
        if tag == "ACT" and len(parts) == 2:
            return ActMsg(int(parts[1]))
        if tag == "DONE" and len(parts) == 3:
            return DoneMsg(int(parts[1]), float(parts[2]))
        if tag == "ERR":
            return ErrMsg(" ".join(parts[1:]))
    except (ValueError, IndexError) as exc:
        raise ProtocolError(f"bad {tag} line: {line.strip()!r}") from exc
    raise ProtocolError(f"unrecognized line: {line.strip()!r}")


def serve_stdio(config: EnvConfig, episode_seed: int = 0,
                score_params: ScoreParams = DEFAULT_SCORE,
                radio: RadioParams = DEFAULT_RADIO,
                stdin=None, stdout=None) -> int:
    """Run one episode against a line-oriented peer. Per interaction: OBS,
    REWARD and any HANDOVER EVENT lines, then a STEP prompt; the peer answers
    ACT <id>. Ends with DONE (exit 0) or ERR on a malformed line (exit 1)."""
    fin = sys.stdin if stdin is None else stdin
    fout = sys.stdout if stdout is None else stdout

    def emit(msg):
        fout.write(serialize(msg) + "\n")

    env = PowerTuningEnv(config, score_params=score_params, radio=radio)
    obs = env.reset(episode_seed)
    reward = 0.0
    events: list[SimEvent] = []
    score = env.post_warmup_score

    while True:
        t = env.clock_ms
        emit(ObsMsg(t, tuple(obs.ravel())))
        emit(RewardMsg(t, reward))
        for ev in events:
            if ev.kind == "handover":
                emit(EventMsg(ev.t_ms, ev.ue, ev.enb_from, ev.enb_to))
        if env.done:
            emit(DoneMsg(t, score))
            fout.flush()
            return 0
        emit(StepMsg(t))
        fout.flush()

        line = fin.readline()
        if not line:
            emit(ErrMsg("unexpected end of input"))
            fout.flush()
            return 1
        try:
            msg = parse_line(line)
            if not isinstance(msg, ActMsg):
                raise ProtocolError(f"expected ACT, got {line.strip()!r}")
            result = env.step(msg.action)
        except (ProtocolError, ValueError) as exc:
            emit(ErrMsg(str(exc)))
            fout.flush()
            return 1
        obs = result.observation
        reward = result.reward
        events = result.info["events"]
        score = result.info["score"]
