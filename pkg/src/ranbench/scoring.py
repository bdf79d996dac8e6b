"""Per-user experience metric and the network-wide score built from it.

The per-UE experience is a logarithm of the bytes received in a trailing
window, shaped so throughput beyond ~2 Mbps sees diminishing returns while
starvation is penalized hard. The total score (the sum over UEs) is both the
offline trial objective and the basis of the RL reward.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class ScoreParams:
    alpha: float = 1000.0
    window_ms: int = 2000
    reference_bytes: float = 5e5

    def __post_init__(self):
        if not self.alpha > 1.0:
            raise ValueError("alpha must exceed 1")
        if self.window_ms <= 0:
            raise ValueError("window_ms must be positive")
        if self.reference_bytes <= 0:
            raise ValueError("reference_bytes must be positive")


DEFAULT_SCORE = ScoreParams()


def ue_experience(window_bytes, params: ScoreParams = DEFAULT_SCORE):
    """log_alpha((alpha-1) * r / reference + 1); 0 at r=0, exactly 1 at the
    reference volume, concave and strictly increasing. Accepts scalars or
    arrays."""
    r = np.asarray(window_bytes, dtype=float)
    if np.any(r < 0):
        raise ValueError("window byte counts must be non-negative")
    out = np.log((params.alpha - 1.0) * (r / params.reference_bytes) + 1.0)
    out = out / np.log(params.alpha)
    return float(out) if np.isscalar(window_bytes) else out


def total_score(state, t_ms: int | None = None,
                params: ScoreParams = DEFAULT_SCORE) -> float:
    """Sum of UE experiences over the window ending at t (default: now).

    Before a full window of history exists the window is truncated to what is
    available (flagged at debug level); t beyond the state clock is an error.
    """
    t = state.clock_ms if t_ms is None else t_ms
    if t > state.clock_ms:
        raise ValueError(f"t={t} ms is beyond the simulator clock")
    window = params.window_ms
    if t < window:
        logger.debug("score window truncated to %d ms at t=%d ms", t, t)
        window = t
    if window == 0:
        return 0.0
    r = state.window_bytes(t, window)
    return float(ue_experience(r, params).sum())
