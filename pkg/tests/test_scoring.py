import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ranbench.ransim import Simulator
from ranbench.scoring import ScoreParams, total_score, ue_experience

from conftest import make_scenario, three_group_positions


class _StubState:
    """Minimal state: a clock and a fixed per-UE window answer."""

    def __init__(self, clock_ms, per_ue_bytes):
        self.clock_ms = clock_ms
        self._bytes = np.asarray(per_ue_bytes, dtype=float)

    def window_bytes(self, t_ms, window_ms):
        return self._bytes


class TestUeExperience:
    def test_zero_bytes(self):
        assert ue_experience(0.0) == 0.0

    def test_reference_volume_is_exactly_one(self):
        assert ue_experience(5e5) == 1.0

    def test_ten_x_reference(self):
        # log_1000((999 * 5e6 / 5e5) + 1) = log_1000(9991)
        expected = math.log(9991.0) / math.log(1000.0)
        assert ue_experience(5e6) == pytest.approx(expected, abs=1e-12)

    def test_negative_rejected(self):
        with pytest.raises(ValueError):
            ue_experience(-1.0)

    @given(st.floats(min_value=1.0001, max_value=1e6))
    def test_unit_anchor_for_any_alpha(self, alpha):
        p = ScoreParams(alpha=alpha)
        assert ue_experience(p.reference_bytes, p) == 1.0

    @given(st.floats(min_value=0.0, max_value=1e9),
           st.floats(min_value=0.0, max_value=1e9),
           st.floats(min_value=1.0, max_value=1e8))
    @settings(max_examples=200)
    def test_monotone_and_concave(self, r1, r2, delta):
        lo, hi = sorted((r1, r2))
        assert ue_experience(hi) >= ue_experience(lo)
        inc_lo = ue_experience(lo + delta) - ue_experience(lo)
        inc_hi = ue_experience(hi + delta) - ue_experience(hi)
        assert inc_lo >= inc_hi - 1e-12

    def test_param_validation(self):
        with pytest.raises(ValueError):
            ScoreParams(alpha=1.0)
        with pytest.raises(ValueError):
            ScoreParams(window_ms=0)
        with pytest.raises(ValueError):
            ScoreParams(reference_bytes=0.0)


class TestTotalScore:
    def test_all_starved(self):
        assert total_score(_StubState(5000, np.zeros(12))) == 0.0

    def test_twelve_ues_at_reference_rate(self):
        # 5e5 bytes per 2 s window each = exactly 1.0 per UE
        state = _StubState(5000, np.full(12, 5e5))
        assert total_score(state) == 12.0

    def test_beyond_clock_raises(self):
        with pytest.raises(ValueError):
            total_score(_StubState(1000, np.zeros(12)), t_ms=1500)

    def test_truncated_window_before_2s(self, ts1):
        sim = Simulator(ts1)
        sim.advance(1000)
        assert total_score(sim) >= 0.0  # truncated to 1 s of history

    def test_zero_time_scores_zero(self, ts1):
        assert total_score(Simulator(ts1)) == 0.0

    def test_monotonicity_in_single_ue_bytes(self):
        base = np.full(12, 2e5)
        richer = base.copy()
        richer[3] += 1e5
        assert (total_score(_StubState(5000, richer))
                > total_score(_StubState(5000, base)))

    def test_balanced_split_beats_concentration(self, three_group_scenario):
        """Same UEs, two power configurations: serving everyone from one cell
        at its capacity cap scores strictly below a 4/4/4 split."""
        def run(powers):
            sim = Simulator(three_group_scenario, initial_powers_dbm=powers)
            sim.advance(14000)
            return total_score(sim), sim.attachment_counts()

        balanced_score, balanced_counts = run([30.0, 30.0, 30.0])
        packed_score, packed_counts = run([40.0, 20.0, 20.0])
        assert list(balanced_counts) == [4, 4, 4]
        assert packed_counts[0] == 12
        assert balanced_score > packed_score
