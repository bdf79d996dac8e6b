import math

import numpy as np
import pytest

from ranbench.ransim import (DEFAULT_RADIO, Simulator, WaypointPhase,
                             antenna_gain, enb_layout, load_manifest,
                             pathloss, sample_scenario, save_manifest,
                             scenario_from_dict, _scenario_to_dict)

from conftest import make_scenario, three_group_positions

ARENA_R = DEFAULT_RADIO.arena_radius_m


class TestAntennaGain:
    def test_boresight(self):
        assert antenna_gain(0.0) == 0.0

    def test_half_beamwidth(self):
        # 12 * (35/70)^2 = 3
        assert antenna_gain(35.0) == pytest.approx(-3.0, abs=1e-12)

    def test_backlobe_capped(self):
        # 12 * (180/70)^2 = 79.3 dB, capped at the 20 dB maximum
        assert antenna_gain(180.0) == -20.0

    def test_symmetric_and_wrapped(self):
        assert antenna_gain(-35.0) == antenna_gain(35.0)
        assert antenna_gain(350.0) == pytest.approx(antenna_gain(-10.0))

    def test_vectorized(self):
        out = antenna_gain(np.array([0.0, 35.0, 180.0]))
        assert out.shape == (3,)
        assert out[0] == 0.0


class TestPathloss:
    def test_reference_distance(self):
        assert pathloss(1000.0) == pytest.approx(128.1, abs=1e-12)

    def test_half_km(self):
        expected = 128.1 + 37.6 * math.log10(0.5)
        assert pathloss(500.0) == pytest.approx(expected, abs=1e-12)

    def test_floor_clamp(self):
        assert pathloss(5.0) == pathloss(10.0)
        assert pathloss(0.0) == pathloss(10.0)


class TestLayout:
    def test_equilateral_triangle(self):
        pos, _ = enb_layout()
        for i in range(3):
            for j in range(i + 1, 3):
                d = np.hypot(*(pos[i] - pos[j]))
                assert d == pytest.approx(1000.0, abs=1e-9)

    def test_boresight_at_centroid(self):
        pos, azim = enb_layout()
        for b in range(3):
            to_origin = math.degrees(math.atan2(-pos[b, 1], -pos[b, 0]))
            assert azim[b] == pytest.approx(to_origin)

    def test_enb_configs(self):
        sim = Simulator(sample_scenario(3))
        subbands = sorted(e.subband_index for e in sim.enbs)
        assert subbands == [0, 1, 2]
        assert [e.id for e in sim.enbs] == [1, 2, 3]


class TestSampleScenario:
    def test_deterministic(self):
        a = sample_scenario(1234)
        b = sample_scenario(1234)
        assert a == b

    @pytest.mark.parametrize("seed", range(25))
    def test_positions_inside_arena(self, seed):
        spec = sample_scenario(seed)
        assert len(spec.ue_positions) == 12
        for x, y in spec.ue_positions:
            assert math.hypot(x, y) <= ARENA_R + 1e-9

    def test_cluster_structure(self):
        for seed in range(40):
            spec = sample_scenario(seed)
            assert 1 <= len(spec.clusters) <= 3
            assert sum(c.ue_count for c in spec.clusters) == 12
            for c in spec.clusters:
                assert c.ue_count >= 1
                assert 50.0 <= c.radius_m <= 300.0


class TestCommittedScenarios:
    def test_concentration_criterion(self, ts_scenarios):
        # the selection rule: equal 30 dBm powers use at most two eNBs
        for spec in ts_scenarios:
            sim = Simulator(spec, initial_powers_dbm=[30.0] * 3)
            sim.advance(4000)
            counts = sim.attachment_counts()
            assert (counts > 0).sum() <= 2, spec.name

    def test_manifests_regenerate_from_seed(self, ts_scenarios):
        for spec in ts_scenarios:
            regen = sample_scenario(spec.seed)
            assert regen.ue_positions == spec.ue_positions
            assert regen.clusters == spec.clusters

    def test_manifest_round_trip(self, tmp_path, ts1):
        path = tmp_path / "copy.json"
        save_manifest(ts1, path)
        assert load_manifest(path) == ts1

    def test_dict_round_trip_with_schedule(self):
        spec = make_scenario([(0.0, 0.0)], speed=14.0, schedule=(
            WaypointPhase(targets=((100.0, 0.0),), dwell_s=5.0),))
        assert scenario_from_dict(_scenario_to_dict(spec)) == spec


class TestMeasure:
    def test_dominant_cell_rsrq_near_zero(self):
        # UE right in front of eNB 1 at full power, others weak and far
        pos, _ = enb_layout()
        ue = tuple(pos[0] * 0.9)
        sim = Simulator(make_scenario([ue]), initial_powers_dbm=[40.0, 20.0, 20.0])
        m = sim.measure(0)
        assert -0.1 < m[0].rsrq_db <= 0.0

    def test_equidistant_three_way_split(self):
        # centroid UE, equal high powers: each cell is a third of the total
        sim = Simulator(make_scenario([(0.0, 0.0)]),
                        initial_powers_dbm=[40.0] * 3)
        m = sim.measure(0)
        expected = -10.0 * math.log10(3.0)
        for b in range(3):
            assert m[b].rsrq_db == pytest.approx(expected, abs=0.05)

    def test_serving_power_moves_data_sinr_exactly(self):
        scen = make_scenario([(10.0, 50.0)])
        sim = Simulator(scen, initial_powers_dbm=[30.0, 30.0, 30.0])
        s1 = sim.measure(0)[0].sinr_data
        sim.set_powers([40.0, 30.0, 30.0])
        s2 = sim.measure(0)[0].sinr_data
        assert s2 / s1 == pytest.approx(10.0, rel=1e-12)

    def test_hard_reuse_sinr_ignores_other_cells(self):
        scen = make_scenario([(10.0, 50.0)])
        sim = Simulator(scen, initial_powers_dbm=[30.0, 30.0, 30.0])
        s1 = sim.measure(0)[0].sinr_data
        sim.set_powers([30.0, 20.0, 40.0])
        assert sim.measure(0)[0].sinr_data == s1

    def test_db_linear_round_trip(self, ts1):
        sim = Simulator(ts1)
        sim.advance(100)
        for ue in range(sim.n_ues):
            for m in sim.measure(ue):
                lin = 10.0 ** (m.rsrp_dbm / 10.0)
                assert 10.0 * math.log10(lin) == pytest.approx(
                    m.rsrp_dbm, rel=1e-9)
                assert m.rsrq_db <= 0.0
                assert m.sinr_data >= 0.0


class TestAttachment:
    def test_attach_strongest(self):
        pos, _ = enb_layout()
        scen = make_scenario([tuple(pos[1] * 0.8)])
        sim = Simulator(scen, initial_powers_dbm=[30.0] * 3)
        events = sim.update_attachment()
        assert sim.attachments[0] == 1
        assert events[0].kind == "attach" and events[0].enb_to == 2

    def test_a2_gate_blocks_handover(self):
        # serving quality is fine: no handovers no matter how long we run
        pos, _ = enb_layout()
        scen = make_scenario([tuple(pos[0] * 0.8)])
        sim = Simulator(scen, initial_powers_dbm=[30.0] * 3)
        events = sim.advance(5000)
        assert sim.serving_rsrq()[0] > DEFAULT_RADIO.a2_threshold_db
        assert [e.kind for e in events] == ["attach"]

    def test_power_drop_triggers_handover_within_2s(self):
        # cluster attached to eNB 1; its power drops 40 -> 20 while a
        # neighbor holds 40: someone must hand over quickly
        positions = [(x, 80.0) for x in (-30.0, 0.0, 30.0)]
        sim = Simulator(make_scenario(positions),
                        initial_powers_dbm=[40.0, 40.0, 40.0])
        sim.advance(1000)
        assert set(sim.attachments) == {0}
        sim.set_powers([20.0, 40.0, 40.0])
        events = sim.advance(2000)
        handovers = [e for e in events if e.kind == "handover"]
        assert handovers, "no handover within 2 s of the power drop"
        assert all(e.enb_from == 1 for e in handovers)

    def test_time_to_trigger_delays_handover(self):
        positions = [(0.0, 80.0)]
        sim = Simulator(make_scenario(positions),
                        initial_powers_dbm=[40.0, 40.0, 40.0])
        sim.advance(1000)
        sim.set_powers([20.0, 40.0, 40.0])
        early = sim.advance(250)  # below the 256 ms time-to-trigger
        assert not [e for e in early if e.kind == "handover"]
        late = sim.advance(100)
        assert [e for e in late if e.kind == "handover"]


class TestTraffic:
    def test_lone_ue_rate_hits_spectral_cap(self):
        # one UE on its own cell: share = 5 MHz / 3, so the 4.8 b/s/Hz cap
        # binds at 8 Mbps, below the 20 Mbps demand cap
        pos, _ = enb_layout()
        sim = Simulator(make_scenario([tuple(pos[0] * 0.9)]),
                        initial_powers_dbm=[40.0, 20.0, 20.0])
        sim.update_attachment()
        delivered = sim.deliver_traffic(1000)
        expected = (DEFAULT_RADIO.data_bandwidth_hz
                    * DEFAULT_RADIO.se_cap_bps_hz) / 8.0
        assert delivered[0] == pytest.approx(expected, rel=1e-12)

    def test_empty_cells_leave_others_unaffected(self, three_group_scenario):
        sim = Simulator(three_group_scenario,
                        initial_powers_dbm=[40.0, 20.0, 20.0])
        sim.advance(500)
        counts = sim.attachment_counts()
        assert counts[0] == 12  # strong skew concentrates everyone
        delivered = sim.deliver_traffic(1000)
        # the two empty cells contribute nothing; every UE gets the same
        # 1/12 share of the one loaded cell
        assert np.ptp(delivered) == pytest.approx(0.0, abs=1e-9)
        share = DEFAULT_RADIO.data_bandwidth_hz / 12.0
        cap_bytes = share * DEFAULT_RADIO.se_cap_bps_hz / 8.0
        assert delivered[0] == pytest.approx(cap_bytes, rel=1e-9)

    def test_twelve_way_split_underutilizes(self, three_group_scenario):
        # all twelve UEs on one cell: per-UE rate is capped at a twelfth of
        # the cell's spectral-efficiency budget
        sim = Simulator(three_group_scenario,
                        initial_powers_dbm=[40.0, 20.0, 20.0])
        sim.advance(2000)
        assert sim.attachment_counts()[0] == 12
        per_ue_cap = (DEFAULT_RADIO.data_bandwidth_hz / 12.0
                      * DEFAULT_RADIO.se_cap_bps_hz)
        window = sim.window_bytes(window_ms=1000)
        assert np.all(window <= per_ue_cap / 8.0 + 1e-9)
        assert window.max() == pytest.approx(per_ue_cap / 8.0, rel=1e-9)

    def test_conservation_total_vs_window(self, ts1):
        # summation order differs between the running total and the window
        # query, so agreement is to float round-off, not bitwise
        sim = Simulator(ts1)
        sim.advance(2500)
        before = sim.total_bytes.copy()
        sim.advance(1500)
        delta = sim.total_bytes - before
        np.testing.assert_allclose(delta, sim.window_bytes(window_ms=1500),
                                   rtol=1e-12)

    def test_conservation_deliver_vs_window(self, ts1):
        sim = Simulator(ts1)
        sim.advance(2000)
        delivered = sim.deliver_traffic(1000)
        np.testing.assert_allclose(delivered,
                                   sim.window_bytes(window_ms=1000),
                                   rtol=1e-12)


class TestAdvance:
    def test_determinism(self, ts1):
        sims = [Simulator(ts1) for _ in range(2)]
        for sim in sims:
            sim.advance(1000)
        np.testing.assert_array_equal(sims[0].window_bytes(window_ms=1000),
                                      sims[1].window_bytes(window_ms=1000))
        np.testing.assert_array_equal(sims[0].attachments, sims[1].attachments)

    def test_every_ue_attached_after_warmup(self, ts_scenarios):
        for spec in ts_scenarios:
            sim = Simulator(spec)
            sim.advance(4000)
            assert (sim.attachments >= 0).all()

    def test_waypoint_kinematics(self):
        # 1400 m at 14 m/s: arrival after 100 s of simulated time, +-1 tick
        start = (0.0, -200.0)
        target = (0.0, 1200.0)
        scen = make_scenario([start], speed=14.0, schedule=(
            WaypointPhase(targets=(target,), dwell_s=1.0),))
        sim = Simulator(scen)
        events = sim.advance(110000)
        arrivals = [e for e in events if e.kind == "phase_static"]
        assert arrivals
        assert abs(arrivals[0].t_ms - 100000) <= 10

    def test_dwell_then_depart(self):
        scen = make_scenario([(0.0, 0.0)], speed=14.0, schedule=(
            WaypointPhase(targets=((0.0, 0.0),), dwell_s=1.0),
            WaypointPhase(targets=((0.0, 140.0),), dwell_s=1.0),
        ))
        sim = Simulator(scen)
        events = sim.advance(15000)
        kinds = [(e.kind, e.phase, e.t_ms) for e in events
                 if e.kind.startswith("phase")]
        assert kinds[0][0] == "phase_static" and kinds[0][1] == 0
        assert kinds[1][0] == "phase_depart" and kinds[1][1] == 1
        # second leg: 140 m at 14 m/s = 10 s travel
        assert kinds[2][0] == "phase_static"
        assert abs((kinds[2][2] - kinds[1][2]) - 10000) <= 10

    def test_dt_validation(self, ts1):
        sim = Simulator(ts1)
        with pytest.raises(ValueError):
            sim.advance(15)
        with pytest.raises(ValueError):
            sim.advance(0)


class TestRxWindow:
    def test_beyond_clock_raises(self, ts1):
        sim = Simulator(ts1)
        sim.advance(100)
        with pytest.raises(ValueError):
            sim.window_bytes(t_ms=200)

    def test_beyond_history_raises(self, ts1):
        sim = Simulator(ts1)
        sim.advance(3000)
        with pytest.raises(ValueError):
            sim.window_bytes(t_ms=500, window_ms=500)

    def test_truncated_early_history(self, ts1):
        sim = Simulator(ts1)
        sim.advance(500)
        # only 500 ms of history exists; a 500 ms window is fine
        assert sim.window_bytes(window_ms=500).shape == (12,)
