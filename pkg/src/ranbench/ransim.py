"""Discrete-time LTE downlink simulator: three sectorized cells, twelve users.

The model is deliberately lightweight: log-distance pathloss, a parabolic
antenna pattern, hard 1/3 frequency reuse (so the data plane sees no
inter-cell interference), A2/A4-style RSRQ handovers with a time-to-trigger
hold, and a fluid rate-capped traffic model. Everything is deterministic
given the scenario seed and the sequence of power changes.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace

import numpy as np

# Internal tick; all durations handled by the simulator are multiples of this.
TICK_MS = 10

MANIFEST_FORMAT_VERSION = 1


@dataclass(frozen=True)
class RadioParams:
    """Radio-layer constants. All values can be overridden via the bench config."""

    enb_spacing_m: float = 1000.0
    tx_power_min_dbm: float = 20.0
    tx_power_max_dbm: float = 40.0
    bandwidth_hz: float = 5e6
    reuse_factor: int = 3
    beamwidth_deg: float = 70.0
    antenna_max_attenuation_db: float = 20.0
    pathloss_const_db: float = 128.1
    pathloss_exp_db: float = 37.6
    pathloss_min_distance_m: float = 10.0
    thermal_noise_dbm_hz: float = -174.0
    noise_figure_db: float = 9.0
    se_cap_bps_hz: float = 4.8
    cbr_cap_bps: float = 20e6
    a2_threshold_db: float = -6.0
    a4_offset_db: float = 1.0
    time_to_trigger_ms: int = 256

    @property
    def arena_radius_m(self) -> float:
        """Circumradius of the eNB triangle; UEs live inside this disc."""
        return self.enb_spacing_m / math.sqrt(3.0)

    @property
    def data_bandwidth_hz(self) -> float:
        return self.bandwidth_hz / self.reuse_factor

    @property
    def measurement_noise_dbm(self) -> float:
        return (self.thermal_noise_dbm_hz
                + 10.0 * math.log10(self.bandwidth_hz)
                + self.noise_figure_db)

    @property
    def data_noise_dbm(self) -> float:
        return (self.thermal_noise_dbm_hz
                + 10.0 * math.log10(self.data_bandwidth_hz)
                + self.noise_figure_db)


DEFAULT_RADIO = RadioParams()


@dataclass(frozen=True)
class EnbConfig:
    """One cell: 1-based id, site position, boresight and current power."""

    id: int
    position: tuple[float, float]
    boresight_azimuth_deg: float
    tx_power_dbm: float
    subband_index: int
    bandwidth_hz: float


@dataclass(frozen=True)
class ClusterSpec:
    center: tuple[float, float]
    radius_m: float
    ue_count: int


@dataclass(frozen=True)
class WaypointPhase:
    """One leg of a mobility schedule: walk to `targets`, then hold for `dwell_s`
    (measured from the moment the last UE arrives)."""

    targets: tuple[tuple[float, float], ...]
    dwell_s: float


@dataclass(frozen=True)
class ScenarioSpec:
    seed: int
    clusters: tuple[ClusterSpec, ...]
    ue_positions: tuple[tuple[float, float], ...]
    ue_speed_mps: float = 0.0
    waypoint_schedule: tuple[WaypointPhase, ...] | None = None
    name: str = ""

    @property
    def num_ues(self) -> int:
        return len(self.ue_positions)


@dataclass(frozen=True)
class LinkMeasurement:
    rsrp_dbm: float
    rssi_dbm: float
    rsrq_db: float
    sinr_data: float  # linear ratio over the data sub-band


@dataclass(frozen=True)
class SimEvent:
    kind: str  # "attach" | "handover" | "phase_static" | "phase_depart"
    t_ms: int
    ue: int = -1
    enb_from: int = 0  # 1-based; 0 = none
    enb_to: int = 0
    phase: int = -1


def wrap_angle_deg(angle):
    """Normalize an angle (or array of angles) to [-180, 180)."""
    return (np.asarray(angle, dtype=float) + 180.0) % 360.0 - 180.0


def antenna_gain(offset_deg, radio: RadioParams = DEFAULT_RADIO):
    """Parabolic pattern attenuation in dB (non-positive, 0 at boresight)."""
    off = np.abs(wrap_angle_deg(offset_deg))
    return -np.minimum(12.0 * (off / radio.beamwidth_deg) ** 2,
                       radio.antenna_max_attenuation_db)


def pathloss(distance_m, radio: RadioParams = DEFAULT_RADIO):
    """Log-distance macro-cell pathloss in dB, distance floored at 10 m."""
    d = np.maximum(np.asarray(distance_m, dtype=float), radio.pathloss_min_distance_m)
    return radio.pathloss_const_db + radio.pathloss_exp_db * np.log10(d / 1000.0)


def enb_layout(radio: RadioParams = DEFAULT_RADIO) -> tuple[np.ndarray, np.ndarray]:
    """Site positions (3, 2) on the arena circumcircle and boresight azimuths
    pointing at the centroid (the origin)."""
    r = radio.arena_radius_m
    angles = np.deg2rad(np.array([90.0, 210.0, 330.0]))
    pos = r * np.stack([np.cos(angles), np.sin(angles)], axis=1)
    azim = np.degrees(np.arctan2(-pos[:, 1], -pos[:, 0]))
    return pos, azim


def sample_scenario(seed: int, num_ues: int = 12,
                    radio: RadioParams = DEFAULT_RADIO) -> ScenarioSpec:
    """Draw a static scenario: 1-3 UE clusters, then UE positions inside them.

    Cluster centers are uniform over the arena disc, radii uniform in
    [50, 300] m, and the UE count is a random composition of ``num_ues``.
    UE draws falling outside the arena are rejection-resampled.
    """
    rng = np.random.default_rng(seed)
    arena_r = radio.arena_radius_m

    n_clusters = int(rng.integers(1, 4))
    clusters = []
    for _ in range(n_clusters):
        rho = arena_r * math.sqrt(rng.uniform())
        theta = rng.uniform(0.0, 2.0 * math.pi)
        center = (rho * math.cos(theta), rho * math.sin(theta))
        radius = float(rng.uniform(50.0, 300.0))
        clusters.append((center, radius))

    if n_clusters == 1:
        counts = [num_ues]
    else:
        cuts = np.sort(rng.choice(np.arange(1, num_ues), size=n_clusters - 1,
                                  replace=False))
        edges = np.concatenate([[0], cuts, [num_ues]])
        counts = [int(c) for c in np.diff(edges)]

    positions = []
    for (center, radius), count in zip(clusters, counts):
        for _ in range(count):
            while True:
                rho = radius * math.sqrt(rng.uniform())
                theta = rng.uniform(0.0, 2.0 * math.pi)
                x = center[0] + rho * math.cos(theta)
                y = center[1] + rho * math.sin(theta)
                if math.hypot(x, y) <= arena_r:
                    positions.append((x, y))
                    break

    cluster_specs = tuple(ClusterSpec(center=c, radius_m=r, ue_count=n)
                          for (c, r), n in zip(clusters, counts))
    return ScenarioSpec(seed=seed, clusters=cluster_specs,
                        ue_positions=tuple(positions))


class Simulator:
    """Live network state plus dynamics.

    Single-threaded and not shareable; run one instance per worker. Radio
    quantities are cached and refreshed lazily, so ticks in a static scenario
    with unchanged powers cost almost nothing.
    """

    def __init__(self, scenario: ScenarioSpec,
                 initial_powers_dbm=(30.0, 30.0, 30.0),
                 radio: RadioParams = DEFAULT_RADIO,
                 rx_window_ms: int = 2000):
        if rx_window_ms % TICK_MS:
            raise ValueError("rx_window_ms must be a multiple of the tick")
        self.scenario = scenario
        self.radio = radio
        self.n_enbs = 3
        self.n_ues = scenario.num_ues
        self.clock_ms = 0

        self.enb_pos, self.enb_azimuth_deg = enb_layout(radio)
        self.powers_dbm = np.array(initial_powers_dbm, dtype=float)
        if self.powers_dbm.shape != (self.n_enbs,):
            raise ValueError("need one power per eNB")
        self.ue_pos = np.array(scenario.ue_positions, dtype=float)
        self.attachments = np.full(self.n_ues, -1, dtype=int)

        # rx history ring: one slot per tick, covering the trailing window
        self.rx_window_ms = rx_window_ms
        self._ring_cap = rx_window_ms // TICK_MS
        self._ring = np.zeros((self.n_ues, self._ring_cap))
        self._ticks_elapsed = 0
        self.total_bytes = np.zeros(self.n_ues)

        # handover time-to-trigger accumulators (ms of sustained condition)
        self._ttt_ms = np.zeros(self.n_ues)

        # mobility phase bookkeeping
        self._phase_idx = 0 if scenario.waypoint_schedule else -1
        self._phase_arrival_ms: int | None = None

        # lazily refreshed caches
        self._geometry_dirty = True
        self._radio_dirty = True
        self._rates_dirty = True
        self._attn = None        # (n_ues, n_enbs) antenna gain - pathloss, dB
        self._rsrp = None        # (n_ues, n_enbs) dBm
        self._rsrq = None        # (n_ues, n_enbs) dB
        self._rssi_dbm = None    # (n_ues,)
        self._sinr_lin = None    # (n_ues, n_enbs) data-plane SINR, linear
        self._rate_bps = np.zeros(self.n_ues)
        self._ho_cond = np.zeros(self.n_ues, dtype=bool)
        self._ho_target = np.zeros(self.n_ues, dtype=int)

    # -- configuration ----------------------------------------------------

    @property
    def current_phase(self) -> int:
        """Index into the waypoint schedule; -1 when there is none."""
        return self._phase_idx

    @property
    def phase_arrival_ms(self) -> int | None:
        """Clock time the current phase's last UE arrived, if it has."""
        return self._phase_arrival_ms

    @property
    def enbs(self) -> list[EnbConfig]:
        return [EnbConfig(id=b + 1,
                          position=tuple(self.enb_pos[b]),
                          boresight_azimuth_deg=float(self.enb_azimuth_deg[b]),
                          tx_power_dbm=float(self.powers_dbm[b]),
                          subband_index=b,
                          bandwidth_hz=self.radio.bandwidth_hz)
                for b in range(self.n_enbs)]

    def set_powers(self, powers_dbm) -> None:
        powers = np.asarray(powers_dbm, dtype=float)
        if powers.shape != (self.n_enbs,):
            raise ValueError("need one power per eNB")
        if not np.array_equal(powers, self.powers_dbm):
            self.powers_dbm = powers.copy()
            self._radio_dirty = True

    # -- measurements ------------------------------------------------------

    def _refresh_geometry(self) -> None:
        delta = self.ue_pos[:, None, :] - self.enb_pos[None, :, :]
        dist = np.hypot(delta[:, :, 0], delta[:, :, 1])
        bearing = np.degrees(np.arctan2(delta[:, :, 1], delta[:, :, 0]))
        offset = wrap_angle_deg(bearing - self.enb_azimuth_deg[None, :])
        self._attn = antenna_gain(offset, self.radio) - pathloss(dist, self.radio)
        self._geometry_dirty = False
        self._radio_dirty = True

    def _refresh_radio(self) -> None:
        if self._geometry_dirty:
            self._refresh_geometry()
        rsrp = self.powers_dbm[None, :] + self._attn
        rx_lin = 10.0 ** (rsrp / 10.0)
        noise_meas = 10.0 ** (self.radio.measurement_noise_dbm / 10.0)
        rssi_lin = rx_lin.sum(axis=1) + noise_meas
        rssi_dbm = 10.0 * np.log10(rssi_lin)
        self._rsrp = rsrp
        self._rssi_dbm = rssi_dbm
        self._rsrq = rsrp - rssi_dbm[:, None]
        noise_data = 10.0 ** (self.radio.data_noise_dbm / 10.0)
        self._sinr_lin = rx_lin / noise_data
        self._radio_dirty = False
        self._rates_dirty = True
        self._refresh_handover_conditions()

    def _ensure_radio(self) -> None:
        if self._geometry_dirty or self._radio_dirty:
            self._refresh_radio()

    def measure(self, ue: int) -> list[LinkMeasurement]:
        """Per-eNB link measurements for one UE."""
        self._ensure_radio()
        return [LinkMeasurement(rsrp_dbm=float(self._rsrp[ue, b]),
                                rssi_dbm=float(self._rssi_dbm[ue]),
                                rsrq_db=float(self._rsrq[ue, b]),
                                sinr_data=float(self._sinr_lin[ue, b]))
                for b in range(self.n_enbs)]

    def rsrq_matrix(self) -> np.ndarray:
        """(n_ues, n_enbs) RSRQ in dB; a copy safe to hold."""
        self._ensure_radio()
        return self._rsrq.copy()

    def serving_rsrq(self) -> np.ndarray:
        """RSRQ of each UE toward its serving eNB; NaN when unattached."""
        self._ensure_radio()
        out = np.full(self.n_ues, np.nan)
        att = self.attachments >= 0
        out[att] = self._rsrq[np.nonzero(att)[0], self.attachments[att]]
        return out

    def attachment_counts(self) -> np.ndarray:
        att = self.attachments
        return np.bincount(att[att >= 0], minlength=self.n_enbs)

    # -- attachment / handover ---------------------------------------------

    def _refresh_handover_conditions(self) -> None:
        radio = self.radio
        rsrq = self._rsrq
        att = self.attachments
        cond = np.zeros(self.n_ues, dtype=bool)
        target = np.zeros(self.n_ues, dtype=int)
        attached = att >= 0
        if attached.any():
            rows = np.nonzero(attached)[0]
            serving = rsrq[rows, att[rows]]
            masked = rsrq[rows].copy()
            masked[np.arange(len(rows)), att[rows]] = -np.inf
            best_other = masked.max(axis=1)
            cond[rows] = ((serving < radio.a2_threshold_db)
                          & (best_other > serving + radio.a4_offset_db))
            target[rows] = masked.argmax(axis=1)
        self._ho_cond = cond
        self._ho_target = target

    def update_attachment(self, _t_ms: int | None = None) -> list[SimEvent]:
        """One evaluation pass of the A2/A4 rules (counts one tick of sustain).

        Unattached UEs attach to the strongest-RSRP eNB immediately. Attached
        UEs hand over once the serving RSRQ has been below the A2 threshold,
        with some neighbor better by the A4 offset, for time_to_trigger.
        """
        self._ensure_radio()
        t = self.clock_ms if _t_ms is None else _t_ms
        events: list[SimEvent] = []

        unattached = self.attachments < 0
        if unattached.any():
            best = self._rsrp[unattached].argmax(axis=1)
            for ue, b in zip(np.nonzero(unattached)[0], best):
                self.attachments[ue] = b
                events.append(SimEvent("attach", t, ue=int(ue), enb_to=int(b) + 1))
            self._rates_dirty = True
            self._refresh_handover_conditions()

        cond = self._ho_cond
        if cond.any() or self._ttt_ms.any():
            self._ttt_ms = np.where(cond, self._ttt_ms + TICK_MS, 0.0)
            fire = self._ttt_ms >= self.radio.time_to_trigger_ms
            if fire.any():
                for ue in np.nonzero(fire)[0]:
                    src = int(self.attachments[ue])
                    dst = int(self._ho_target[ue])
                    self.attachments[ue] = dst
                    self._ttt_ms[ue] = 0.0
                    events.append(SimEvent("handover", t, ue=int(ue),
                                           enb_from=src + 1, enb_to=dst + 1))
                self._rates_dirty = True
                self._refresh_handover_conditions()
        return events

    # -- traffic -------------------------------------------------------------

    def _refresh_rates(self) -> None:
        self._ensure_radio()
        att = self.attachments
        rate = np.zeros(self.n_ues)
        attached = att >= 0
        if attached.any():
            counts = np.bincount(att[attached], minlength=self.n_enbs)
            rows = np.nonzero(attached)[0]
            share_hz = self.radio.data_bandwidth_hz / counts[att[rows]]
            sinr = self._sinr_lin[rows, att[rows]]
            shannon = share_hz * np.log2(1.0 + sinr)
            rate[rows] = np.minimum(np.minimum(shannon,
                                               share_hz * self.radio.se_cap_bps_hz),
                                    self.radio.cbr_cap_bps)
        self._rate_bps = rate
        self._rates_dirty = False

    def _deliver_one_tick(self) -> np.ndarray:
        if self._rates_dirty or self._radio_dirty or self._geometry_dirty:
            self._refresh_rates()
        delivered = self._rate_bps * (TICK_MS / 1000.0 / 8.0)
        self._ring[:, self._ticks_elapsed % self._ring_cap] = delivered
        self._ticks_elapsed += 1
        self.total_bytes += delivered
        return delivered

    def deliver_traffic(self, dt_ms: int) -> np.ndarray:
        """Deliver traffic for dt_ms at current rates; advances the clock but
        does not move UEs or re-run attachment (advance() composes those)."""
        self._check_dt(dt_ms)
        total = np.zeros(self.n_ues)
        for _ in range(dt_ms // TICK_MS):
            total += self._deliver_one_tick()
            self.clock_ms += TICK_MS
        return total

    # -- mobility ------------------------------------------------------------

    def _move_ues(self, t_next: int, events: list[SimEvent]) -> None:
        schedule = self.scenario.waypoint_schedule
        phase = schedule[self._phase_idx]
        targets = np.asarray(phase.targets, dtype=float)
        delta = targets - self.ue_pos
        dist = np.hypot(delta[:, 0], delta[:, 1])
        if self._phase_arrival_ms is None:
            step = self.scenario.ue_speed_mps * TICK_MS / 1000.0
            moving = dist > 0.0
            if moving.any() and step > 0.0:
                frac = np.minimum(step / np.where(moving, dist, 1.0), 1.0)
                self.ue_pos = self.ue_pos + delta * np.where(moving, frac, 0.0)[:, None]
                self._geometry_dirty = True
                delta = targets - self.ue_pos
                dist = np.hypot(delta[:, 0], delta[:, 1])
            if not (dist > 1e-9).any():
                self.ue_pos = targets.copy()
                self._phase_arrival_ms = t_next
                events.append(SimEvent("phase_static", t_next, phase=self._phase_idx))
        elif (t_next - self._phase_arrival_ms >= phase.dwell_s * 1000.0
              and self._phase_idx + 1 < len(schedule)):
            self._phase_idx += 1
            self._phase_arrival_ms = None
            events.append(SimEvent("phase_depart", t_next, phase=self._phase_idx))

    # -- main loop -----------------------------------------------------------

    def _check_dt(self, dt_ms: int) -> None:
        if dt_ms <= 0 or dt_ms % TICK_MS:
            raise ValueError(f"dt must be a positive multiple of {TICK_MS} ms")

    def advance(self, dt_ms: int) -> list[SimEvent]:
        """Run the simulation for dt_ms. Per tick: move UEs, refresh
        measurements, update attachment, deliver traffic, advance the clock."""
        self._check_dt(dt_ms)
        events: list[SimEvent] = []
        has_schedule = self._phase_idx >= 0
        for _ in range(dt_ms // TICK_MS):
            t_next = self.clock_ms + TICK_MS
            if has_schedule:
                self._move_ues(t_next, events)
            events.extend(self.update_attachment(t_next))
            self._deliver_one_tick()
            self.clock_ms = t_next
        return events

    # -- rx history ------------------------------------------------------------

    def window_bytes(self, t_ms: int | None = None,
                     window_ms: int | None = None) -> np.ndarray:
        """Bytes delivered to each UE during (t - window, t].

        Raises if t lies beyond the clock or the window reaches back past the
        retained history.
        """
        t = self.clock_ms if t_ms is None else t_ms
        w = self.rx_window_ms if window_ms is None else window_ms
        if t > self.clock_ms:
            raise ValueError(f"t={t} ms is beyond the simulator clock "
                             f"({self.clock_ms} ms)")
        if t % TICK_MS or w % TICK_MS or w < 0:
            raise ValueError("t and window must be non-negative tick multiples")
        j_hi = t // TICK_MS
        j_lo = max((t - w) // TICK_MS, 0)
        if j_lo < self._ticks_elapsed - self._ring_cap:
            raise ValueError("window reaches beyond retained rx history")
        if j_hi <= j_lo:
            return np.zeros(self.n_ues)
        idx = np.arange(j_lo, j_hi) % self._ring_cap
        return self._ring[:, idx].sum(axis=1)


# -- scenario manifests ---------------------------------------------------------


def _scenario_to_dict(spec: ScenarioSpec) -> dict:
    doc = {
        "format_version": MANIFEST_FORMAT_VERSION,
        "kind": "scenario",
        "name": spec.name,
        "seed": spec.seed,
        "ue_speed_mps": spec.ue_speed_mps,
        "clusters": [{"center": list(c.center), "radius_m": c.radius_m,
                      "ue_count": c.ue_count} for c in spec.clusters],
        "ue_positions": [list(p) for p in spec.ue_positions],
        "waypoint_schedule": None,
    }
    if spec.waypoint_schedule is not None:
        doc["waypoint_schedule"] = [
            {"targets": [list(p) for p in ph.targets], "dwell_s": ph.dwell_s}
            for ph in spec.waypoint_schedule
        ]
    return doc


def save_manifest(spec: ScenarioSpec, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(_scenario_to_dict(spec), fh, indent=2)
        fh.write("\n")


def scenario_from_dict(doc: dict) -> ScenarioSpec:
    if doc.get("kind") != "scenario":
        raise ValueError("not a scenario manifest")
    if doc.get("format_version") != MANIFEST_FORMAT_VERSION:
        raise ValueError(f"unsupported manifest version {doc.get('format_version')}")
    schedule = None
    if doc.get("waypoint_schedule"):
        schedule = tuple(
            WaypointPhase(targets=tuple(tuple(p) for p in ph["targets"]),
                          dwell_s=float(ph["dwell_s"]))
            for ph in doc["waypoint_schedule"]
        )
    return ScenarioSpec(
        seed=int(doc["seed"]),
        clusters=tuple(ClusterSpec(center=tuple(c["center"]),
                                   radius_m=float(c["radius_m"]),
                                   ue_count=int(c["ue_count"]))
                       for c in doc["clusters"]),
        ue_positions=tuple(tuple(p) for p in doc["ue_positions"]),
        ue_speed_mps=float(doc.get("ue_speed_mps", 0.0)),
        waypoint_schedule=schedule,
        name=doc.get("name", ""),
    )


def load_manifest(path) -> ScenarioSpec:
    with open(path, encoding="utf-8") as fh:
        return scenario_from_dict(json.load(fh))


def make_dynamic_scenario(cycle: list[ScenarioSpec], dwell_s: float,
                          total_cycles: int, speed_mps: float = 14.0,
                          name: str = "") -> ScenarioSpec:
    """Chain the UE position sets of `cycle` into a waypoint schedule: dwell at
    the first set, walk to the next at `speed_mps`, and so on, for
    `total_cycles` rounds."""
    if not cycle:
        raise ValueError("cycle must contain at least one scenario")
    phases = []
    for _ in range(total_cycles):
        for spec in cycle:
            phases.append(WaypointPhase(targets=spec.ue_positions, dwell_s=dwell_s))
    base = cycle[0]
    return ScenarioSpec(seed=base.seed, clusters=base.clusters,
                        ue_positions=base.ue_positions,
                        ue_speed_mps=speed_mps,
                        waypoint_schedule=tuple(phases),
                        name=name or "dynamic")
