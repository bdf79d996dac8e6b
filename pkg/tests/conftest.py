import math
from pathlib import Path

import numpy as np
import pytest

from ranbench.ransim import ScenarioSpec, enb_layout, load_manifest

REPO_ROOT = Path(__file__).resolve().parents[1]
SCENARIO_DIR = REPO_ROOT / "scenarios"


@pytest.fixture(scope="session")
def scenario_dir() -> Path:
    return SCENARIO_DIR


@pytest.fixture(scope="session")
def ts_scenarios() -> list[ScenarioSpec]:
    """The six committed benchmark scenarios."""
    return [load_manifest(SCENARIO_DIR / f"ts{k}.json") for k in range(1, 7)]


@pytest.fixture(scope="session")
def ts1(ts_scenarios) -> ScenarioSpec:
    return ts_scenarios[0]


def make_scenario(ue_positions, name="crafted", speed=0.0, schedule=None,
                  seed=0) -> ScenarioSpec:
    """Hand-placed UE layout for controlled geometry tests."""
    positions = tuple(tuple(float(c) for c in p) for p in ue_positions)
    return ScenarioSpec(seed=seed, clusters=(), ue_positions=positions,
                        ue_speed_mps=speed, waypoint_schedule=schedule,
                        name=name)


def three_group_positions(offset_m: float = 40.0) -> list[tuple[float, float]]:
    """Twelve UEs near the centroid, four nudged toward each eNB: equal powers
    attach them 4/4/4 while a strong power skew pulls everyone to one cell."""
    pos, _ = enb_layout()
    out = []
    for b in range(3):
        direction = pos[b] / np.hypot(*pos[b])
        for k in range(4):
            jitter = np.array([math.cos(2.1 * k + b), math.sin(1.7 * k - b)])
            out.append(tuple(direction * offset_m + 3.0 * jitter))
    return out


@pytest.fixture
def three_group_scenario() -> ScenarioSpec:
    return make_scenario(three_group_positions(), name="three-groups")
