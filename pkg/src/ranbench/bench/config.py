"""Bundled run configuration, overridable section-by-section from a JSON file.

Sections: "score" (experience metric), "env" (environment settings except the
scenario), "tpe" (sampler), "hyperparams" (agent training), "arch" (network),
"radio" (propagation/handover constants).
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field

from ..optimizer import TpeConfig
from ..ransim import RadioParams
from ..rlagent import HyperParams, PolicyArch
from ..scoring import ScoreParams


@dataclass
class EnvSettings:
    """EnvConfig fields minus the scenario (bound at run time)."""

    history_len: int = 16
    rsrq_quantiles: int = 1
    step_size_dbm: float = 0.3
    randomize_init: bool = True
    train_duration_ms: int = 10000
    oob_means_gameover: bool = True
    oob_penalty_factor: float = 1.0
    interaction_interval_ms: int = 100
    warmup_ms: int = 4000

    def as_kwargs(self) -> dict:
        return dataclasses.asdict(self)


@dataclass
class BenchConfig:
    score: ScoreParams = field(default_factory=ScoreParams)
    env: EnvSettings = field(default_factory=EnvSettings)
    tpe: TpeConfig = field(default_factory=TpeConfig)
    hyperparams: HyperParams = field(default_factory=HyperParams)
    arch: PolicyArch = field(default_factory=PolicyArch)
    radio: RadioParams = field(default_factory=RadioParams)


_SECTIONS = {
    "score": ScoreParams,
    "env": EnvSettings,
    "tpe": TpeConfig,
    "hyperparams": HyperParams,
    "arch": PolicyArch,
    "radio": RadioParams,
}


def load_bench_config(path=None) -> BenchConfig:
    if path is None:
        return BenchConfig()
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    unknown = set(doc) - set(_SECTIONS)
    if unknown:
        raise ValueError(f"unknown config sections: {sorted(unknown)}")
    kwargs = {}
    for section, cls in _SECTIONS.items():
        overrides = doc.get(section, {})
        names = {f.name for f in dataclasses.fields(cls)}
        bad = set(overrides) - names
        if bad:
            raise ValueError(f"unknown keys in [{section}]: {sorted(bad)}")
        kwargs[section] = cls(**overrides)
    return BenchConfig(**kwargs)
