"""Offline black-box optimization over small parameter spaces.

Contains a sequential Parzen-estimator sampler (split the history into good
and bad trials, fit a truncated kernel mixture to each, draw candidates from
the good-side density and keep the one maximizing the density ratio), plus
grid and random baselines that do not learn from history. Maximization
convention throughout.
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field
from typing import Any

import numpy as np
from scipy.special import logsumexp, ndtr, ndtri

UNIFORM = "uniform"
LOGUNIFORM = "loguniform"
CATEGORICAL = "categorical"

SPACE_FORMAT_VERSION = 1


@dataclass(frozen=True)
class ParamDomain:
    name: str
    kind: str
    low: float = math.nan
    high: float = math.nan
    choices: tuple = ()

    def __post_init__(self):
        if self.kind in (UNIFORM, LOGUNIFORM):
            if not self.low < self.high:
                raise ValueError(f"{self.name}: need low < high")
            if self.kind == LOGUNIFORM and self.low <= 0:
                raise ValueError(f"{self.name}: log-uniform needs low > 0")
        elif self.kind == CATEGORICAL:
            if not self.choices:
                raise ValueError(f"{self.name}: choices must be non-empty")
            if len(set(self.choices)) != len(self.choices):
                raise ValueError(f"{self.name}: choices must be distinct")
        else:
            raise ValueError(f"{self.name}: unknown kind {self.kind!r}")

    @classmethod
    def uniform(cls, name, low, high):
        return cls(name, UNIFORM, low=float(low), high=float(high))

    @classmethod
    def loguniform(cls, name, low, high):
        return cls(name, LOGUNIFORM, low=float(low), high=float(high))

    @classmethod
    def categorical(cls, name, choices):
        return cls(name, CATEGORICAL, choices=tuple(choices))

    def sample(self, rng: np.random.Generator):
        if self.kind == UNIFORM:
            return float(rng.uniform(self.low, self.high))
        if self.kind == LOGUNIFORM:
            return float(math.exp(rng.uniform(math.log(self.low),
                                              math.log(self.high))))
        return self.choices[int(rng.integers(len(self.choices)))]

    def contains(self, value) -> bool:
        if self.kind == CATEGORICAL:
            return value in self.choices
        return self.low <= value <= self.high


@dataclass(frozen=True)
class Condition:
    """A conditional parameter is only active when `param` equals `equals`."""

    param: str
    equals: Any


@dataclass
class SearchSpace:
    domains: list[ParamDomain]
    conditions: dict[str, Condition] = field(default_factory=dict)

    def active(self, name: str, assignment: dict) -> bool:
        cond = self.conditions.get(name)
        return cond is None or assignment.get(cond.param) == cond.equals


@dataclass
class TpeConfig:
    n_startup: int = 10
    n_candidates: int = 24
    gamma_frac: float = 0.1
    gamma_max: int = 25
    bandwidth_floor_frac: float = 0.01
    categorical_smoothing: float = 1.0

    def gamma(self, n: int) -> int:
        g = min(math.ceil(self.gamma_frac * n), self.gamma_max)
        return max(1, min(g, n - 1)) if n >= 2 else 1


DEFAULT_TPE = TpeConfig()


class _TruncatedMixture:
    """Parzen mixture on [lo, hi]: one truncated Gaussian per observation with
    bandwidth set by neighbor spacing (domain edges count as neighbors,
    floored at a fraction of the span), plus one span-wide prior component."""

    def __init__(self, lo: float, hi: float, obs, floor_frac: float):
        span = hi - lo
        obs = np.sort(np.clip(np.asarray(obs, dtype=float), lo, hi))
        left = np.concatenate([[lo], obs[:-1]])
        right = np.concatenate([obs[1:], [hi]])
        widths = np.maximum(obs - left, right - obs)
        widths = np.clip(widths, floor_frac * span, span)
        self.lo, self.hi = lo, hi
        self.mus = np.concatenate([obs, [(lo + hi) / 2.0]])
        self.sigmas = np.concatenate([widths, [span]])
        self._a = (lo - self.mus) / self.sigmas
        self._b = (hi - self.mus) / self.sigmas
        self._log_mass = np.log(ndtr(self._b) - ndtr(self._a))
        self._log_weight = -math.log(len(self.mus))

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        comp = rng.integers(len(self.mus), size=n)
        lo_u = ndtr(self._a[comp])
        hi_u = ndtr(self._b[comp])
        u = rng.uniform(lo_u, hi_u)
        x = self.mus[comp] + self.sigmas[comp] * ndtri(u)
        return np.clip(x, self.lo, self.hi)

    def logpdf(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)[:, None]
        z = (x - self.mus[None, :]) / self.sigmas[None, :]
        log_norm = -0.5 * z ** 2 - 0.5 * math.log(2 * math.pi) \
            - np.log(self.sigmas[None, :])
        comp = log_norm - self._log_mass[None, :] + self._log_weight
        return logsumexp(comp, axis=1)


def _smoothed_weights(values, choices, smoothing: float) -> np.ndarray:
    counts = np.array([sum(1 for v in values if v == c) for c in choices],
                      dtype=float)
    w = counts + smoothing
    return w / w.sum()


def _suggest_numeric(domain: ParamDomain, good, rest, cfg: TpeConfig,
                     rng: np.random.Generator):
    if domain.kind == LOGUNIFORM:
        lo, hi = math.log(domain.low), math.log(domain.high)
        good = np.log(good) if len(good) else good
        rest = np.log(rest) if len(rest) else rest
    else:
        lo, hi = domain.low, domain.high
    l_mix = _TruncatedMixture(lo, hi, good, cfg.bandwidth_floor_frac)
    g_mix = _TruncatedMixture(lo, hi, rest, cfg.bandwidth_floor_frac)
    cands = l_mix.sample(rng, cfg.n_candidates)
    score = l_mix.logpdf(cands) - g_mix.logpdf(cands)
    best = cands[int(np.argmax(score))]
    if domain.kind == LOGUNIFORM:
        best = math.exp(best)
    return float(min(max(best, domain.low), domain.high))


def _suggest_categorical(domain: ParamDomain, good, rest, cfg: TpeConfig,
                         rng: np.random.Generator):
    wl = _smoothed_weights(good, domain.choices, cfg.categorical_smoothing)
    wg = _smoothed_weights(rest, domain.choices, cfg.categorical_smoothing)
    cands = rng.choice(len(domain.choices), size=cfg.n_candidates, p=wl)
    score = np.log(wl[cands]) - np.log(wg[cands])
    return domain.choices[int(cands[int(np.argmax(score))])]


def _split_history(history, cfg: TpeConfig):
    order = sorted(history, key=lambda t: (-t.score, t.trial_id))
    n_good = cfg.gamma(len(order))
    return order[:n_good], order[n_good:]


def suggest(space, history, cfg: TpeConfig = DEFAULT_TPE,
            rng_seed: int = 0) -> dict:
    """Propose the next parameter assignment.

    `space` is a list of ParamDomain or a SearchSpace (whose conditional
    parameters are only suggested when their branch is active). With fewer
    than n_startup completed trials every parameter is drawn from its prior;
    afterwards each parameter is fit independently on the trials that carry
    it. Pure function of (space, history, seed).
    """
    if isinstance(space, SearchSpace):
        domains, conditions = space.domains, space
    else:
        domains, conditions = list(space), None
    if not domains:
        raise ValueError("empty parameter space")
    for t in history:
        if t.state != "complete":
            raise ValueError("history must contain only completed trials")

    rng = np.random.default_rng(rng_seed)
    startup = len(history) < cfg.n_startup
    good = rest = None
    if not startup:
        good, rest = _split_history(history, cfg)

    assignment: dict = {}
    for domain in domains:
        if conditions is not None and not conditions.active(domain.name,
                                                            assignment):
            continue
        if startup:
            assignment[domain.name] = domain.sample(rng)
            continue
        gvals = [t.params[domain.name] for t in good if domain.name in t.params]
        rvals = [t.params[domain.name] for t in rest if domain.name in t.params]
        if domain.kind == CATEGORICAL:
            assignment[domain.name] = _suggest_categorical(
                domain, gvals, rvals, cfg, rng)
        else:
            assignment[domain.name] = _suggest_numeric(
                domain, np.asarray(gvals, dtype=float),
                np.asarray(rvals, dtype=float), cfg, rng)
    return assignment


def grid(domains, levels: dict[str, list]) -> list[dict]:
    """Full Cartesian product of the per-domain level lists, lexicographic in
    domain order (leftmost varies slowest)."""
    names = [d.name for d in domains]
    by_name = {d.name: d for d in domains}
    for name, vals in levels.items():
        dom = by_name.get(name)
        if dom is None:
            raise ValueError(f"levels given for unknown parameter {name!r}")
        for v in vals:
            if not dom.contains(v):
                raise ValueError(f"{name}: level {v!r} outside the domain")
    axes = [levels[name] for name in names]
    return [dict(zip(names, combo)) for combo in itertools.product(*axes)]


def random_sample(domains, n: int, rng_seed: int = 0) -> list[dict]:
    """n i.i.d. draws from the joint prior; deterministic under the seed."""
    if n < 0:
        raise ValueError("n must be non-negative")
    rng = np.random.default_rng(rng_seed)
    return [{d.name: d.sample(rng) for d in domains} for _ in range(n)]


# -- space definition files -------------------------------------------------


def _domain_to_dict(domain: ParamDomain, cond: Condition | None) -> dict:
    doc: dict = {"name": domain.name, "kind": domain.kind}
    if domain.kind == CATEGORICAL:
        doc["choices"] = list(domain.choices)
    else:
        doc["low"] = domain.low
        doc["high"] = domain.high
    if cond is not None:
        doc["when"] = {"param": cond.param, "equals": cond.equals}
    return doc


def save_space(space: SearchSpace, path) -> None:
    doc = {
        "format_version": SPACE_FORMAT_VERSION,
        "kind": "search_space",
        "params": [_domain_to_dict(d, space.conditions.get(d.name))
                   for d in space.domains],
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2)
        fh.write("\n")


def load_space(path) -> SearchSpace:
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    if doc.get("kind") != "search_space":
        raise ValueError("not a search-space file")
    if doc.get("format_version") != SPACE_FORMAT_VERSION:
        raise ValueError(f"unsupported space version {doc.get('format_version')}")
    domains = []
    conditions = {}
    for p in doc["params"]:
        if p["kind"] == CATEGORICAL:
            choices = [tuple(c) if isinstance(c, list) else c
                       for c in p["choices"]]
            domains.append(ParamDomain.categorical(p["name"], choices))
        elif p["kind"] == UNIFORM:
            domains.append(ParamDomain.uniform(p["name"], p["low"], p["high"]))
        elif p["kind"] == LOGUNIFORM:
            domains.append(ParamDomain.loguniform(p["name"], p["low"], p["high"]))
        else:
            raise ValueError(f"unknown kind {p['kind']!r}")
        if "when" in p:
            conditions[p["name"]] = Condition(p["when"]["param"],
                                              p["when"]["equals"])
    return SearchSpace(domains=domains, conditions=conditions)
