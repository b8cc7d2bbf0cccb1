"""Batch-assembly makespan under long-tailed rollout latencies.

Two strategies are compared on an infinitely parallel worker pool where every
task starts at t=0:

* group-based: ``groups_launched`` groups of ``G`` tasks run in parallel; a
  group is usable only once its slowest member finishes, and the batch closes
  when the ``groups_needed``-th group completes;
* group-free: ``pool`` independent tasks run in parallel and the batch closes
  as soon as the fastest ``take`` have finished; the rest are cancelled.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Any, Sequence

import numpy as np


@dataclass(frozen=True)
class LatencyModel:
    kind: str = "lognormal"
    # fixed_list: values (cycled); lognormal: mu, sigma of log-latency; uniform: low, high
    values: tuple[float, ...] = ()
    mu: float = 0.0
    sigma: float = 1.0
    low: float = 0.0
    high: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.kind == "fixed_list":
            if not self.values or min(self.values) <= 0:
                raise ValueError("fixed_list latencies must be a non-empty list of positive values")
        elif self.kind == "lognormal":
            if self.sigma < 0:
                raise ValueError(f"lognormal sigma must be non-negative, got {self.sigma}")
        elif self.kind == "uniform":
            if not 0 < self.low <= self.high:
                raise ValueError(f"uniform latency bounds must satisfy 0 < low <= high")
        else:
            raise ValueError(f"unknown latency model {self.kind!r}")

    @classmethod
    def from_dict(cls, doc: dict[str, Any]) -> "LatencyModel":
        doc = dict(doc)
        if "values" in doc:
            doc["values"] = tuple(float(v) for v in doc["values"])
        return cls(**doc)

    def to_dict(self) -> dict[str, Any]:
        out: dict[str, Any] = {"kind": self.kind, "seed": self.seed}
        if self.kind == "fixed_list":
            out["values"] = list(self.values)
        elif self.kind == "lognormal":
            out.update(mu=self.mu, sigma=self.sigma)
        else:
            out.update(low=self.low, high=self.high)
        return out

    def draw(self, n: int, rng: np.random.Generator | None = None) -> np.ndarray:
        if self.kind == "fixed_list":
            return np.resize(np.asarray(self.values, dtype=float), n)
        rng = rng if rng is not None else np.random.default_rng(self.seed)
        if self.kind == "lognormal":
            return np.exp(self.mu + self.sigma * rng.standard_normal(n))
        return rng.uniform(self.low, self.high, size=n)


def fit_lognormal(median: float, threshold: float, tail_prob: float) -> tuple[float, float]:
    """(mu, sigma) with the given median and ``P(latency > threshold) = tail_prob``."""
    from statistics import NormalDist

    z = NormalDist().inv_cdf(1.0 - tail_prob)
    return math.log(median), math.log(threshold / median) / z


@dataclass(frozen=True)
class RolloutTask:
    task_id: int
    latency: float
    group_id: int | None = None
    start: float = 0.0

    @property
    def completion(self) -> float:
        return self.start + self.latency


@dataclass
class ScenarioReport:
    strategy: str
    batch_target: int
    tasks_launched: int
    makespan: float
    wasted: float
    wasted_exclusive: float
    speedup: float | None = None
    used_tasks: list[int] = field(default_factory=list)


def group_batch_makespan(
    latencies: Sequence[Sequence[float]],
    groups_needed: int,
    groups_launched: int | None = None,
) -> ScenarioReport:
    """Makespan when a batch needs ``groups_needed`` complete groups.

    ``wasted`` counts the work of unused groups up to batch close plus the time
    fast members of used groups sit idle waiting for their slowest sibling;
    ``wasted_exclusive`` drops the idle-wait part.
    """
    groups = [np.asarray(g, dtype=float) for g in latencies]
    launched = len(groups) if groups_launched is None else groups_launched
    if launched != len(groups):
        raise ValueError(f"groups_launched={launched} but {len(groups)} latency groups given")
    if not 1 <= groups_needed <= launched:
        raise ValueError(f"need 1 <= groups_needed <= groups_launched, got {groups_needed}/{launched}")
    if any(g.size == 0 for g in groups):
        raise ValueError("empty group")
    if len({g.size for g in groups}) != 1:
        raise ValueError("all groups must have the same size")
    if any(np.any(g <= 0) for g in groups):
        raise ValueError("latencies must be positive")

    done = np.array([g.max() for g in groups])
    order = np.argsort(done, kind="stable")
    used, unused = order[:groups_needed], order[groups_needed:]
    makespan = float(done[used[-1]])
    unused_work = float(sum(np.minimum(groups[i], makespan).sum() for i in unused))
    idle = float(sum((done[i] - groups[i]).sum() for i in used))
    size = groups[0].size
    return ScenarioReport(
        "group",
        groups_needed * size,
        launched * size,
        makespan,
        unused_work + idle,
        unused_work,
        used_tasks=[int(i) * size + j for i in sorted(used) for j in range(size)],
    )


def groupfree_batch_makespan(latencies: Sequence[float], take: int) -> ScenarioReport:
    """Makespan when the batch takes the first ``take`` finishers of a pool."""
    lat = np.asarray(latencies, dtype=float)
    if not 1 <= take <= lat.size:
        raise ValueError(f"cannot take {take} tasks from a pool of {lat.size}")
    if np.any(lat <= 0):
        raise ValueError("latencies must be positive")
    order = np.argsort(lat, kind="stable")
    makespan = float(lat[order[take - 1]])
    wasted = float(np.minimum(lat[order[take:]], makespan).sum())
    return ScenarioReport(
        "groupfree", take, lat.size, makespan, wasted, wasted, used_tasks=sorted(int(i) for i in order[:take])
    )


@dataclass(frozen=True)
class ScenarioConfig:
    latency: LatencyModel = LatencyModel()
    group_size: int = 8
    groups_launched: int = 6
    groups_needed: int = 3
    pool: int = 48
    take: int = 24
    seed: int = 0

    def __post_init__(self):
        if self.group_size < 1:
            raise ValueError("group_size must be positive")
        if not 1 <= self.groups_needed <= self.groups_launched:
            raise ValueError("need 1 <= groups_needed <= groups_launched")
        if not 1 <= self.take <= self.pool:
            raise ValueError(f"cannot take {self.take} tasks from a pool of {self.pool}")

    @classmethod
    def from_dict(cls, doc: dict[str, Any]) -> "ScenarioConfig":
        doc = dict(doc)
        latency = LatencyModel.from_dict(doc.pop("latency", {}))
        return cls(latency=latency, **doc)

    def to_dict(self) -> dict[str, Any]:
        return {
            "latency": self.latency.to_dict(),
            "group_size": self.group_size,
            "groups_launched": self.groups_launched,
            "groups_needed": self.groups_needed,
            "pool": self.pool,
            "take": self.take,
            "seed": self.seed,
        }


@dataclass
class ScenarioResult:
    group: ScenarioReport
    groupfree: ScenarioReport

    @property
    def speedup(self) -> float:
        return self.group.makespan / self.groupfree.makespan


def run_scenario(config: ScenarioConfig, rng: np.random.Generator | None = None) -> ScenarioResult:
    """Run both strategies on one latency draw.

    The two strategies share common random numbers: one stream of
    ``max(pool, groups_launched * G)`` latencies is drawn, the groups
    partition its head and the group-free pool is its first ``pool`` entries.
    """
    rng = rng if rng is not None else np.random.default_rng(config.seed)
    n_group = config.groups_launched * config.group_size
    lat = config.latency.draw(max(n_group, config.pool), rng)
    groups = lat[:n_group].reshape(config.groups_launched, config.group_size)
    group = group_batch_makespan(groups, config.groups_needed, config.groups_launched)
    free = groupfree_batch_makespan(lat[: config.pool], config.take)
    result = ScenarioResult(group, free)
    group.speedup = 1.0
    free.speedup = result.speedup
    return result


def replicate(config: ScenarioConfig, replications: int) -> list[ScenarioResult]:
    """Independent replications, stream ``i`` seeded by ``(config.seed, i)``."""
    out = []
    for i in range(replications):
        rng = np.random.default_rng(np.random.SeedSequence(config.seed, spawn_key=(i,)))
        out.append(run_scenario(config, rng))
    return out


def with_sigma(config: ScenarioConfig, sigma: float) -> ScenarioConfig:
    return replace(config, latency=replace(config.latency, sigma=sigma))
