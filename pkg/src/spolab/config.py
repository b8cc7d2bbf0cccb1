"""Run configuration, fixture lookup and seed streams."""
from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, field, fields
from importlib import resources
from pathlib import Path
from typing import Any

import numpy as np

from .envbed import BernoulliEnv, env_from_dict
from .optimizer import ClipParams
from .sampler import SamplerParams
from .schedsim import LatencyModel
from .tracker import TrackerParams

ALGORITHMS = (
    "spo",
    "grpo",
    "rloo",
    "spo_no_baseline",
    "spo_no_init",
    "spo_uniform_sampling",
    "bspo",
)
GROUP_ALGORITHMS = ("grpo", "rloo")

# Named rng streams; stream k of master seed s is SeedSequence(s, spawn_key=(k,)).
# New streams get new indices so existing ones never shift.
STREAMS = {"init": 0, "sampler": 1, "policy": 2, "reward": 3, "optim": 4, "latency": 5}


class ConfigError(ValueError):
    pass


def stream(seed: int, name: str) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(STREAMS[name],)))


def fixture_root() -> Path:
    override = os.environ.get("SPOLAB_FIXTURES")
    if override:
        return Path(override)
    return Path(str(resources.files("spolab") / "fixtures"))


def resolve_path(ref: str, base: Path | None = None) -> Path:
    """Find a fixture: as given, next to ``base``, then in the fixture root."""
    candidates = [Path(ref)]
    if base is not None:
        candidates.append(base / ref)
    root = fixture_root()
    candidates += [root / ref, root / f"{ref}.json"]
    for c in candidates:
        if c.is_file():
            return c
    raise ConfigError(f"fixture not found: {ref!r} (searched {', '.join(map(str, candidates))})")


def load_json(path: str | Path) -> Any:
    try:
        with open(path) as f:
            return json.load(f)
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc.strerror}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from exc


def _build(cls, doc: dict[str, Any] | None, section: str):
    doc = dict(doc or {})
    names = {f.name for f in fields(cls)}
    unknown = set(doc) - names
    if unknown:
        raise ConfigError(f"unknown keys in '{section}': {sorted(unknown)}")
    try:
        return cls(**doc)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{section}: {exc}") from exc


def _tuple_values(doc: dict[str, Any] | None) -> dict[str, Any] | None:
    if doc and "values" in doc:
        doc = {**doc, "values": tuple(doc["values"])}
    return doc


# config files spell the optimizer keys the short way
_OPTIM_ALIASES = {"lr": "learning_rate", "minibatch": "minibatch_size"}


@dataclass
class RunConfig:
    algorithm: str = "spo"
    batch_size: int = 256
    group_size: int = 8
    iterations: int = 300
    n0: int = 8
    repeat: int = 1
    oversample: float = 0.0
    seed: int = 0
    freeze_policy: bool = False
    tracker: TrackerParams = field(default_factory=TrackerParams)
    optim: ClipParams = field(default_factory=ClipParams)
    sampler: SamplerParams = field(default_factory=SamplerParams)
    latency: LatencyModel = field(default_factory=LatencyModel)
    env_doc: dict[str, Any] = field(default_factory=lambda: {"M": 16, "K": 4})
    tracker_init: str | None = None
    _env: BernoulliEnv | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        self.validate()

    @property
    def env(self) -> BernoulliEnv:
        if self._env is None:
            self._env = env_from_dict(self.env_doc)
        return self._env

    def validate(self) -> None:
        if self.algorithm not in ALGORITHMS:
            raise ConfigError(f"unknown algorithm {self.algorithm!r}; choose from {ALGORITHMS}")
        if self.iterations < 0:
            raise ConfigError("iterations must be non-negative")
        if self.n0 < 1:
            raise ConfigError("n0 must be at least 1")
        if self.algorithm in GROUP_ALGORITHMS:
            if self.group_size < 2:
                raise ConfigError(f"{self.algorithm} needs group_size >= 2")
            if self.batch_size % self.group_size:
                raise ConfigError(
                    f"batch_size {self.batch_size} is not divisible by group_size {self.group_size}"
                )
        else:
            if self.batch_size < 2:
                raise ConfigError("single-stream modes need batch_size >= 2")
            if self.repeat < 1 or self.oversample < 0:
                raise ConfigError("repeat must be >= 1 and oversample >= 0")
            if self.algorithm == "bspo" and self.batch_size % self.repeat:
                raise ConfigError(f"batch_size {self.batch_size} is not divisible by repeat {self.repeat}")
            if self.algorithm != "bspo" and (self.repeat != 1 or self.oversample):
                raise ConfigError("repeat/oversample only apply to bspo")

    @classmethod
    def from_dict(cls, doc: dict[str, Any], base: Path | None = None) -> "RunConfig":
        doc = dict(doc)
        env = doc.pop("env", None)
        if isinstance(env, str):
            env_doc = load_json(resolve_path(env, base))
        elif isinstance(env, dict):
            env_doc = env
        elif env is None:
            env_doc = {"M": 16, "K": 4}
        else:
            raise ConfigError("'env' must be a fixture name, path or inline object")
        optim = {_OPTIM_ALIASES.get(k, k): v for k, v in (doc.pop("optim", None) or {}).items()}
        kw = dict(
            tracker=_build(TrackerParams, doc.pop("tracker", None), "tracker"),
            optim=_build(ClipParams, optim, "optim"),
            sampler=_build(SamplerParams, doc.pop("sampler", None), "sampler"),
            latency=_build(LatencyModel, _tuple_values(doc.pop("latency", None)), "latency"),
            env_doc=env_doc,
        )
        top = {f.name for f in fields(cls)} - set(kw) - {"_env"}
        unknown = set(doc) - top
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        try:
            return cls(**doc, **kw)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc

    @classmethod
    def load(cls, path: str | Path) -> "RunConfig":
        path = Path(path)
        return cls.from_dict(load_json(path), base=path.parent)

    def to_dict(self) -> dict[str, Any]:
        """Self-contained form: the environment is inlined, so it re-runs anywhere."""
        optim = asdict(self.optim)
        optim["lr"] = optim.pop("learning_rate")
        optim["minibatch"] = optim.pop("minibatch_size")
        return {
            "algorithm": self.algorithm,
            "batch_size": self.batch_size,
            "group_size": self.group_size,
            "iterations": self.iterations,
            "n0": self.n0,
            "repeat": self.repeat,
            "oversample": self.oversample,
            "seed": self.seed,
            "freeze_policy": self.freeze_policy,
            "tracker": asdict(self.tracker),
            "optim": optim,
            "sampler": asdict(self.sampler),
            "latency": self.latency.to_dict(),
            "env": self.env_doc,
            "tracker_init": self.tracker_init,
        }
