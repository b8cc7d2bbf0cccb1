"""KL-adaptive Beta-posterior value tracker.

Each prompt keeps a Beta(alpha, beta) posterior over its success probability.
Before a new binary outcome is folded in, both pseudo-counts are discounted by
a forgetting factor driven by how far the policy has moved since the prompt
was last acted on.  For non-binary rewards the same recursion is run directly
on the value estimate as an adaptive EMA.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Any, Hashable, Iterable, Sequence

SCHEMA_VERSION = 1


class SnapshotError(ValueError):
    """Raised when a tracker snapshot cannot be parsed."""


@dataclass(frozen=True)
class TrackerParams:
    d_half: float = 0.1
    rho_min: float = 0.875
    rho_max: float = 0.96

    def __post_init__(self):
        if not self.d_half > 0:
            raise ValueError(f"d_half must be positive, got {self.d_half}")
        if not 0 < self.rho_min < self.rho_max <= 1:
            raise ValueError(
                f"need 0 < rho_min < rho_max <= 1, got ({self.rho_min}, {self.rho_max})"
            )

    @property
    def n0(self) -> float:
        """Equilibrium effective sample size under constant rho_min."""
        return 1.0 / (1.0 - self.rho_min)


@dataclass(frozen=True)
class TrackerState:
    alpha: float
    beta: float
    last_acted_version: int = 0
    prompt_id: Hashable = None

    def __post_init__(self):
        if self.alpha < 0 or self.beta < 0 or not self.alpha + self.beta > 0:
            raise ValueError(f"invalid Beta parameters ({self.alpha}, {self.beta})")

    def value(self) -> float:
        return self.alpha / (self.alpha + self.beta)

    @property
    def n_eff(self) -> float:
        return self.alpha + self.beta


def forgetting_factor(d: float, params: TrackerParams) -> float:
    """Discount ``clamp(2 ** (-d / d_half), rho_min, rho_max)`` for a KL of ``d`` nats."""
    if d < 0 or math.isnan(d):
        raise ValueError(f"KL divergence must be non-negative, got {d}")
    rho = 2.0 ** (-d / params.d_half)
    return min(max(rho, params.rho_min), params.rho_max)


def update_binary(state: TrackerState, r: int, rho: float) -> TrackerState:
    if r not in (0, 1):
        raise ValueError(f"binary update needs r in {{0, 1}}, got {r!r}; use update_general")
    if not 0 < rho <= 1:
        raise ValueError(f"rho must lie in (0, 1], got {rho}")
    return TrackerState(
        alpha=rho * state.alpha + r,
        beta=rho * state.beta + (1 - r),
        last_acted_version=state.last_acted_version,
        prompt_id=state.prompt_id,
    )


def update_general(v_prev: float, n_eff_prev: float, r: float, rho: float) -> tuple[float, float]:
    """One step of the adaptive EMA; returns ``(v, n_eff)``.

    With ``n_eff_prev = alpha + beta`` this reproduces :func:`update_binary`
    exactly for binary rewards.
    """
    if not n_eff_prev > 0:
        raise ValueError(f"n_eff_prev must be positive, got {n_eff_prev}")
    n_eff = rho * n_eff_prev + 1.0
    eta = 1.0 / n_eff
    return v_prev + eta * (r - v_prev), n_eff


def prior_state(params: TrackerParams, prompt_id: Hashable = None, version: int = 0) -> TrackerState:
    """Uniform v=0.5 carrying the equilibrium mass, for prompts with no init data."""
    n0 = params.n0
    return TrackerState(0.5 * n0, 0.5 * n0, version, prompt_id)


def init_from_samples(
    successes: int,
    n0: int,
    params: TrackerParams,
    prompt_id: Hashable = None,
    version: int = 0,
) -> TrackerState:
    if n0 < 1:
        raise ValueError(f"need at least one initial sample, got n0={n0}")
    if not 0 <= successes <= n0:
        raise ValueError(f"successes={successes} outside [0, {n0}]")
    v0 = successes / n0
    mass = params.n0
    return TrackerState(mass * v0, mass * (1.0 - v0), version, prompt_id)


@dataclass
class ValueTracker:
    """Per-prompt collection of tracker states with KL-driven updates.

    ``general=True`` switches to the EMA recursion so rewards anywhere in
    [0, 1] are accepted; the state then stores ``alpha = v * n_eff`` and
    ``beta = (1 - v) * n_eff``, which keeps ``value()`` and ``n_eff`` intact.
    """

    params: TrackerParams
    states: list[TrackerState] = field(default_factory=list)
    general: bool = False

    @classmethod
    def uniform(cls, n_prompts: int, params: TrackerParams, **kw) -> "ValueTracker":
        return cls(params, [prior_state(params, i) for i in range(n_prompts)], **kw)

    def __len__(self) -> int:
        return len(self.states)

    def value(self, prompt: int) -> float:
        return self.states[prompt].value()

    def values(self) -> list[float]:
        return [s.value() for s in self.states]

    def observe(self, prompt: int, r: float, kl: float, version: int) -> float:
        """Fold in reward ``r`` after a policy shift of ``kl`` nats; returns the new value."""
        rho = forgetting_factor(kl, self.params)
        state = self.states[prompt]
        if self.general:
            if not 0.0 <= r <= 1.0:
                raise ValueError(f"general tracker expects rewards in [0, 1], got {r}")
            v, n = update_general(state.value(), state.n_eff, r, rho)
            new = TrackerState(v * n, (1.0 - v) * n, version, state.prompt_id)
        else:
            new = update_binary(state, int(r), rho)
            new = TrackerState(new.alpha, new.beta, version, state.prompt_id)
        self.states[prompt] = new
        return new.value()


def snapshot(states: Iterable[TrackerState]) -> bytes:
    """Serialize states as versioned JSON (``repr`` floats round-trip exactly)."""
    doc = {
        "schema_version": SCHEMA_VERSION,
        "prompts": [
            {
                "id": s.prompt_id,
                "alpha": s.alpha,
                "beta": s.beta,
                "last_acted_version": s.last_acted_version,
            }
            for s in states
        ],
    }
    return (json.dumps(doc, indent=1) + "\n").encode()


def _field(entry: dict, key: str, kind: type | tuple[type, ...], i: int) -> Any:
    if key not in entry:
        raise SnapshotError(f"prompts[{i}]: missing field '{key}'")
    value = entry[key]
    if isinstance(value, bool) or not isinstance(value, kind):
        raise SnapshotError(f"prompts[{i}].{key}: bad value {value!r}")
    return value


def restore(data: bytes | str) -> list[TrackerState]:
    try:
        doc = json.loads(data)
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise SnapshotError(f"snapshot is not valid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise SnapshotError("snapshot root must be an object")
    if "schema_version" not in doc:
        raise SnapshotError("missing field 'schema_version'")
    if doc["schema_version"] != SCHEMA_VERSION:
        raise SnapshotError(
            f"schema_version: expected {SCHEMA_VERSION}, got {doc['schema_version']!r}"
        )
    prompts = doc.get("prompts")
    if not isinstance(prompts, list):
        raise SnapshotError("field 'prompts' must be a list")
    out = []
    for i, entry in enumerate(prompts):
        if not isinstance(entry, dict):
            raise SnapshotError(f"prompts[{i}]: expected an object")
        if "id" not in entry:
            raise SnapshotError(f"prompts[{i}]: missing field 'id'")
        alpha = float(_field(entry, "alpha", (int, float), i))
        beta = float(_field(entry, "beta", (int, float), i))
        version = _field(entry, "last_acted_version", int, i)
        try:
            out.append(TrackerState(alpha, beta, version, entry["id"]))
        except ValueError as exc:
            raise SnapshotError(f"prompts[{i}]: {exc}") from exc
    return out


def save_snapshot(path, states: Sequence[TrackerState]) -> None:
    with open(path, "wb") as f:
        f.write(snapshot(states))


def load_snapshot(path) -> list[TrackerState]:
    with open(path, "rb") as f:
        return restore(f.read())
