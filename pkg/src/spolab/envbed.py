"""Synthetic verifiable-reward environments and a tabular softmax policy.

A prompt is a row index, a response is one of ``K`` atomic actions and the
reward is Bernoulli(q[prompt, action]).  Because everything is tabular, the
value function, the expected reward J, its exact gradient and per-prompt KL
divergences are all available in closed form.  These are the oracles the
training loop is checked against.
"""
from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Any

import numpy as np


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def log_softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


@dataclass
class PolicyTable:
    logits: np.ndarray
    version: int = 0

    def __post_init__(self):
        self.logits = np.array(self.logits, dtype=float)
        if self.logits.ndim != 2:
            raise ValueError(f"logits must be (prompts, actions), got shape {self.logits.shape}")

    @classmethod
    def uniform(cls, n_prompts: int, n_actions: int) -> "PolicyTable":
        return cls(np.zeros((n_prompts, n_actions)))

    @property
    def n_prompts(self) -> int:
        return self.logits.shape[0]

    @property
    def n_actions(self) -> int:
        return self.logits.shape[1]

    def probs(self, prompt: int | None = None) -> np.ndarray:
        return softmax(self.logits if prompt is None else self.logits[prompt])

    def log_probs(self, prompt: int | None = None) -> np.ndarray:
        return log_softmax(self.logits if prompt is None else self.logits[prompt])

    def copy(self) -> "PolicyTable":
        return PolicyTable(self.logits.copy(), self.version)


@dataclass(frozen=True)
class DriftSpec:
    """Sinusoidal additive perturbation of q, one random phase per cell."""

    amplitude: float
    period: float
    seed: int = 0

    def offset(self, shape: tuple[int, int], iteration: int) -> np.ndarray:
        phase = np.random.default_rng(self.seed).uniform(0.0, 2 * math.pi, size=shape)
        return self.amplitude * np.sin(2 * math.pi * iteration / self.period + phase)


@dataclass
class BernoulliEnv:
    q: np.ndarray
    drift: DriftSpec | None = None
    prompt_probs: np.ndarray | None = None
    name: str = ""

    def __post_init__(self):
        self.q = np.array(self.q, dtype=float)
        if self.q.ndim != 2:
            raise ValueError(f"q must be (prompts, actions), got shape {self.q.shape}")
        if np.any((self.q < 0) | (self.q > 1)):
            raise ValueError("success probabilities must lie in [0, 1]")
        if self.prompt_probs is not None:
            self.prompt_probs = np.asarray(self.prompt_probs, dtype=float)

    @property
    def n_prompts(self) -> int:
        return self.q.shape[0]

    @property
    def n_actions(self) -> int:
        return self.q.shape[1]

    @property
    def prompt_distribution(self) -> np.ndarray:
        if self.prompt_probs is None:
            return np.full(self.n_prompts, 1.0 / self.n_prompts)
        return self.prompt_probs

    def at(self, iteration: int) -> "BernoulliEnv":
        """The environment as seen at ``iteration`` (drift clamped into [0, 1])."""
        if self.drift is None:
            return self
        q = np.clip(self.q + self.drift.offset(self.q.shape, iteration), 0.0, 1.0)
        return BernoulliEnv(q, None, self.prompt_probs, self.name)

    def optimal_value(self) -> float:
        """J of the best deterministic policy: mean over prompts of max_a q."""
        return float(self.prompt_distribution @ self.q.max(axis=1))


def act_batch(
    policy: PolicyTable, prompts: np.ndarray, rng: np.random.Generator
) -> tuple[np.ndarray, np.ndarray]:
    """Sample one action per prompt by inverting the row CDFs with one uniform each."""
    prompts = np.asarray(prompts, dtype=np.int64)
    logp = policy.log_probs()[prompts]
    cdf = np.cumsum(np.exp(logp), axis=1)
    u = rng.random(prompts.size) * cdf[:, -1]
    actions = np.minimum((u[:, None] >= cdf).sum(axis=1), policy.n_actions - 1)
    return actions, logp[np.arange(prompts.size), actions]


def act(policy: PolicyTable, prompt: int, rng: np.random.Generator) -> tuple[int, float]:
    actions, logp = act_batch(policy, np.array([prompt]), rng)
    return int(actions[0]), float(logp[0])


def reward_batch(
    env: BernoulliEnv, prompts: np.ndarray, actions: np.ndarray, rng: np.random.Generator
) -> np.ndarray:
    return (rng.random(len(prompts)) < env.q[prompts, actions]).astype(np.int64)


def reward(env: BernoulliEnv, prompt: int, action: int, rng: np.random.Generator) -> int:
    return int(reward_batch(env, np.array([prompt]), np.array([action]), rng)[0])


def true_value(env: BernoulliEnv, policy: PolicyTable, prompt: int) -> float:
    return float(policy.probs(prompt) @ env.q[prompt])


def true_values(env: BernoulliEnv, policy: PolicyTable) -> np.ndarray:
    return np.einsum("xa,xa->x", policy.probs(), env.q)


def expected_reward(env: BernoulliEnv, policy: PolicyTable) -> float:
    return float(env.prompt_distribution @ true_values(env, policy))


def analytic_policy_gradient(env: BernoulliEnv, policy: PolicyTable) -> np.ndarray:
    """Exact dJ/dlogits: ``P(x) * pi(a|x) * (q[x, a] - V(x))``."""
    pi = policy.probs()
    v = np.einsum("xa,xa->x", pi, env.q)
    return env.prompt_distribution[:, None] * pi * (env.q - v[:, None])


def kl_rows(logits_a: np.ndarray, logits_b: np.ndarray) -> np.ndarray:
    """KL(softmax(a) || softmax(b)) along the last axis, in nats."""
    la, lb = log_softmax(logits_a), log_softmax(logits_b)
    kl = np.sum(np.exp(la) * (la - lb), axis=-1)
    return np.maximum(kl, 0.0)


def policy_kl(policy_a: PolicyTable, policy_b: PolicyTable, prompt: int) -> float:
    return float(kl_rows(policy_a.logits[prompt], policy_b.logits[prompt]))


# --- fixtures -------------------------------------------------------------


def easy_hard_mix(
    n_prompts: int = 512,
    n_actions: int = 4,
    seed: int = 0,
    low: float = 0.05,
    high: float = 0.95,
    q_min: float = 0.02,
    q_max: float = 0.98,
    skew: float = 0.5,
) -> np.ndarray:
    """q matrix whose uniform-policy success rates span ``[low, high]``.

    Prompt difficulty is drawn from Beta(skew, skew) rescaled into the span,
    so ``skew < 1`` piles prompts up near the easy and hard ends.  Each row
    spreads its actions around that difficulty without clipping, so the row
    mean (the uniform-policy value) is exactly the drawn difficulty.
    """
    rng = np.random.default_rng(seed)
    d = low + (high - low) * rng.beta(skew, skew, size=n_prompts)
    raw = rng.uniform(-1.0, 1.0, size=(n_prompts, n_actions))
    raw -= raw.mean(axis=1, keepdims=True)
    room = np.minimum(d - q_min, q_max - d)
    scale = room / np.abs(raw).max(axis=1)
    return d[:, None] + scale[:, None] * raw


GENERATORS = {"easy_hard_mix": easy_hard_mix}


def env_from_dict(doc: dict[str, Any]) -> BernoulliEnv:
    seed = int(doc.get("seed", 0))
    if "q" in doc:
        q = np.asarray(doc["q"], dtype=float)
    else:
        gen = dict(doc.get("generator", {"kind": "easy_hard_mix"}))
        kind = gen.pop("kind")
        if kind not in GENERATORS:
            raise ValueError(f"unknown environment generator {kind!r}")
        q = GENERATORS[kind](n_prompts=int(doc["M"]), n_actions=int(doc["K"]), seed=seed, **gen)
    if "M" in doc and q.shape[0] != int(doc["M"]) or "K" in doc and q.shape[1] != int(doc["K"]):
        raise ValueError(f"q has shape {q.shape}, fixture declares M={doc.get('M')}, K={doc.get('K')}")
    drift = None
    if doc.get("drift"):
        drift_doc = dict(doc["drift"])
        if drift_doc.pop("kind", "sinusoidal") != "sinusoidal":
            raise ValueError("only sinusoidal drift is supported")
        drift = DriftSpec(float(drift_doc["amplitude"]), float(drift_doc["period"]), int(drift_doc.get("seed", seed)))
    return BernoulliEnv(q, drift, doc.get("prompt_probs"), doc.get("name", ""))


def load_env(path: str | Path) -> BernoulliEnv:
    with open(path) as f:
        return env_from_dict(json.load(f))


def file_digest(path: str | Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()
