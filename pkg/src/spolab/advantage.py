"""Advantage estimators: single-stream with global batch normalization, plus
the group baselines (GRPO mean, RLOO leave-one-out) used for comparison."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Hashable, Sequence

import numpy as np

GRPO_EPS = 1e-6


@dataclass
class Sample:
    prompt_id: Hashable
    action_id: int
    reward: float
    baseline_value: float
    old_log_prob: float
    raw_advantage: float
    normalized_advantage: float | None = None

    @classmethod
    def from_rollout(cls, prompt_id, action_id, reward, baseline_value, old_log_prob) -> "Sample":
        return cls(
            prompt_id,
            action_id,
            reward,
            baseline_value,
            old_log_prob,
            raw_advantage(reward, baseline_value),
        )


@dataclass(frozen=True)
class BatchStats:
    mean: float
    std: float
    count: int
    degenerate: bool = False


def raw_advantage(reward: float, baseline_pre_update: float) -> float:
    """``reward - baseline``; the baseline must be read before this sample's tracker update."""
    return reward - baseline_pre_update


def normalize_global(advantages: Sequence[float]) -> tuple[np.ndarray, BatchStats]:
    """Standardize a whole batch by its mean and population std.

    A zero-variance batch returns all zeros with ``stats.degenerate`` set
    instead of raising, so a training loop can skip it and carry on.
    """
    a = np.asarray(advantages, dtype=float)
    if a.ndim != 1 or a.size < 2:
        raise ValueError(f"global normalization needs at least 2 advantages, got {a.size}")
    mu = float(a.mean())
    centered = a - mu
    sigma = float(np.sqrt(np.mean(centered**2)))
    # compare raw values: the mean of equal floats need not equal them exactly
    if sigma == 0.0 or np.all(a == a[0]):
        return np.zeros_like(a), BatchStats(mu, 0.0, a.size, degenerate=True)
    return centered / sigma, BatchStats(mu, sigma, a.size)


def _group(group_rewards: Sequence[float], min_size: int) -> np.ndarray:
    g = np.asarray(group_rewards, dtype=float)
    if g.ndim != 1 or g.size < min_size:
        raise ValueError(f"group needs at least {min_size} rewards, got {g.size}")
    return g


def grpo_advantages(group_rewards: Sequence[float], eps: float = GRPO_EPS) -> np.ndarray:
    g = _group(group_rewards, 2)
    if np.all(g == g[0]):
        return np.zeros_like(g)
    centered = g - g.mean()
    return centered / (np.sqrt(np.mean(centered**2)) + eps)


def rloo_advantages(group_rewards: Sequence[float]) -> np.ndarray:
    g = _group(group_rewards, 2)
    n = g.size
    loo_mean = (g.sum() - g) / (n - 1)
    return g - loo_mean


def is_degenerate(group_rewards: Sequence[float]) -> bool:
    g = _group(group_rewards, 1)
    return bool(np.all(g == g[0]))
