"""Prioritized prompt sampling.

Weights favour prompts whose estimated success rate is near 0.5 (largest
Bernoulli std) while an additive exploration bonus keeps every prompt
reachable.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

EXPLORE_BONUS = 0.05


@dataclass(frozen=True)
class SamplerParams:
    explore_bonus: float = EXPLORE_BONUS
    replacement: bool = False
    # diagnostic mode: ignore the tracker and sample prompts uniformly
    uniform: bool = False


@dataclass(frozen=True)
class SamplingWeights:
    weights: np.ndarray
    total: float

    @property
    def probabilities(self) -> np.ndarray:
        return self.weights / self.total

    def __len__(self) -> int:
        return self.weights.size


def compute_weights(values: Sequence[float], explore_bonus: float = EXPLORE_BONUS) -> SamplingWeights:
    v = np.asarray(values, dtype=float)
    if not explore_bonus > 0:
        raise ValueError(f"explore_bonus must be positive, got {explore_bonus}")
    if v.size == 0:
        raise ValueError("no prompts to weight")
    if np.any(~((v >= 0.0) & (v <= 1.0))):
        bad = v[~((v >= 0.0) & (v <= 1.0))][0]
        raise ValueError(f"tracker values must lie in [0, 1], got {bad}")
    w = np.sqrt(v * (1.0 - v)) + explore_bonus
    return SamplingWeights(w, float(w.sum()))


def uniform_weights(n_prompts: int) -> SamplingWeights:
    return SamplingWeights(np.ones(n_prompts), float(n_prompts))


def sample_batch(
    weights: SamplingWeights,
    batch_size: int,
    rng: np.random.Generator,
    replacement: bool = False,
) -> np.ndarray:
    """Draw ``batch_size`` prompt indices.

    Without replacement, the result has the law of successive weighted draws
    with renormalization after each pick.  It is realized with exponential
    race keys (each prompt's key is Exp(1) / w; smallest keys win, in order).
    """
    n = len(weights)
    if batch_size < 0:
        raise ValueError(f"batch_size must be non-negative, got {batch_size}")
    if replacement:
        return rng.choice(n, size=batch_size, replace=True, p=weights.probabilities)
    if batch_size > n:
        raise ValueError(
            f"cannot draw {batch_size} distinct prompts from a population of {n}"
        )
    keys = rng.standard_exponential(n) / weights.weights
    return np.argsort(keys, kind="stable")[:batch_size]
