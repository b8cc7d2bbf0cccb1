"""PPO-Clip with asymmetric clip range, applied to a tabular softmax policy.

Every response is a single atomic action, so the token-level objective reduces
to one ratio per sample.  The loss is the negated mean clipped surrogate; its
gradient is computed analytically and applied by plain gradient descent.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .advantage import Sample
from .envbed import PolicyTable, log_softmax


class ContractError(ValueError):
    """A sample reached the optimizer without its normalized advantage."""


@dataclass(frozen=True)
class ClipParams:
    eps_low: float = 0.2
    eps_high: float = 0.28
    learning_rate: float = 0.1
    updates_per_rollout: int = 8
    minibatch_size: int | None = None  # None: dataset size // updates_per_rollout

    def __post_init__(self):
        if not (0 < self.eps_low < 1 and 0 < self.eps_high < 1):
            raise ValueError(f"clip range must lie in (0, 1), got ({self.eps_low}, {self.eps_high})")
        if self.learning_rate < 0:
            raise ValueError(f"learning_rate must be non-negative, got {self.learning_rate}")
        if self.updates_per_rollout < 1:
            raise ValueError("updates_per_rollout must be at least 1")
        if self.minibatch_size is not None and self.minibatch_size < 1:
            raise ValueError("minibatch_size must be at least 1")


def clip_objective(ratio: float, adv: float, params: ClipParams) -> float:
    if not ratio > 0:
        raise ValueError(f"probability ratio must be positive, got {ratio}")
    clipped = min(max(ratio, 1.0 - params.eps_low), 1.0 + params.eps_high)
    return min(ratio * adv, clipped * adv)


def _as_arrays(samples: Sequence[Sample]) -> tuple[np.ndarray, ...]:
    prompts = np.fromiter((s.prompt_id for s in samples), dtype=np.int64, count=len(samples))
    actions = np.fromiter((s.action_id for s in samples), dtype=np.int64, count=len(samples))
    old = np.fromiter((s.old_log_prob for s in samples), dtype=float, count=len(samples))
    adv = np.empty(len(samples))
    for i, s in enumerate(samples):
        if s.normalized_advantage is None:
            raise ContractError(f"sample {i} (prompt {s.prompt_id}) has no normalized advantage")
        adv[i] = s.normalized_advantage
    return prompts, actions, old, adv


def surrogate_and_gradient(
    policy: PolicyTable, samples: Sequence[Sample], params: ClipParams
) -> tuple[float, np.ndarray]:
    """Return ``(loss, dloss/dlogits)`` for ``loss = -mean(clipped surrogate)``."""
    grad = np.zeros_like(policy.logits)
    if len(samples) == 0:
        return 0.0, grad
    prompts, actions, old, adv = _as_arrays(samples)
    logp_rows = log_softmax(policy.logits[prompts])
    logp = logp_rows[np.arange(len(prompts)), actions]
    ratio = np.exp(logp - old)
    clipped = np.clip(ratio, 1.0 - params.eps_low, 1.0 + params.eps_high)
    unclipped_obj = ratio * adv
    clipped_obj = clipped * adv
    obj = np.minimum(unclipped_obj, clipped_obj)
    loss = -float(obj.mean())

    # The clipped branch only wins strictly when the ratio sits outside the
    # clip range, where the clamp is flat; those samples carry no gradient.
    active = unclipped_obj <= clipped_obj
    coef = np.where(active, ratio * adv, 0.0) / len(prompts)
    # d log pi(a|x) / d logits[x, b] = 1[a == b] - pi(b|x)
    local = -np.exp(logp_rows)
    local[np.arange(len(prompts)), actions] += 1.0
    np.add.at(grad, prompts, -coef[:, None] * local)
    return loss, grad


def minibatch_update(
    policy: PolicyTable,
    dataset: Sequence[Sample],
    params: ClipParams,
    rng: np.random.Generator,
) -> PolicyTable:
    """Run ``updates_per_rollout`` descent steps on shuffled minibatches.

    Minibatches walk a random permutation of the dataset and reshuffle when it
    is exhausted.  Returns a new table; the input is left untouched.
    """
    if len(dataset) == 0:
        raise ValueError("cannot update on an empty dataset")
    out = policy.copy()
    size = params.minibatch_size or max(1, len(dataset) // params.updates_per_rollout)
    size = min(size, len(dataset))
    order = rng.permutation(len(dataset))
    cursor = 0
    for _ in range(params.updates_per_rollout):
        if cursor + size > len(order):
            order = rng.permutation(len(dataset))
            cursor = 0
        batch = [dataset[i] for i in order[cursor : cursor + size]]
        cursor += size
        _, grad = surrogate_and_gradient(out, batch, params)
        step = params.learning_rate * grad
        if np.any(step != 0.0):
            out.logits -= step
            out.version += 1
    return out

