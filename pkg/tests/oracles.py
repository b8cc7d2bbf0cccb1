"""Independent oracles shared by the unit and acceptance tests."""
import math

import mpmath
import numpy as np

from spolab.advantage import Sample

mpmath.mp.dps = 40


def make_samples(policy, rng, n, spread=0.3):
    """Samples whose old log-probs sit near the current ones, so some ratios clip."""
    out = []
    lp = policy.log_probs()
    for _ in range(n):
        x = int(rng.integers(policy.n_prompts))
        a = int(rng.integers(policy.n_actions))
        s = Sample.from_rollout(x, a, float(rng.integers(2)), 0.5, lp[x, a] + rng.normal(0, spread))
        s.normalized_advantage = float(rng.normal())
        out.append(s)
    return out


def mp_loss(logits, samples, params):
    """Independent high-precision oracle for the clipped surrogate loss."""
    total = mpmath.mpf(0)
    for s in samples:
        row = [mpmath.mpf(v) for v in logits[s.prompt_id]]
        logz = mpmath.log(mpmath.fsum(mpmath.exp(v) for v in row))
        ratio = mpmath.exp(row[s.action_id] - logz - mpmath.mpf(s.old_log_prob))
        clipped = min(max(ratio, 1 - mpmath.mpf(params.eps_low)), 1 + mpmath.mpf(params.eps_high))
        adv = mpmath.mpf(s.normalized_advantage)
        total += min(ratio * adv, clipped * adv)
    return -total / len(samples)


def mp_gradient(logits, samples, params, h=mpmath.mpf("1e-6")):
    g = np.zeros_like(logits)
    base = [[mpmath.mpf(v) for v in row] for row in logits]
    for i, j in np.ndindex(*logits.shape):
        up = [row[:] for row in base]
        down = [row[:] for row in base]
        up[i][j] += h
        down[i][j] -= h
        g[i, j] = float((mp_loss(up, samples, params) - mp_loss(down, samples, params)) / (2 * h))
    return g


def away_from_kinks(policy, samples, params, margin=1e-3):
    lp = policy.log_probs()
    keep = []
    for s in samples:
        ratio = math.exp(lp[s.prompt_id, s.action_id] - s.old_log_prob)
        if min(abs(ratio - (1 - params.eps_low)), abs(ratio - (1 + params.eps_high))) > margin:
            keep.append(s)
    return keep
