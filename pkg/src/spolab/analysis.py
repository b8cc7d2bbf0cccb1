"""Closed-form cost and variance formulas for group vs. single-stream
advantages, their Monte Carlo validators, and the per-batch signal
diagnostics shared with the training loop."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .advantage import GRPO_EPS

NZ_TOLERANCES = (1e-4, 0.02)


class DivergenceError(ValueError):
    """A closed-form quantity is infinite at the requested parameters."""


def expected_dynamic_samples(p: float) -> float:
    """Expected draws until a Bernoulli(p) stream has shown both outcomes."""
    if not 0.0 < p < 1.0:
        raise DivergenceError(f"expected sample count diverges at p={p}")
    return 1.0 / (p * (1.0 - p)) - 1.0


def degeneracy_prob(p: float, G: int) -> float:
    """Chance that ``G`` Bernoulli(p) rewards are all equal."""
    if G < 1:
        raise ValueError(f"group size must be at least 1, got {G}")
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"p must lie in [0, 1], got {p}")
    return p**G + (1.0 - p) ** G


@dataclass(frozen=True)
class VarianceRatioParams:
    group_size: int
    n_eff: float
    p: float
    psi_g: float = 0.0
    psi_b: float = 0.0

    def __post_init__(self):
        if self.group_size < 2:
            raise ValueError("group_size must be at least 2")
        if not 0.0 < self.p < 1.0:
            raise ValueError(f"p must lie in (0, 1), got {self.p}")
        if self.psi_g < 0 or self.psi_b < 0:
            raise ValueError("excess-variance terms must be non-negative")
        if not self.n_eff > 0:
            raise ValueError("n_eff must be positive")


def baseline_noise_factor(group_size: int, n_eff: float) -> float:
    return (1.0 + 1.0 / group_size) / (1.0 + 1.0 / (n_eff + 1.0))


def information_loss_factor(p: float, group_size: int) -> float:
    z = degeneracy_prob(p, group_size)
    if z >= 1.0:
        raise DivergenceError(f"every group is degenerate at p={p}, G={group_size}")
    return 1.0 / (1.0 - z)


def normalization_noise_factor(psi_g: float, psi_b: float) -> float:
    return (1.0 + psi_g) / (1.0 + psi_b)


def variance_ratio(params: VarianceRatioParams) -> float:
    """Approximate Var[g]_group / Var[g]_single-stream as a product of three factors."""
    return (
        baseline_noise_factor(params.group_size, params.n_eff)
        * information_loss_factor(params.p, params.group_size)
        * normalization_noise_factor(params.psi_g, params.psi_b)
    )


def psi_for_ratio(target: float, group_size: int, n_eff: float, p: float, psi_b: float = 0.0) -> float:
    """The group normalization excess ``psi_g`` that makes the ratio equal ``target``."""
    rest = baseline_noise_factor(group_size, n_eff) * information_loss_factor(p, group_size)
    return target / rest * (1.0 + psi_b) - 1.0


def estimate_psi(
    p: float,
    group_size: int,
    trials: int = 100_000,
    rng: np.random.Generator | None = None,
    eps: float = GRPO_EPS,
) -> float:
    """Monte Carlo excess variance from standardizing by an estimated std.

    Each non-degenerate group of ``group_size`` Bernoulli(p) rewards is
    scaled by ``s = sigma_true / (sigma_group + eps)`` instead of by the true
    std.  A random multiplier inflates second moments by ``1 + Var(s)/E[s]^2``,
    so the squared coefficient of variation of ``s`` is returned.  It is
    near zero for large batches.
    """
    if not 0.0 < p < 1.0:
        raise ValueError(f"p must lie in (0, 1), got {p}")
    rng = rng if rng is not None else np.random.default_rng(0)
    k = rng.binomial(group_size, p, size=trials)
    k = k[(k > 0) & (k < group_size)]
    if k.size < 2:
        return float("nan")
    frac = k / group_size
    sigma_group = np.sqrt(frac * (1.0 - frac))
    s = math.sqrt(p * (1.0 - p)) / (sigma_group + eps)
    return float(s.var() / s.mean() ** 2)


# --- Monte Carlo validators ----------------------------------------------


def simulate_dynamic_samples(p: float, trials: int, rng: np.random.Generator) -> np.ndarray:
    """Draw counts needed until both outcomes appear, ``trials`` times.

    After the first draw, the wait for the opposite outcome is geometric with
    success probability ``1 - p`` (first draw a success) or ``p``.
    """
    first = rng.random(trials) < p
    wait = np.where(first, rng.geometric(1.0 - p, trials), rng.geometric(p, trials))
    return 1 + wait


def simulate_dynamic_samples_bruteforce(p: float, trials: int, rng: np.random.Generator) -> float:
    """Mean draw count by literally drawing Bernoullis one at a time."""
    total = 0
    for _ in range(trials):
        n, seen = 0, set()
        while len(seen) < 2:
            seen.add(rng.random() < p)
            n += 1
        total += n
    return total / trials


def simulate_degeneracy(p: float, G: int, trials: int, rng: np.random.Generator) -> float:
    groups = rng.random((trials, G)) < p
    same = groups.all(axis=1) | ~groups.any(axis=1)
    return float(same.mean())


@dataclass
class Check:
    name: str
    expected: float
    observed: float
    tolerance: float
    passed: bool

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"{status}  {self.name:<34} expected={self.expected:.6g} observed={self.observed:.6g} tol={self.tolerance:.3g}"


def validate(trials: int = 100_000, seed: int = 0) -> list[Check]:
    """Closed forms against simulation: dynamic-sampling cost and Z_G(p)."""
    checks = []
    for i, p in enumerate((0.1, 0.3, 0.5)):
        rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(0, i)))
        expected = expected_dynamic_samples(p)
        observed = float(simulate_dynamic_samples(p, trials, rng).mean())
        tol = 0.02 * expected
        checks.append(Check(f"E[N] p={p}", expected, observed, tol, abs(observed - expected) <= tol))
    for i, (p, G) in enumerate((p, G) for p in (0.1, 0.5, 0.9) for G in (4, 8, 16)):
        rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(1, i)))
        expected = degeneracy_prob(p, G)
        observed = simulate_degeneracy(p, G, trials, rng)
        tol = 3.0 * math.sqrt(expected * (1.0 - expected) / trials)
        checks.append(Check(f"Z_G p={p} G={G}", expected, observed, tol, abs(observed - expected) <= tol))
    return checks


# --- per-batch signal diagnostics ----------------------------------------


@dataclass
class SignalDiagnostics:
    degenerate_ratio: float | None
    nz_ratios: dict[float, float]
    var_raw: float
    var_advantage: float
    var_grpo_effective: float | None


def near_zero_ratio(advantages: Sequence[float], tau: float) -> float:
    a = np.asarray(advantages, dtype=float)
    return float(np.mean(np.abs(a) <= tau)) if a.size else 0.0


def degenerate_mask(rewards: Sequence[float], group_ids: Sequence[int]) -> np.ndarray:
    """Per-sample flag: does the sample's group share a single reward value?"""
    r = np.asarray(rewards, dtype=float)
    g = np.asarray(group_ids)
    _, inv = np.unique(g, return_inverse=True)
    lo = np.full(inv.max() + 1, np.inf)
    hi = np.full(inv.max() + 1, -np.inf)
    np.minimum.at(lo, inv, r)
    np.maximum.at(hi, inv, r)
    return (lo == hi)[inv]


def fig4_diagnostics(
    rewards: Sequence[float],
    advantages: Sequence[float],
    group_ids: Sequence[int] | None = None,
    taus: Sequence[float] = NZ_TOLERANCES,
) -> SignalDiagnostics:
    """Signal-loss and variance diagnostics for one batch of raw advantages.

    ``var_raw`` is the reward variance (the no-baseline signal);
    ``var_grpo_effective`` restricts the advantage variance to samples from
    non-degenerate groups and is ``None`` when there are none, or when no
    grouping is given.
    """
    r = np.asarray(rewards, dtype=float)
    a = np.asarray(advantages, dtype=float)
    if r.shape != a.shape or r.ndim != 1 or r.size == 0:
        raise ValueError("rewards and advantages must be equal-length non-empty sequences")
    nz = {tau: near_zero_ratio(a, tau) for tau in taus}
    degenerate_ratio = effective = None
    if group_ids is not None:
        if len(group_ids) != r.size:
            raise ValueError("group_ids must align with rewards")
        mask = degenerate_mask(r, group_ids)
        degenerate_ratio = float(mask.mean())
        if np.any(~mask):
            effective = float(a[~mask].var())
    return SignalDiagnostics(degenerate_ratio, nz, float(r.var()), float(a.var()), effective)
