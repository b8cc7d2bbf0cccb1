"""Training loops: single-stream (SPO and its ablations, batched-repeat BSPO)
and group-based (GRPO, RLOO) references over a tabular Bernoulli environment.

Every loop records one :class:`IterationMetrics` row per iteration and is a
pure function of its :class:`~spolab.config.RunConfig`.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

import numpy as np

from . import envbed
from .advantage import Sample, grpo_advantages, normalize_global, rloo_advantages, GRPO_EPS
from .analysis import NZ_TOLERANCES, degenerate_mask, near_zero_ratio
from .config import RunConfig, stream
from .envbed import BernoulliEnv, PolicyTable
from .optimizer import minibatch_update
from .sampler import compute_weights, sample_batch, uniform_weights
from .tracker import (
    TrackerParams,
    ValueTracker,
    init_from_samples,
    load_snapshot,
    prior_state,
)

CSV_FIELDS = (
    "iter",
    "J",
    "adv_var_raw",
    "degenerate_ratio",
    "nz_ratio_1e-4",
    "nz_ratio_0.02",
    "tracker_mse",
    "samples",
    "contributing",
)
NA = "NA"


@dataclass
class IterationMetrics:
    iteration: int
    expected_reward: float
    adv_var_raw: float
    degenerate_ratio: float | None
    nz_ratio_tight: float
    nz_ratio_loose: float
    tracker_mse: float | None
    samples: int
    contributing: int
    reward_var: float = float("nan")
    degenerate_batch: bool = False

    def row(self) -> list[str]:
        def fmt(x):
            return NA if x is None else repr(float(x))

        return [
            str(self.iteration),
            fmt(self.expected_reward),
            fmt(self.adv_var_raw),
            fmt(self.degenerate_ratio),
            fmt(self.nz_ratio_tight),
            fmt(self.nz_ratio_loose),
            fmt(self.tracker_mse),
            str(self.samples),
            str(self.contributing),
        ]


def metrics_csv(rows: Iterable[IterationMetrics]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_FIELDS)
    for m in rows:
        w.writerow(m.row())
    return buf.getvalue()


def read_metrics_csv(text: str) -> list[dict[str, float | None]]:
    out = []
    for rec in csv.DictReader(io.StringIO(text)):
        out.append({k: (None if v == NA else float(v)) for k, v in rec.items()})
    return out


# --- tracker initialization ----------------------------------------------


def offline_init(
    env: BernoulliEnv,
    policy: PolicyTable,
    params: TrackerParams,
    n0: int,
    rng: np.random.Generator,
) -> ValueTracker:
    """Estimate every prompt's success rate from ``n0`` rollouts of ``policy``."""
    m = env.n_prompts
    prompts = np.repeat(np.arange(m), n0)
    actions, _ = envbed.act_batch(policy, prompts, rng)
    rewards = envbed.reward_batch(env, prompts, actions, rng)
    successes = rewards.reshape(m, n0).sum(axis=1)
    states = [
        init_from_samples(int(k), n0, params, prompt_id=x, version=policy.version)
        for x, k in enumerate(successes)
    ]
    return ValueTracker(params, states)


def initial_tracker(config: RunConfig, policy: PolicyTable) -> ValueTracker:
    env = config.env
    if config.tracker_init:
        states = load_snapshot(config.tracker_init)
        if len(states) != env.n_prompts:
            raise ValueError(
                f"tracker snapshot has {len(states)} prompts, environment has {env.n_prompts}"
            )
        return ValueTracker(config.tracker, states)
    if config.algorithm == "spo_no_init":
        return ValueTracker(
            config.tracker, [prior_state(config.tracker, x, policy.version) for x in range(env.n_prompts)]
        )
    return offline_init(env, policy, config.tracker, config.n0, stream(config.seed, "init"))


# --- single-stream rollouts ----------------------------------------------


SampleHook = Callable[[dict], None]


@dataclass
class Rollout:
    prompts: np.ndarray
    actions: np.ndarray
    log_probs: np.ndarray
    rewards: np.ndarray
    baselines: np.ndarray
    launched: int
    group_ids: np.ndarray | None = None

    @property
    def raw_advantages(self) -> np.ndarray:
        return self.rewards - self.baselines


class SingleStreamRunner:
    """State of one single-stream run; ``step`` performs one sample-update-normalize-optimize iteration."""

    def __init__(self, config: RunConfig, on_sample: SampleHook | None = None):
        self.config = config
        self.env = config.env
        self.policy = PolicyTable.uniform(self.env.n_prompts, self.env.n_actions)
        self.tracker = initial_tracker(config, self.policy)
        # rows of the policy that last acted on each prompt (init rollouts count)
        self.last_logits = self.policy.logits.copy()
        self.rng = {name: stream(config.seed, name) for name in ("sampler", "policy", "reward", "optim", "latency")}
        self.on_sample = on_sample
        self.shared_baseline = config.algorithm == "bspo"
        self.no_baseline = config.algorithm == "spo_no_baseline"
        self.uniform = config.sampler.uniform or config.algorithm == "spo_uniform_sampling"
        self.iteration = 0

    def _weights(self):
        if self.uniform:
            return uniform_weights(self.env.n_prompts)
        return compute_weights(self.tracker.values(), self.config.sampler.explore_bonus)

    def _select(self, env: BernoulliEnv) -> tuple[np.ndarray, int]:
        """Prompts (with repeats, in stream order) that make it into the batch."""
        cfg = self.config
        n_prompts = cfg.batch_size // cfg.repeat
        launch = n_prompts if not cfg.oversample else math.ceil(n_prompts * (1.0 + cfg.oversample))
        chosen = sample_batch(self._weights(), launch, self.rng["sampler"], cfg.sampler.replacement)
        streams = np.repeat(chosen, cfg.repeat)
        if launch == n_prompts:
            return streams, streams.size
        # over-provisioned: keep the first batch_size finishers, cancel the rest
        latency = cfg.latency.draw(streams.size, self.rng["latency"])
        keep = np.sort(np.argsort(latency, kind="stable")[: cfg.batch_size])
        return streams[keep], streams.size

    def rollout(self) -> Rollout:
        env = self.env.at(self.iteration)
        prompts, launched = self._select(env)
        actions, logp = envbed.act_batch(self.policy, prompts, self.rng["policy"])
        rewards = envbed.reward_batch(env, prompts, actions, self.rng["reward"]).astype(float)
        batch_start = self.tracker.values() if self.shared_baseline else None
        baselines = np.empty(prompts.size)
        for i, (x, r) in enumerate(zip(prompts.tolist(), rewards.tolist())):
            before = self.tracker.value(x)
            if self.no_baseline:
                baselines[i] = 0.0
            elif self.shared_baseline:
                baselines[i] = batch_start[x]
            else:
                baselines[i] = before
            kl = float(envbed.kl_rows(self.policy.logits[x], self.last_logits[x]))
            after = self.tracker.observe(x, r, kl, self.policy.version)
            self.last_logits[x] = self.policy.logits[x]
            if self.on_sample is not None:
                self.on_sample(
                    dict(
                        iteration=self.iteration,
                        prompt=x,
                        reward=r,
                        baseline=baselines[i],
                        value_before=before,
                        value_after=after,
                        kl=kl,
                    )
                )
        return Rollout(prompts, actions, logp, rewards, baselines, launched)

    def step(self) -> IterationMetrics:
        env = self.env.at(self.iteration)
        ro = self.rollout()
        raw = ro.raw_advantages
        norm, stats = normalize_global(raw)
        samples = [
            Sample(int(x), int(a), float(r), float(b), float(lp), float(A), float(n))
            for x, a, r, b, lp, A, n in zip(ro.prompts, ro.actions, ro.rewards, ro.baselines, ro.log_probs, raw, norm)
        ]
        values = np.asarray(self.tracker.values())
        mse = float(np.mean((values - envbed.true_values(env, self.policy)) ** 2))
        degenerate_ratio = None
        if self.config.repeat > 1:
            degenerate_ratio = float(degenerate_mask(ro.rewards, ro.prompts).mean())
        if not self.config.freeze_policy and not stats.degenerate:
            self.policy = minibatch_update(self.policy, samples, self.config.optim, self.rng["optim"])
        metrics = IterationMetrics(
            iteration=self.iteration,
            expected_reward=envbed.expected_reward(env, self.policy),
            adv_var_raw=float(raw.var()),
            degenerate_ratio=degenerate_ratio,
            nz_ratio_tight=near_zero_ratio(raw, NZ_TOLERANCES[0]),
            nz_ratio_loose=near_zero_ratio(raw, NZ_TOLERANCES[1]),
            tracker_mse=mse,
            samples=ro.launched,
            contributing=0 if stats.degenerate else int(np.count_nonzero(raw)),
            reward_var=float(ro.rewards.var()),
            degenerate_batch=stats.degenerate,
        )
        self.iteration += 1
        return metrics


def run_spo(config: RunConfig, on_sample: SampleHook | None = None) -> list[IterationMetrics]:
    if config.algorithm in ("grpo", "rloo"):
        raise ValueError(f"run_spo cannot run group algorithm {config.algorithm!r}")
    runner = SingleStreamRunner(config, on_sample)
    return [runner.step() for _ in range(config.iterations)]


def run_bspo(config: RunConfig, on_sample: SampleHook | None = None) -> list[IterationMetrics]:
    if config.algorithm != "bspo":
        raise ValueError("run_bspo needs algorithm 'bspo'")
    return run_spo(config, on_sample)


# --- group-based reference ------------------------------------------------


def run_grpo(config: RunConfig) -> list[IterationMetrics]:
    """GRPO (or RLOO) with uniform prompt sampling and the same PPO-Clip update.

    GRPO standardizes inside each group; RLOO uses leave-one-out baselines and
    then the global batch normalization.  Degenerate groups yield all-zero
    advantages and so no gradient.
    """
    if config.algorithm not in ("grpo", "rloo"):
        raise ValueError(f"run_grpo cannot run {config.algorithm!r}")
    env0 = config.env
    G = config.group_size
    n_groups = config.batch_size // G
    policy = PolicyTable.uniform(env0.n_prompts, env0.n_actions)
    rng = {name: stream(config.seed, name) for name in ("sampler", "policy", "reward", "optim")}
    out = []
    for it in range(config.iterations):
        env = env0.at(it)
        chosen = sample_batch(uniform_weights(env.n_prompts), n_groups, rng["sampler"])
        prompts = np.repeat(chosen, G)
        group_ids = np.repeat(np.arange(n_groups), G)
        actions, logp = envbed.act_batch(policy, prompts, rng["policy"])
        rewards = envbed.reward_batch(env, prompts, actions, rng["reward"]).astype(float)
        grouped = rewards.reshape(n_groups, G)
        raw = (grouped - grouped.mean(axis=1, keepdims=True)).ravel()
        if config.algorithm == "grpo":
            norm = np.concatenate([grpo_advantages(g, GRPO_EPS) for g in grouped])
            degenerate_batch = False
        else:
            raw = np.concatenate([rloo_advantages(g) for g in grouped])
            norm, stats = normalize_global(raw)
            degenerate_batch = stats.degenerate
        samples = [
            Sample(int(x), int(a), float(r), float(r - A), float(lp), float(A), float(n))
            for x, a, r, lp, A, n in zip(prompts, actions, rewards, logp, raw, norm)
        ]
        mask = degenerate_mask(rewards, group_ids)
        if not config.freeze_policy and np.any(norm != 0.0):
            policy = minibatch_update(policy, samples, config.optim, rng["optim"])
        out.append(
            IterationMetrics(
                iteration=it,
                expected_reward=envbed.expected_reward(env, policy),
                adv_var_raw=float(raw.var()),
                degenerate_ratio=float(mask.mean()),
                nz_ratio_tight=near_zero_ratio(raw, NZ_TOLERANCES[0]),
                nz_ratio_loose=near_zero_ratio(raw, NZ_TOLERANCES[1]),
                tracker_mse=None,
                samples=prompts.size,
                contributing=0 if degenerate_batch else int(np.count_nonzero(raw)),
                reward_var=float(rewards.var()),
                degenerate_batch=degenerate_batch,
            )
        )
    return out


def run(config: RunConfig, on_sample: SampleHook | None = None) -> list[IterationMetrics]:
    if config.algorithm in ("grpo", "rloo"):
        return run_grpo(config)
    return run_spo(config, on_sample)


# --- frozen-policy gradient harness --------------------------------------


@dataclass
class GradientEstimate:
    mean: np.ndarray
    stderr: np.ndarray
    n: int


def estimate_gradient(config: RunConfig, n_samples: int, baseline: str = "tracker") -> GradientEstimate:
    """Monte Carlo ``E[(r - b(x)) grad log pi(a|x)]`` from the single-stream sampler.

    The policy is frozen and prompts are drawn uniformly, so the estimate
    targets the exact gradient of J.  ``baseline`` is ``"tracker"`` (the
    pre-update tracker value), ``"none"`` or ``"true"`` (the exact V(x)).
    """
    from dataclasses import replace

    cfg = replace(
        config,
        freeze_policy=True,
        sampler=replace(config.sampler, uniform=True),
        algorithm="spo",
        repeat=1,
        oversample=0.0,
    )
    runner = SingleStreamRunner(cfg)
    env = runner.env
    policy = runner.policy
    pi = policy.probs()
    v_true = envbed.true_values(env, policy)
    scale = env.n_prompts  # sampled x ~ uniform; J averages rows with weight 1/M
    sums = np.zeros_like(pi)
    sq = np.zeros_like(pi)
    n = 0
    while n < n_samples:
        ro = runner.rollout()
        runner.iteration += 1
        take = min(ro.prompts.size, n_samples - n)
        x, a, r = ro.prompts[:take], ro.actions[:take], ro.rewards[:take]
        if baseline == "tracker":
            b = ro.baselines[:take]
        elif baseline == "none":
            b = np.zeros(take)
        elif baseline == "true":
            b = v_true[x]
        else:
            raise ValueError(f"unknown baseline {baseline!r}")
        local = -pi[x]
        local[np.arange(take), a] += 1.0
        contrib = (r - b)[:, None] * local * env.prompt_distribution[x][:, None] * scale
        np.add.at(sums, x, contrib)
        np.add.at(sq, x, contrib**2)
        n += take
    mean = sums / n
    var = sq / n - mean**2
    return GradientEstimate(mean, np.sqrt(np.maximum(var, 0.0) / n), n)
