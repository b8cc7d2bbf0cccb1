import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from spolab.advantage import Sample
from spolab.envbed import PolicyTable
from oracles import away_from_kinks, make_samples, mp_gradient, mp_loss
from spolab.optimizer import (
    ClipParams,
    ContractError,
    clip_objective,
    minibatch_update,
    surrogate_and_gradient,
)

P = ClipParams()


class TestClipObjective:
    def test_examples(self):
        assert clip_objective(1.5, 1.0, P) == pytest.approx(1.28)
        assert clip_objective(0.5, -1.0, P) == pytest.approx(-0.8)

    @given(st.floats(-10, 10))
    def test_on_policy_identity(self, adv):
        assert clip_objective(1.0, adv, P) == adv

    @given(st.floats(1e-3, 10), st.floats(-10, 10))
    def test_min_property(self, ratio, adv):
        assert clip_objective(ratio, adv, P) <= ratio * adv + 1e-12

    @given(st.floats(1e-3, 10), st.floats(1e-3, 10))
    def test_positive_cap(self, ratio, adv):
        assert clip_objective(ratio, adv, P) <= (1 + P.eps_high) * adv + 1e-12

    @pytest.mark.parametrize("ratio", [0.0, -1.0])
    def test_domain(self, ratio):
        with pytest.raises(ValueError):
            clip_objective(ratio, 1.0, P)

    @pytest.mark.parametrize("kw", [{"eps_low": 0.0}, {"eps_high": 1.0}, {"learning_rate": -1},
                                    {"updates_per_rollout": 0}, {"minibatch_size": 0}])
    def test_params_validated(self, kw):
        with pytest.raises(ValueError):
            ClipParams(**kw)


class TestSurrogate:
    def test_zero_advantages(self, rng):
        p = PolicyTable(rng.normal(size=(5, 3)))
        samples = make_samples(p, rng, 10)
        for s in samples:
            s.normalized_advantage = 0.0
        loss, grad = surrogate_and_gradient(p, samples, P)
        assert loss == 0.0 and np.all(grad == 0.0)

    def test_reinforce_form_on_policy(self, rng):
        p = PolicyTable(rng.normal(size=(2, 3)))
        s = Sample.from_rollout(1, 2, 1.0, 0.3, p.log_probs(1)[2])
        s.normalized_advantage = 0.7
        _, grad = surrogate_and_gradient(p, [s], P)
        score = -p.probs(1)
        score[2] += 1
        expected = np.zeros((2, 3))
        expected[1] = -0.7 * score
        np.testing.assert_allclose(grad, expected, atol=1e-15)

    def test_missing_advantage(self, rng):
        p = PolicyTable.uniform(2, 2)
        s = Sample.from_rollout(0, 0, 1.0, 0.5, math.log(0.5))
        with pytest.raises(ContractError):
            surrogate_and_gradient(p, [s], P)

    def test_loss_matches_oracle(self, rng):
        p = PolicyTable(rng.normal(size=(5, 3)))
        samples = make_samples(p, rng, 32)
        loss, _ = surrogate_and_gradient(p, samples, P)
        assert loss == pytest.approx(float(mp_loss(p.logits, samples, P)), rel=1e-12)

    @pytest.mark.parametrize("seed", range(3))
    def test_gradient_vs_central_differences(self, seed):
        rng = np.random.default_rng(100 + seed)
        p = PolicyTable(rng.normal(size=(5, 3)))
        samples = away_from_kinks(p, make_samples(p, rng, 32), P)
        lp = p.log_probs()
        ratios = [math.exp(lp[s.prompt_id, s.action_id] - s.old_log_prob) for s in samples]
        assert any(r < 0.8 or r > 1.28 for r in ratios)  # clipped samples are exercised
        _, grad = surrogate_and_gradient(p, samples, P)
        fd = mp_gradient(p.logits, samples, P)
        mask = np.abs(grad) > 1e-8
        np.testing.assert_allclose(grad[mask], fd[mask], rtol=1e-5)
        np.testing.assert_allclose(grad[~mask], fd[~mask], atol=1e-8)


class TestMinibatchUpdate:
    def test_zero_learning_rate(self, rng):
        p = PolicyTable(rng.normal(size=(4, 3)))
        out = minibatch_update(p, make_samples(p, rng, 16), ClipParams(learning_rate=0.0), rng)
        np.testing.assert_array_equal(out.logits, p.logits)
        assert out.version == p.version

    def test_positive_advantage_raises_logit(self):
        p = PolicyTable.uniform(1, 3)
        s = Sample.from_rollout(0, 1, 1.0, 0.5, p.log_probs(0)[1])
        s.normalized_advantage = 1.0
        out = minibatch_update(p, [s] * 4, ClipParams(updates_per_rollout=1), np.random.default_rng(0))
        assert out.logits[0, 1] > p.logits[0, 1]
        assert out.version == 1
        assert np.all(p.logits == 0.0)  # input untouched

    def test_deterministic(self):
        p = PolicyTable(np.random.default_rng(2).normal(size=(5, 3)))
        samples = make_samples(p, np.random.default_rng(3), 40)
        a = minibatch_update(p, samples, ClipParams(minibatch_size=8), np.random.default_rng(5))
        b = minibatch_update(p, samples, ClipParams(minibatch_size=8), np.random.default_rng(5))
        assert a.logits.tobytes() == b.logits.tobytes()

    def test_empty_dataset(self, rng):
        with pytest.raises(ValueError):
            minibatch_update(PolicyTable.uniform(1, 2), [], P, rng)
