import math

import numpy as np
import pytest
from conftest import make_instance

from rlobjective.errors import BudgetExceededError, ConfigurationError, ObjectiveUndefinedError
from rlobjective.estimator import (
    GradientEstimate,
    Skip,
    algorithm1_batch,
    algorithm1_estimate,
    conditional_expectation_oracle,
    exact_expectation_oracle,
    group_gradient,
    make_group,
    rejection_to_B_estimate,
    sample_group,
    tuple_enumeration_oracle,
)
from rlobjective.policy import (
    Corpus,
    PromptTask,
    TabularPolicy,
    grad_log_prob,
    grad_p_correct,
    p_correct,
    probs,
)
from rlobjective.schedule import builtin_schedules, grpo, mean_of_correct, vanilla


def single(V, correct, logits):
    corpus = Corpus([PromptTask("q", V, frozenset(correct))])
    return TabularPolicy.from_logits(corpus, [logits]), corpus[0]


class TestSampleGroup:
    def test_deterministic_policy(self, rng):
        pol, task = single(3, {1}, [0.0, 1e6, 0.0])
        g = sample_group(pol, task, 6, rng)
        assert g.answers.tolist() == [1] * 6
        assert g.rewards.tolist() == [1] * 6
        assert g.loo.tolist() == [5] * 6

    def test_empty_correct_set(self, rng):
        pol, task = single(3, set(), [0.2, 0.1, 0.0])
        g = sample_group(pol, task, 5, rng)
        assert g.rewards.tolist() == [0] * 5 and g.loo.tolist() == [0] * 5

    def test_invariants(self, rng):
        pol, corpus = make_instance(rng, 6)
        task = corpus[0]
        for _ in range(50):
            g = sample_group(pol, task, 7, rng)
            assert np.array_equal(g.loo, g.rewards.sum() - g.rewards)
            assert all(r == (int(y) in task.correct) for y, r in zip(g.answers, g.rewards))
            assert g.n_correct == g.rewards.sum()

    def test_bad_size(self, rng):
        pol, task = single(2, {0}, [0.0, 0.0])
        with pytest.raises(ConfigurationError):
            sample_group(pol, task, 0, rng)

    def test_reward_frequency(self, rng):
        pol, task = single(4, {0, 3}, [0.4, -0.3, 0.0, -1.0])
        p = p_correct(pol, task)
        M, n = 4, 100_000
        hits = sum(sample_group(pol, task, M, rng).n_correct for _ in range(n))
        draws = n * M
        sigma = math.sqrt(p * (1 - p) / draws)
        assert abs(hits / draws - p) <= 4 * sigma

    def test_answer_frequencies(self, rng):
        pol, task = single(5, {0}, [0.5, -1.0, 0.0, 2.0, -0.2])
        p = probs(pol, 0)
        from rlobjective.estimator import draw_answers
        counts = np.bincount(draw_answers(p, 200_000, rng), minlength=5) / 200_000
        assert np.all(np.abs(counts - p) <= 5 * np.sqrt(p * (1 - p) / 200_000))


class TestAlgorithm1:
    def test_vanilla_all_incorrect_is_zero(self, rng):
        pol, task = single(3, {0}, [-1e6, 0.0, 0.0])
        est = algorithm1_estimate(pol, task, vanilla(5), rng, seed=3)
        assert isinstance(est, GradientEstimate)
        assert np.all(est.gradient == 0)
        assert (est.label, est.M, est.prompt_id, est.n_correct, est.seed) == ("vanilla", 5, "q", 0, 3)

    def test_mean_of_correct_is_mean_over_correct(self, rng):
        pol, corpus = make_instance(rng, 5, correct={0, 2})
        sched = mean_of_correct(8)
        seen = 0
        for _ in range(200):
            group = sample_group(pol, corpus[0], 8, rng)
            k = group.n_correct
            direct = np.zeros(pol.size)
            if k:
                direct = sum(grad_log_prob(pol, 0, int(y)) for y, r in zip(group.answers, group.rewards) if r) / k
            seen += k == 3
            assert np.max(np.abs(group_gradient(pol, sched, group) - direct)) <= 1e-12
        assert seen > 0

    def test_forced_all_incorrect_is_exact_zero(self, rng):
        # skipping the step and applying the update coincide for this schedule
        pol, corpus = make_instance(rng, 4, correct={0})
        for M in (1, 4, 9):
            group = make_group(pol, corpus[0], [1, 2, 3] * 3)
            group = make_group(pol, corpus[0], group.answers[:M])
            assert np.all(group_gradient(pol, mean_of_correct(M), group) == 0.0)

    def test_schedule_size_mismatch(self, rng):
        pol, task = single(2, {0}, [0.0, 0.0])
        group = sample_group(pol, task, 3, rng)
        with pytest.raises(ConfigurationError):
            group_gradient(pol, vanilla(4), group)

    def test_batch_matches_sequential(self):
        pol, corpus = make_instance(np.random.default_rng(5), 4, prompts=2)
        task = corpus[1]
        for sched in builtin_schedules(5):
            a = np.random.default_rng(11)
            b = np.random.default_rng(11)
            batch = algorithm1_batch(pol, task, sched, a, 50)
            seq = np.array([algorithm1_estimate(pol, task, sched, b).gradient[pol.row_slice(1)]
                            for _ in range(50)])
            assert np.max(np.abs(batch - seq)) <= 1e-14


class TestOracles:
    def test_single_sample_reinforce(self, rng):
        pol, task = single(2, {1}, rng.standard_normal(2))
        expected = probs(pol, 0)[1] * grad_log_prob(pol, 0, 1)
        assert np.max(np.abs(tuple_enumeration_oracle(pol, task, vanilla(1)) - expected)) <= 1e-16

    def test_vanilla_closed_form_is_grad_p(self, rng):
        pol, corpus = make_instance(rng, 5)
        task = corpus[0]
        assert np.max(np.abs(exact_expectation_oracle(pol, task, vanilla(6)) - grad_p_correct(pol, task))) <= 1e-15

    def test_degenerate_sets_give_zero(self, rng):
        for correct in (set(), {0, 1, 2}):
            pol, task = single(3, correct, rng.standard_normal(3))
            for sched in builtin_schedules(3):
                assert np.max(np.abs(exact_expectation_oracle(pol, task, sched))) <= 1e-15
                assert np.max(np.abs(tuple_enumeration_oracle(pol, task, sched))) <= 1e-15

    @pytest.mark.parametrize("V,M,sched", [(3, 3, grpo(3, 0.1)), (4, 4, mean_of_correct(4))],
                             ids=["grpo", "mean_of_correct"])
    def test_examples(self, rng, V, M, sched):
        pol, corpus = make_instance(rng, V)
        enum = tuple_enumeration_oracle(pol, corpus[0], sched)
        closed = exact_expectation_oracle(pol, corpus[0], sched)
        assert np.max(np.abs(enum - closed)) <= 1e-12

    def test_budget(self, rng):
        pol, corpus = make_instance(rng, 10)
        with pytest.raises(BudgetExceededError) as info:
            tuple_enumeration_oracle(pol, corpus[0], vanilla(6), budget=10**5)
        assert info.value.required == 10**6 and info.value.budget == 10**5

    def test_chunking_does_not_change_result(self, rng):
        pol, corpus = make_instance(rng, 4)
        sched = grpo(6, 0.2)
        a = tuple_enumeration_oracle(pol, corpus[0], sched)
        b = tuple_enumeration_oracle(pol, corpus[0], sched, chunk=7)
        # only the summation order differs
        assert np.max(np.abs(a - b)) <= 1e-13

    @pytest.mark.parametrize("V,M", [(V, M) for V in (2, 3, 5, 10, 300) for M in (1, 2, 3, 4, 5, 8, 16)
                                     if V**M <= 10**5])
    def test_unbiasedness(self, rng, V, M):
        scheds = builtin_schedules(M) + ([grpo(M, 0.1, variance="sample")] if M > 1 else [])
        worst = 0.0
        for sched in scheds:
            for _ in range(20):
                pol, corpus = make_instance(rng, V, scale=1.5)
                enum = tuple_enumeration_oracle(pol, corpus[0], sched)
                closed = exact_expectation_oracle(pol, corpus[0], sched)
                worst = max(worst, float(np.max(np.abs(enum - closed) / (1 + np.abs(closed)))))
        assert worst <= 1e-12

    def test_multi_prompt_rows(self, rng):
        pol, corpus = make_instance(rng, 3, prompts=3)
        g = tuple_enumeration_oracle(pol, corpus[1], grpo(3, 0.1))
        assert np.all(g[:3] == 0) and np.all(g[6:] == 0)


@pytest.mark.parametrize("sched", builtin_schedules(8), ids=lambda s: s.label)
def test_monte_carlo_consistency(sched):
    rng = np.random.default_rng(99)
    pol, corpus = make_instance(rng, 4, correct={1, 2})
    task = corpus[0]
    n = 100_000
    draws = algorithm1_batch(pol, task, sched, rng, n)
    mean, se = draws.mean(axis=0), draws.std(axis=0, ddof=1) / math.sqrt(n)
    exact = exact_expectation_oracle(pol, task, sched)
    assert np.all(np.abs(mean - exact) <= 5 * se + 1e-12)


class TestRejection:
    def test_deterministic_correct(self, rng):
        pol, task = single(3, {2}, [0.0, 0.0, 1e6])
        est = rejection_to_B_estimate(pol, task, 2, 100, rng)
        assert est.attempts == 2 and est.n_correct == 2
        assert np.array_equal(est.gradient, grad_log_prob(pol, 0, 2))

    def test_empty_correct_set(self, rng):
        pol, task = single(3, set(), [0.0, 0.0, 0.0])
        out = rejection_to_B_estimate(pol, task, 1, 100, rng)
        assert out == Skip("q", 0, "empty_correct_set")

    def test_max_attempts_skip(self, rng):
        pol, task = single(2, {0}, [-30.0, 0.0])
        out = rejection_to_B_estimate(pol, task, 1, 75, rng)
        assert isinstance(out, Skip) and out.attempts == 75 and out.reason == "max_attempts"

    def test_attempts_counts_up_to_last_success(self):
        pol, task = single(2, {0}, [0.0, 0.0])
        for seed in range(20):
            est = rejection_to_B_estimate(pol, task, 3, 10**4, np.random.default_rng(seed), chunk=4)
            # replay the same stream one draw at a time
            draws = np.random.default_rng(seed).random(4 * est.attempts)
            hits = np.flatnonzero(draws < 0.5)
            assert est.attempts == hits[2] + 1

    @pytest.mark.parametrize("B,max_attempts", [(0, 5), (3, 2)])
    def test_preconditions(self, rng, B, max_attempts):
        pol, task = single(2, {0}, [0.0, 0.0])
        with pytest.raises(ConfigurationError):
            rejection_to_B_estimate(pol, task, B, max_attempts, rng)

    @pytest.mark.parametrize("B", [1, 2, 4])
    def test_unbiased(self, B):
        rng = np.random.default_rng(1000 + B)
        pol, task = single(5, {0, 3}, [0.3, 0.1, -0.2, -0.1, 0.2])
        assert p_correct(pol, task) >= 0.2
        n = 100_000
        draws = np.empty((n, 5))
        for i in range(n):
            est = rejection_to_B_estimate(pol, task, B, 10**6, rng)
            draws[i] = est.gradient
        mean, se = draws.mean(axis=0), draws.std(axis=0, ddof=1) / math.sqrt(n)
        exact = conditional_expectation_oracle(pol, task)
        assert np.all(np.abs(mean - exact) <= 5 * se + 1e-12)


class TestConditionalOracle:
    def test_singleton(self, rng):
        pol, task = single(4, {2}, rng.standard_normal(4))
        assert np.max(np.abs(conditional_expectation_oracle(pol, task) - grad_log_prob(pol, 0, 2))) <= 1e-15

    def test_full_vocabulary(self, rng):
        pol, task = single(4, {0, 1, 2, 3}, rng.standard_normal(4))
        assert np.max(np.abs(conditional_expectation_oracle(pol, task))) <= 1e-15

    def test_equals_grad_p_over_p(self, rng):
        for _ in range(20):
            pol, corpus = make_instance(rng, 6)
            task = corpus[0]
            ratio = grad_p_correct(pol, task) / p_correct(pol, task)
            assert np.max(np.abs(conditional_expectation_oracle(pol, task) - ratio)) <= 1e-13

    def test_finite_differences_of_log_p(self, rng):
        pol, corpus = make_instance(rng, 5)
        task = corpus[0]
        g = conditional_expectation_oracle(pol, task)
        for k in range(pol.size):
            probe = pol.copy()
            probe.theta[k] += 1e-5
            up = math.log(p_correct(probe, task))
            probe.theta[k] -= 2e-5
            fd = (up - math.log(p_correct(probe, task))) / 2e-5
            assert abs(fd - g[k]) <= 1e-5

    def test_undefined(self, rng):
        pol, task = single(3, set(), [0.0, 0.0, 0.0])
        with pytest.raises(ObjectiveUndefinedError):
            conditional_expectation_oracle(pol, task)
