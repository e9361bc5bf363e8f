import io

import numpy as np
import pytest
from conftest import make_instance

from rlobjective.errors import BudgetExceededError, ConfigurationError, DivergenceError
from rlobjective.policy import Corpus, PromptTask, TabularPolicy, grad_p_correct, p_correct
from rlobjective.schedule import AdvantageSchedule, builtin_schedules, grpo, mean_of_correct, vanilla
from rlobjective.specfun import RefTransform
from rlobjective.trainer import (
    TRAJECTORY_HEADER,
    TrainerConfig,
    expected_update,
    expected_update_check,
    train,
)


def two_arm():
    corpus = Corpus([PromptTask("q", 2, frozenset({0}))])
    return TabularPolicy.zeros(corpus), corpus


CONVERGENCE = {
    "vanilla": TrainerConfig(schedule=vanilla(4), eta=0.5, steps=500, seed=7),
    "mean_of_correct": TrainerConfig(schedule=mean_of_correct(4), eta=0.5, steps=500, seed=7),
    "grpo": TrainerConfig(schedule=grpo(4, 0.1), eta=0.5, steps=500, seed=7),
    "rejection": TrainerConfig(mode="rejection", B=2, eta=0.5, steps=500, seed=7),
}


class TestConfig:
    @pytest.mark.parametrize("kwargs", [
        dict(mode="bogus", schedule=vanilla(2)),
        dict(mode="algorithm1"),
        dict(mode="rejection"),
        dict(mode="rejection", B=0),
        dict(mode="rejection", B=5, max_attempts=4),
        dict(schedule=vanilla(2), eta=-0.1),
        dict(schedule=vanilla(2), eta=float("nan")),
        dict(schedule=vanilla(2), steps=0),
        dict(schedule=vanilla(2), log_every=0),
        dict(schedule=vanilla(2), seed=-1),
        dict(schedule=vanilla(2), seed=2**64),
    ])
    def test_invalid(self, kwargs):
        with pytest.raises(ConfigurationError):
            TrainerConfig(**kwargs)

    def test_logged_objective_defaults(self):
        assert TrainerConfig(mode="rejection", B=1).logged_objective is RefTransform.LOG
        assert TrainerConfig(schedule=grpo(3, 0.1)).logged_objective.label == "grpo"
        cfg = TrainerConfig(schedule=vanilla(2), objective=RefTransform.LOGIT)
        assert cfg.logged_objective is RefTransform.LOGIT


class TestTrain:
    def test_zero_step_size_leaves_policy(self):
        pol, corpus = two_arm()
        traj = train(pol, corpus, TrainerConfig(schedule=vanilla(4), eta=0.0, steps=1))
        assert np.all(pol.theta == 0.0)
        assert len(traj) == 1

    @pytest.mark.parametrize("name", list(CONVERGENCE))
    def test_convergence(self, name):
        pol, corpus = two_arm()
        train(pol, corpus, CONVERGENCE[name])
        assert p_correct(pol, corpus[0]) > 0.99

    @pytest.mark.parametrize("name", list(CONVERGENCE))
    def test_determinism(self, name, rng):
        pol, corpus = make_instance(rng, 4, prompts=3)
        if name != "rejection":
            cfg = TrainerConfig(schedule=CONVERGENCE[name].schedule, eta=0.3, steps=200, seed=123)
        else:
            cfg = TrainerConfig(mode="rejection", B=2, eta=0.3, steps=200, seed=123)
        a, b = pol.copy(), pol.copy()
        ta, tb = train(a, corpus, cfg), train(b, corpus, cfg)
        assert ta == tb
        assert np.array_equal(a.theta, b.theta)
        bufa, bufb = io.StringIO(), io.StringIO()
        ta.write_csv(bufa)
        tb.write_csv(bufb)
        assert bufa.getvalue() == bufb.getvalue()

    def test_different_seeds_differ(self, rng):
        pol, corpus = make_instance(rng, 4, prompts=3)
        a, b = pol.copy(), pol.copy()
        train(a, corpus, TrainerConfig(schedule=vanilla(3), steps=50, seed=1))
        train(b, corpus, TrainerConfig(schedule=vanilla(3), steps=50, seed=2))
        assert not np.array_equal(a.theta, b.theta)

    def test_records(self, rng):
        pol, corpus = make_instance(rng, 3, prompts=2)
        traj = train(pol, corpus, TrainerConfig(schedule=grpo(4, 0.1), steps=20, log_every=5))
        assert [r.step for r in traj.records] == [5, 10, 15, 20]
        for r in traj.records:
            assert 0.0 <= r.p_correct <= 1.0
            assert r.prompt_id in {"x0", "x1"}
            assert not r.skipped and r.grad_norm >= 0

    def test_records_value_before_update(self):
        pol, corpus = two_arm()
        traj = train(pol, corpus, TrainerConfig(schedule=vanilla(4), eta=0.5, steps=3))
        assert traj.records[0].p_correct == 0.5
        assert traj.records[0].objective == pytest.approx(0.5, abs=1e-15)

    def test_prompt_weights(self):
        corpus = Corpus([PromptTask("a", 2, frozenset({0})), PromptTask("b", 2, frozenset({0}))],
                        weights=[1.0, 0.0])
        pol = TabularPolicy.zeros(corpus)
        traj = train(pol, corpus, TrainerConfig(schedule=vanilla(2), steps=50))
        assert {r.prompt_id for r in traj.records} == {"a"}
        assert np.all(pol.theta[2:] == 0)

    def test_rejection_skips(self):
        corpus = Corpus([PromptTask("q", 2, frozenset({0}))])
        pol = TabularPolicy.from_logits(corpus, [[-40.0, 0.0]])
        traj = train(pol, corpus, TrainerConfig(mode="rejection", B=1, max_attempts=10, steps=5))
        assert [r.skipped for r in traj.records] == [True] * 5
        assert [r.step for r in traj.records] == [1, 2, 3, 4, 5]
        assert np.array_equal(pol.theta, [-40.0, 0.0])

    def test_rejection_rejects_empty_correct_set(self):
        corpus = Corpus([PromptTask("a", 2, frozenset({0})), PromptTask("b", 3)])
        pol = TabularPolicy.zeros(corpus)
        with pytest.raises(ConfigurationError, match="empty correct set"):
            train(pol, corpus, TrainerConfig(mode="rejection", B=1, steps=1))
        assert np.all(pol.theta == 0)

    def test_divergence(self):
        pol, corpus = two_arm()
        huge = AdvantageSchedule(1, (0.0,), (1e300,), "huge")
        with pytest.raises(DivergenceError) as info:
            train(pol, corpus, TrainerConfig(schedule=huge, eta=1e10, steps=50, seed=3))
        # the first correct sample overflows; it is drawn with probability 1/2 per step
        assert 1 <= info.value.step <= 50

    def test_csv(self):
        pol, corpus = two_arm()
        traj = train(pol, corpus, TrainerConfig(schedule=vanilla(2), steps=2))
        buf = io.StringIO()
        traj.write_csv(buf)
        lines = buf.getvalue().splitlines()
        assert lines[0] == ",".join(TRAJECTORY_HEADER)
        assert lines[1].startswith("1,q,0.5,0.5,")
        assert len(lines) == 3


class TestExpectedUpdate:
    def test_vanilla(self, rng):
        pol, corpus = make_instance(rng, 3, prompts=2)
        assert expected_update_check(pol, corpus, TrainerConfig(schedule=vanilla(4))) <= 1e-12

    @pytest.mark.parametrize("sched", [grpo(4, 0.1), mean_of_correct(4)], ids=lambda s: s.label)
    def test_induced(self, rng, sched):
        pol, corpus = make_instance(rng, 3, prompts=2)
        assert expected_update_check(pol, corpus, TrainerConfig(schedule=sched)) <= 1e-10

    def test_rejection(self, rng):
        pol, corpus = make_instance(rng, 4, prompts=2)
        assert expected_update_check(pol, corpus, TrainerConfig(mode="rejection", B=3)) <= 1e-12

    def test_budget(self, rng):
        pol, corpus = make_instance(rng, 10)
        with pytest.raises(BudgetExceededError):
            expected_update_check(pol, corpus, TrainerConfig(schedule=vanilla(5)), budget=1000)

    @pytest.mark.parametrize("sched", builtin_schedules(4), ids=lambda s: s.label)
    def test_ascent_in_expectation(self, rng, sched):
        for _ in range(10):
            pol, corpus = make_instance(rng, 3, scale=2.0)
            pc = p_correct(pol, corpus[0])
            assert 0 < pc < 1
            g = expected_update(pol, corpus, TrainerConfig(schedule=sched))
            assert g @ grad_p_correct(pol, corpus[0]) > 0

    @pytest.mark.parametrize("sched", builtin_schedules(4), ids=lambda s: s.label)
    def test_optimum_is_fixed_point(self, rng, sched):
        corpus = Corpus([PromptTask("q", 3, frozenset({0, 1, 2}))])
        pol = TabularPolicy.from_logits(corpus, [rng.standard_normal(3)])
        g = expected_update(pol, corpus, TrainerConfig(schedule=sched))
        assert np.max(np.abs(g)) <= 1e-15
