"""Deterministic oracle suite behind the ``verify`` subcommand.

Every check compares two independently computed quantities (enumeration vs
closed form, finite differences vs analytic gradients, summation vs closed-form
identities). Random policies come from a seeded generator.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import BudgetExceededError
from .estimator import (
    conditional_expectation_oracle,
    exact_expectation_oracle,
    group_gradient,
    make_group,
    tuple_enumeration_oracle,
)
from .policy import Corpus, PromptTask, TabularPolicy, finite_diff_check, grad_log_prob, p_correct
from .schedule import builtin_schedules, mean_of_correct, vanilla
from .specfun import RefTransform, harmonic
from .trainer import TrainerConfig, expected_update_check
from .transform import eval_h, eval_kappa, induced, rejection_closed_form, uniform_grid


@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    worst: float
    tolerance: float
    detail: str = ""


def random_instance(rng: np.random.Generator, V: int, n_correct: int | None = None,
                    scale: float = 1.0) -> tuple[TabularPolicy, Corpus]:
    """Single-prompt corpus with random logits and a random nonempty proper correct set."""
    if n_correct is None:
        n_correct = int(rng.integers(1, V)) if V > 1 else 1
    correct = frozenset(int(c) for c in rng.choice(V, size=n_correct, replace=False))
    corpus = Corpus([PromptTask("x0", V, correct)])
    pol = TabularPolicy.from_logits(corpus, [scale * rng.standard_normal(V)])
    return pol, corpus


def _result(name: str, worst: float, tol: float, detail: str = "") -> CheckResult:
    return CheckResult(name, bool(worst <= tol), worst, tol, detail)


def check_enumeration(rng, budget: int, policies: int = 3) -> CheckResult:
    worst, where = 0.0, ""
    for V in (2, 3, 4):
        for M in (1, 2, 3, 4):
            if V**M > budget:
                continue
            for sched in builtin_schedules(M):
                for _ in range(policies):
                    pol, corpus = random_instance(rng, V)
                    closed = exact_expectation_oracle(pol, corpus[0], sched)
                    enum = tuple_enumeration_oracle(pol, corpus[0], sched, budget)
                    err = float(np.max(np.abs(enum - closed) / (1.0 + np.abs(closed))))
                    if err > worst:
                        worst, where = err, f"{sched.label} V={V} M={M}"
    return _result("enumeration_vs_closed_form", worst, 1e-12, where)


def check_vanilla_identity() -> CheckResult:
    grid = uniform_grid()
    worst = max(abs(eval_h(induced(vanilla(M)), t) - t) for M in (1, 2, 8, 64) for t in grid)
    return _result("vanilla_h_is_identity", worst, 1e-12)


def check_rejection_closed_form() -> CheckResult:
    grid = uniform_grid(100, 0.01, 1.0)
    worst = 0.0
    for M in (1, 2, 4, 8, 16, 64):
        tr = induced(mean_of_correct(M))
        worst = max(worst, abs(eval_h(tr, 1.0) - harmonic(M)))
        worst = max(worst, max(abs(eval_h(tr, t) - rejection_closed_form(M, t)) for t in grid))
    return _result("rejection_closed_form", worst, 1e-9)


def check_fast_vs_direct() -> CheckResult:
    worst = 0.0
    for M in (1, 2, 8, 64, 300):
        for sched in builtin_schedules(M):
            tr = induced(sched)
            for t in (0.01, 0.3, 0.5, 0.77, 0.99):
                worst = max(worst, abs(eval_h(tr, t) - eval_h(tr, t, method="direct")))
    return _result("fast_vs_direct_h", worst, 1e-10)


def check_derivative_consistency(delta: float = 1e-6) -> CheckResult:
    worst, where = 0.0, ""
    for M in (2, 4, 8, 32):
        for sched in builtin_schedules(M):
            tr = induced(sched)
            for i in range(1, 20):
                t = 0.05 * i
                fd = (eval_h(tr, t + delta) - eval_h(tr, t - delta)) / (2 * delta)
                k = eval_kappa(tr, t)
                err = abs(k - fd) / max(1.0, abs(k))
                if err > worst:
                    worst, where = err, f"{sched.label} M={M} t={t:.2f}"
    return _result("kappa_matches_dh_dt", worst, 1e-4, where)


def check_finite_differences(rng, instances: int = 5) -> CheckResult:
    worst, where = 0.0, ""
    transforms: list[Callable] = [lambda: RefTransform.IDENTITY, lambda: RefTransform.LOG]
    transforms += [lambda s=s: induced(s) for M in (1, 4, 8, 32) for s in builtin_schedules(M)]
    for _ in range(instances):
        pol, corpus = random_instance(rng, int(rng.integers(2, 6)))
        for make in transforms:
            h = make()
            err = finite_diff_check(pol, corpus, h)
            if err > worst:
                worst, where = err, getattr(h, "label", str(h))
    return _result("finite_difference_gradients", worst, 1e-5, where)


def check_conditional_oracle(rng, instances: int = 5, step: float = 1e-5) -> CheckResult:
    worst = 0.0
    for _ in range(instances):
        pol, corpus = random_instance(rng, 5)
        task = corpus[0]
        g = conditional_expectation_oracle(pol, task)
        probe = pol.copy()
        for k in range(pol.size):
            base = probe.theta[k]
            probe.theta[k] = base + step
            up = math.log(p_correct(probe, task))
            probe.theta[k] = base - step
            down = math.log(p_correct(probe, task))
            probe.theta[k] = base
            worst = max(worst, abs((up - down) / (2 * step) - g[k]))
    return _result("conditional_expectation_is_grad_log_p", worst, 1e-5)


def check_mean_of_correct_groups(rng, groups: int = 200) -> CheckResult:
    worst = 0.0
    M = 8
    sched = mean_of_correct(M)
    for _ in range(groups):
        pol, corpus = random_instance(rng, 4)
        task = corpus[0]
        group = make_group(pol, task, rng.integers(0, 4, size=M))
        via_z = group_gradient(pol, sched, group)
        correct = [int(y) for y, r in zip(group.answers, group.rewards) if r]
        direct = np.zeros(pol.size)
        if correct:
            direct = sum(grad_log_prob(pol, group.x, y) for y in correct) / len(correct)
        worst = max(worst, float(np.max(np.abs(via_z - direct))))
    return _result("mean_of_correct_is_mean_over_correct", worst, 1e-12)


def check_expected_update(rng, budget: int) -> CheckResult:
    worst, where = 0.0, ""
    for sched in builtin_schedules(4):
        pol, corpus = random_instance(rng, 3)
        cfg = TrainerConfig(schedule=sched)
        try:
            err = expected_update_check(pol, corpus, cfg, budget)
        except BudgetExceededError:
            continue
        if err > worst:
            worst, where = err, sched.label
    pol, corpus = random_instance(rng, 3)
    err = expected_update_check(pol, corpus, TrainerConfig(mode="rejection", B=2))
    if err > worst:
        worst, where = err, "rejection"
    return _result("expected_update_is_grad_J", worst, 1e-10, where)


def run_checks(budget: int = 10**5, seed: int = 0) -> list[CheckResult]:
    rng = np.random.default_rng(seed)
    return [
        check_enumeration(rng, budget),
        check_vanilla_identity(),
        check_rejection_closed_form(),
        check_fast_vs_direct(),
        check_derivative_consistency(),
        check_finite_differences(rng),
        check_conditional_oracle(rng),
        check_mean_of_correct_groups(rng),
        check_expected_update(rng, budget),
    ]
