"""Stochastic gradient estimators and exact-expectation oracles.

Two independent routes compute the mean of the Algorithm-1 group estimate:
``exact_expectation_oracle`` uses the closed form kappa(p) * grad p, while
``tuple_enumeration_oracle`` sums the estimator over every answer tuple with
its joint probability and never touches binomial or beta identities.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import BudgetExceededError, ConfigurationError, ObjectiveUndefinedError
from .policy import (
    PromptTask,
    TabularPolicy,
    grad_log_prob,
    grad_p_correct,
    p_correct,
    probs,
)
from .schedule import AdvantageSchedule
from .transform import eval_kappa, induced

DEFAULT_BUDGET = 10**7


@dataclass(frozen=True)
class GroupSample:
    x: int
    answers: np.ndarray
    rewards: np.ndarray
    loo: np.ndarray

    @property
    def n_correct(self) -> int:
        return int(self.rewards.sum())


@dataclass
class GradientEstimate:
    gradient: np.ndarray
    label: str
    M: int
    prompt_id: str
    n_correct: int
    seed: int | None = None
    attempts: int | None = None


@dataclass(frozen=True)
class Skip:
    """Signals that rejection sampling gave up; no update should be applied."""

    prompt_id: str
    attempts: int
    reason: str = "max_attempts"


def draw_answers(p: np.ndarray, size: int, rng: np.random.Generator) -> np.ndarray:
    """Inverse-cdf sampling of ``size`` i.i.d. answers from the categorical p."""
    cdf = np.cumsum(p)
    cdf[-1] = 1.0
    idx = np.searchsorted(cdf, rng.random(size), side="right")
    return np.minimum(idx, p.size - 1)


def make_group(pol: TabularPolicy, task: PromptTask, answers) -> GroupSample:
    x = pol.prompt_index(task)
    answers = np.asarray(answers, dtype=np.int64)
    rewards = task.correct_mask[answers].astype(np.int64)
    return GroupSample(x, answers, rewards, rewards.sum() - rewards)


def sample_group(pol: TabularPolicy, task: PromptTask, M: int, rng: np.random.Generator) -> GroupSample:
    if M < 1:
        raise ConfigurationError("group size must be positive")
    x = pol.prompt_index(task)
    return make_group(pol, task, draw_answers(probs(pol, x), M, rng))


def group_gradient(pol: TabularPolicy, sched: AdvantageSchedule, group: GroupSample) -> np.ndarray:
    """(1/M) sum_i Z_i grad log pi(y_i | x) for a concrete group."""
    M = group.answers.size
    if sched.M != M:
        raise ConfigurationError(f"schedule has M={sched.M} but the group has {M} answers")
    g = np.zeros(pol.size)
    for y, R, S in zip(group.answers, group.rewards, group.loo):
        z = float(sched.advantage(int(R), int(S)))
        if z != 0.0:
            g += z * grad_log_prob(pol, group.x, int(y))
    return g / M


def algorithm1_estimate(pol: TabularPolicy, task: PromptTask, sched: AdvantageSchedule,
                        rng: np.random.Generator, seed: int | None = None) -> GradientEstimate:
    group = sample_group(pol, task, sched.M, rng)
    return GradientEstimate(group_gradient(pol, sched, group), sched.label, sched.M,
                            task.id, group.n_correct, seed)


def algorithm1_batch(pol: TabularPolicy, task: PromptTask, sched: AdvantageSchedule,
                     rng: np.random.Generator, n: int) -> np.ndarray:
    """``n`` independent group estimates restricted to the prompt's row, shape (n, V).

    Vectorized for Monte Carlo work; each row equals ``group_gradient`` on the
    corresponding group.
    """
    x = pol.prompt_index(task)
    p = probs(pol, x)
    V, M = p.size, sched.M
    answers = draw_answers(p, n * M, rng).reshape(n, M)
    rewards = task.correct_mask[answers].astype(np.int64)
    Z = sched.group_advantages(rewards)
    counts = np.zeros((n, V))
    np.add.at(counts, (np.repeat(np.arange(n), M), answers.ravel()), Z.ravel())
    return (counts - Z.sum(axis=1, keepdims=True) * p) / M


def exact_expectation_oracle(pol: TabularPolicy, task: PromptTask, sched: AdvantageSchedule) -> np.ndarray:
    """kappa(p) * grad p(C|x), the closed-form mean of the group estimate."""
    return float(eval_kappa(induced(sched), p_correct(pol, task))) * grad_p_correct(pol, task)


def tuple_enumeration_oracle(pol: TabularPolicy, task: PromptTask, sched: AdvantageSchedule,
                             budget: int = DEFAULT_BUDGET, chunk: int | None = None) -> np.ndarray:
    """Exact mean of the group estimate by summing over all V^M answer tuples.

    Tuples are processed ``chunk`` at a time (default about 4096 samples per
    chunk); the per-chunk totals are combined with fsum so rounding stays near
    machine precision even for millions of tuples.
    """
    x = pol.prompt_index(task)
    p = probs(pol, x)
    V, M = p.size, sched.M
    required = V**M
    if required > budget:
        raise BudgetExceededError(required, budget)
    if chunk is None:
        chunk = max(1, 4096 // M)
    mask = task.correct_mask
    a, b = sched.a_array, sched.b_array
    powers = V ** np.arange(M - 1, -1, -1)
    counts: list[np.ndarray] = []
    totals: list[float] = []
    for start in range(0, required, chunk):
        codes = np.arange(start, min(start + chunk, required))
        answers = (codes[:, None] // powers) % V
        weight = np.prod(p[answers], axis=1)
        R = mask[answers].astype(np.int64)
        S = R.sum(axis=1, keepdims=True) - R
        wz = weight[:, None] * np.where(R == 1, b[S], a[S])
        counts.append(np.bincount(answers.ravel(), weights=wz.ravel(), minlength=V))
        totals.append(float(wz.sum()))
    acc = np.array([math.fsum(col) for col in zip(*counts)])
    g = np.zeros(pol.size)
    g[pol.row_slice(x)] = (acc - math.fsum(totals) * p) / M
    return g


def conditional_expectation_oracle(pol: TabularPolicy, task: PromptTask) -> np.ndarray:
    """E[grad log pi(y|x) | y in C(x)] = grad log p(C|x)."""
    pc = p_correct(pol, task)
    if pc <= 0.0:
        raise ObjectiveUndefinedError("conditional expectation undefined: p(C|x) = 0")
    x = pol.prompt_index(task)
    p = probs(pol, x)
    g = np.zeros(pol.size)
    for y in sorted(task.correct):
        g += (p[y] / pc) * grad_log_prob(pol, x, y)
    return g


def rejection_to_B_estimate(pol: TabularPolicy, task: PromptTask, B: int, max_attempts: int,
                            rng: np.random.Generator, chunk: int = 32):
    """Sample until B correct answers appear and average their score vectors.

    Returns a GradientEstimate, or a Skip if the correct set is empty or
    ``max_attempts`` draws pass without B successes. Draws are made in blocks of
    ``chunk``; draws after the B-th success are discarded.
    """
    if B < 1 or max_attempts < B:
        raise ConfigurationError("need B >= 1 and max_attempts >= B")
    if not task.correct:
        return Skip(task.id, 0, "empty_correct_set")
    x = pol.prompt_index(task)
    p = probs(pol, x)
    mask = task.correct_mask
    found: list[int] = []
    attempts = 0
    while attempts < max_attempts:
        n = min(chunk, max_attempts - attempts)
        draws = draw_answers(p, n, rng)
        hits = np.flatnonzero(mask[draws])
        need = B - len(found)
        if hits.size >= need:
            last = hits[need - 1]
            found.extend(int(y) for y in draws[hits[:need]])
            attempts += int(last) + 1
            counts = np.bincount(found, minlength=p.size)
            g = np.zeros(pol.size)
            g[pol.row_slice(x)] = counts / B - p
            return GradientEstimate(g, "rejection", B, task.id, B, attempts=attempts)
        found.extend(int(y) for y in draws[hits])
        attempts += n
    return Skip(task.id, attempts)
