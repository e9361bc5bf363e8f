"""Plain stochastic gradient ascent over a corpus of prompts."""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from typing import TextIO

import numpy as np

from .errors import ConfigurationError, DivergenceError
from .estimator import (
    DEFAULT_BUDGET,
    Skip,
    algorithm1_estimate,
    conditional_expectation_oracle,
    draw_answers,
    rejection_to_B_estimate,
    tuple_enumeration_oracle,
)
from .policy import Corpus, TabularPolicy, Transform, exact_grad_objective, exact_objective, p_correct
from .schedule import AdvantageSchedule
from .specfun import RefTransform
from .transform import induced

log = logging.getLogger(__name__)

MODES = ("algorithm1", "rejection")
TRAJECTORY_HEADER = ("step", "prompt_id", "p_correct", "objective", "grad_norm", "skipped")


@dataclass(frozen=True)
class TrainerConfig:
    mode: str = "algorithm1"
    schedule: AdvantageSchedule | None = None
    B: int | None = None
    max_attempts: int = 10_000
    eta: float = 0.1
    steps: int = 100
    seed: int = 0
    log_every: int = 1
    objective: Transform | None = None

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigurationError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.mode == "algorithm1" and self.schedule is None:
            raise ConfigurationError("algorithm1 mode needs a schedule")
        if self.mode == "rejection":
            if self.B is None or self.B < 1:
                raise ConfigurationError("rejection mode needs B >= 1")
            if self.max_attempts < self.B:
                raise ConfigurationError("max_attempts must be at least B")
        if not (self.eta >= 0 and math.isfinite(self.eta)):
            raise ConfigurationError(f"step size must be nonnegative and finite, got {self.eta}")
        if self.steps < 1:
            raise ConfigurationError("steps must be at least 1")
        if self.log_every < 1:
            raise ConfigurationError("log_every must be at least 1")
        if not 0 <= self.seed < 2**64:
            raise ConfigurationError("seed must be a 64-bit unsigned integer")

    @property
    def logged_objective(self) -> Transform:
        if self.objective is not None:
            return self.objective
        if self.mode == "rejection":
            return RefTransform.LOG
        return induced(self.schedule)


@dataclass(frozen=True)
class StepRecord:
    step: int
    prompt_id: str
    p_correct: float
    objective: float
    grad_norm: float
    skipped: bool


@dataclass
class Trajectory:
    records: list[StepRecord] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.records)

    def write_csv(self, fh: TextIO) -> None:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(TRAJECTORY_HEADER)
        for r in self.records:
            writer.writerow((r.step, r.prompt_id, format(r.p_correct, ".17g"),
                             format(r.objective, ".17g"), format(r.grad_norm, ".17g"),
                             int(r.skipped)))


def _streams(seed: int) -> tuple[np.random.Generator, np.random.Generator]:
    prompt_ss, answer_ss = np.random.SeedSequence(seed).spawn(2)
    return np.random.default_rng(prompt_ss), np.random.default_rng(answer_ss)


def validate(corpus: Corpus, cfg: TrainerConfig) -> None:
    if cfg.mode == "rejection":
        empty = [t.id for t in corpus if not t.correct]
        if empty:
            raise ConfigurationError(
                f"rejection mode cannot train on tasks with an empty correct set: {empty}"
            )
    if cfg.schedule is not None and cfg.mode == "algorithm1":
        for t in corpus:
            if not t.correct:
                log.warning("task %r has no correct answers; its updates are always zero", t.id)


def train(pol: TabularPolicy, corpus: Corpus, cfg: TrainerConfig) -> Trajectory:
    """Run ``cfg.steps`` updates theta <- theta + eta * g in place on ``pol``.

    Prompt choice and answer sampling draw from two streams spawned from the
    seed, so the run is a deterministic function of (pol, corpus, cfg).
    """
    validate(corpus, cfg)
    for task in corpus:
        pol.prompt_index(task)
    prompt_rng, answer_rng = _streams(cfg.seed)
    weights = corpus.probabilities
    objective = cfg.logged_objective
    traj = Trajectory()
    for step in range(1, cfg.steps + 1):
        task = corpus[int(draw_answers(weights, 1, prompt_rng)[0])]
        logged = step % cfg.log_every == 0
        if logged:
            p_before = p_correct(pol, task)
            obj = exact_objective(pol, corpus, objective)
        if cfg.mode == "algorithm1":
            est = algorithm1_estimate(pol, task, cfg.schedule, answer_rng, seed=cfg.seed)
        else:
            est = rejection_to_B_estimate(pol, task, cfg.B, cfg.max_attempts, answer_rng)
        skipped = isinstance(est, Skip)
        norm = 0.0
        if not skipped:
            with np.errstate(over="ignore", invalid="ignore"):
                pol.theta += cfg.eta * est.gradient
            if not np.all(np.isfinite(pol.theta)):
                raise DivergenceError(step)
            norm = float(np.linalg.norm(est.gradient))
        if logged:
            traj.records.append(StepRecord(step, task.id, p_before, obj, norm, skipped))
            log.debug("step %d prompt %s p=%.6f J=%.6f |g|=%.3g%s", step, task.id, p_before,
                      obj, norm, " (skipped)" if skipped else "")
    return traj


def expected_update(pol: TabularPolicy, corpus: Corpus, cfg: TrainerConfig,
                    budget: int = DEFAULT_BUDGET) -> np.ndarray:
    """Mean update direction (before the step size) over prompts and samples.

    Algorithm-1 mode enumerates all answer tuples; rejection mode uses the exact
    conditional expectation over the correct set.
    """
    g = np.zeros(pol.size)
    for w, task in zip(corpus.probabilities, corpus):
        if w == 0:
            continue
        if cfg.mode == "algorithm1":
            g += w * tuple_enumeration_oracle(pol, task, cfg.schedule, budget)
        else:
            g += w * conditional_expectation_oracle(pol, task)
    return g


def expected_update_check(pol: TabularPolicy, corpus: Corpus, cfg: TrainerConfig,
                          budget: int = DEFAULT_BUDGET) -> float:
    """Max entry-wise gap between the mean update and grad J_h for the implied h."""
    target = RefTransform.LOG if cfg.mode == "rejection" else induced(cfg.schedule)
    gap = expected_update(pol, corpus, cfg, budget) - exact_grad_objective(pol, corpus, target)
    return float(np.max(np.abs(gap))) if gap.size else 0.0
