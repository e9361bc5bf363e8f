"""Tabular softmax policies over finite answer sets.

Each prompt x owns a row of V_x free logits. All rows are stored back to back in
one flat parameter vector so gradients, updates and finite differences are plain
vector operations.
"""
from __future__ import annotations

import csv
import math
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Protocol, Sequence, TextIO

import numpy as np

from .errors import ConfigurationError, ObjectiveUndefinedError

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib


class Transform(Protocol):
    def evaluate(self, t: float) -> float: ...

    def derivative(self, t: float) -> float: ...


@dataclass(frozen=True)
class PromptTask:
    id: str
    vocab_size: int
    correct: frozenset = field(default_factory=frozenset)

    def __post_init__(self):
        if self.vocab_size < 1:
            raise ConfigurationError(f"task {self.id!r}: vocab_size must be positive")
        correct = frozenset(int(c) for c in self.correct)
        bad = [c for c in correct if not 0 <= c < self.vocab_size]
        if bad:
            raise ConfigurationError(
                f"task {self.id!r}: correct indices {sorted(bad)} outside 0..{self.vocab_size - 1}"
            )
        object.__setattr__(self, "correct", correct)

    @property
    def correct_mask(self) -> np.ndarray:
        mask = np.zeros(self.vocab_size, dtype=bool)
        mask[list(self.correct)] = True
        return mask


class Corpus:
    def __init__(self, tasks: Sequence[PromptTask], weights: Sequence[float] | None = None):
        if not tasks:
            raise ConfigurationError("corpus must contain at least one task")
        ids = [t.id for t in tasks]
        if len(set(ids)) != len(ids):
            raise ConfigurationError("task ids must be unique")
        w = np.ones(len(tasks)) if weights is None else np.asarray(weights, dtype=float)
        if w.shape != (len(tasks),) or np.any(w < 0) or not np.all(np.isfinite(w)) or w.sum() <= 0:
            raise ConfigurationError("weights must be nonnegative, finite, one per task, with positive sum")
        self.tasks = list(tasks)
        self.weights = w

    @property
    def probabilities(self) -> np.ndarray:
        return self.weights / self.weights.sum()

    def __len__(self) -> int:
        return len(self.tasks)

    def __iter__(self):
        return iter(self.tasks)

    def __getitem__(self, i: int) -> PromptTask:
        return self.tasks[i]


def corpus_from_dict(doc: dict) -> Corpus:
    entries = doc.get("tasks")
    if not entries:
        raise ConfigurationError("corpus document needs a non-empty [[tasks]] array")
    tasks, weights = [], []
    for i, entry in enumerate(entries):
        unknown = set(entry) - {"id", "vocab_size", "correct", "weight"}
        if unknown:
            raise ConfigurationError(f"task {i}: unknown keys {sorted(unknown)}")
        try:
            tasks.append(PromptTask(str(entry["id"]), int(entry["vocab_size"]),
                                    frozenset(entry.get("correct", []))))
        except KeyError as exc:
            raise ConfigurationError(f"task {i}: missing {exc.args[0]!r}") from None
        weights.append(float(entry.get("weight", 1.0)))
    return Corpus(tasks, weights)


def load_corpus(path: str | Path) -> Corpus:
    with open(path, "rb") as fh:
        try:
            doc = tomllib.load(fh)
        except tomllib.TOMLDecodeError as exc:
            raise ConfigurationError(f"{path}: {exc}") from None
    return corpus_from_dict(doc)


class TabularPolicy:
    """Softmax policy with one logit per (prompt, answer) pair."""

    def __init__(self, ids: Sequence[str], vocab_sizes: Sequence[int], theta=None):
        self.ids = list(ids)
        self.vocab_sizes = [int(v) for v in vocab_sizes]
        self.offsets = np.concatenate([[0], np.cumsum(self.vocab_sizes)]).astype(int)
        self.index = {pid: i for i, pid in enumerate(self.ids)}
        n = int(self.offsets[-1])
        if theta is None:
            theta = np.zeros(n)
        theta = np.array(theta, dtype=float)
        if theta.shape != (n,):
            raise ValueError(f"expected {n} parameters, got shape {theta.shape}")
        if not np.all(np.isfinite(theta)):
            raise ValueError("logits must be finite")
        self.theta = theta

    @classmethod
    def zeros(cls, corpus: Corpus) -> "TabularPolicy":
        return cls([t.id for t in corpus], [t.vocab_size for t in corpus])

    @classmethod
    def from_logits(cls, corpus: Corpus, rows: Sequence[Sequence[float]]) -> "TabularPolicy":
        rows = [np.asarray(r, dtype=float) for r in rows]
        for task, r in zip(corpus, rows):
            if r.shape != (task.vocab_size,):
                raise ValueError(f"row for {task.id!r} must have {task.vocab_size} logits")
        return cls([t.id for t in corpus], [t.vocab_size for t in corpus], np.concatenate(rows))

    @property
    def size(self) -> int:
        return self.theta.size

    def copy(self) -> "TabularPolicy":
        return TabularPolicy(self.ids, self.vocab_sizes, self.theta.copy())

    def row_slice(self, x: int) -> slice:
        if not 0 <= x < len(self.ids):
            raise IndexError(f"prompt index {x} out of range")
        return slice(self.offsets[x], self.offsets[x + 1])

    def row(self, x: int) -> np.ndarray:
        return self.theta[self.row_slice(x)]

    def prompt_index(self, task: PromptTask) -> int:
        try:
            x = self.index[task.id]
        except KeyError:
            raise ConfigurationError(f"policy has no prompt {task.id!r}") from None
        if self.vocab_sizes[x] != task.vocab_size:
            raise ConfigurationError(
                f"task {task.id!r} has vocab_size {task.vocab_size}, policy row has {self.vocab_sizes[x]}"
            )
        return x


def softmax(logits: np.ndarray) -> np.ndarray:
    z = np.exp(logits - np.max(logits))
    return z / z.sum()


def probs(pol: TabularPolicy, x: int) -> np.ndarray:
    return softmax(pol.row(x))


def p_correct(pol: TabularPolicy, task: PromptTask) -> float:
    """Probability that one sample for this prompt lands in the correct set."""
    p = probs(pol, pol.prompt_index(task))
    return float(math.fsum(p[list(task.correct)])) if task.correct else 0.0


def grad_log_prob(pol: TabularPolicy, x: int, y: int) -> np.ndarray:
    """Gradient of log pi(y|x): onehot(y) - pi(.|x) on row x, zero elsewhere."""
    sl = pol.row_slice(x)
    if not 0 <= y < pol.vocab_sizes[x]:
        raise IndexError(f"answer {y} out of range for prompt {x}")
    g = np.zeros(pol.size)
    row = -probs(pol, x)
    row[y] += 1.0
    g[sl] = row
    return g


def grad_p_correct(pol: TabularPolicy, task: PromptTask) -> np.ndarray:
    x = pol.prompt_index(task)
    p = probs(pol, x)
    mask = task.correct_mask
    pc = math.fsum(p[mask]) if task.correct else 0.0
    g = np.zeros(pol.size)
    g[pol.row_slice(x)] = p * mask - pc * p
    return g


def _h_value(h: Transform, t: float) -> float:
    try:
        v = float(h.evaluate(t))
    except (ObjectiveUndefinedError, ZeroDivisionError, ValueError) as exc:
        raise ObjectiveUndefinedError(f"objective undefined at p={t}: {exc}") from None
    if not math.isfinite(v):
        raise ObjectiveUndefinedError(f"objective undefined at p={t}")
    return v


def _h_slope(h: Transform, t: float) -> float:
    try:
        v = float(h.derivative(t))
    except (ObjectiveUndefinedError, ZeroDivisionError, ValueError) as exc:
        raise ObjectiveUndefinedError(f"objective gradient undefined at p={t}: {exc}") from None
    if not math.isfinite(v):
        raise ObjectiveUndefinedError(f"objective gradient undefined at p={t}")
    return v


def exact_objective(pol: TabularPolicy, corpus: Corpus, h: Transform) -> float:
    """J_h = sum_x w_x h(p(C|x)) with normalized prompt weights w."""
    w = corpus.probabilities
    return math.fsum(wx * _h_value(h, p_correct(pol, task)) for wx, task in zip(w, corpus) if wx > 0)


def exact_grad_objective(pol: TabularPolicy, corpus: Corpus, h: Transform) -> np.ndarray:
    g = np.zeros(pol.size)
    for wx, task in zip(corpus.probabilities, corpus):
        if wx > 0:
            g += wx * _h_slope(h, p_correct(pol, task)) * grad_p_correct(pol, task)
    return g


def finite_diff_check(pol: TabularPolicy, corpus: Corpus, h: Transform, step: float = 1e-5) -> float:
    """Worst |central difference - exact gradient| / max(1, |exact gradient|)."""
    if not step > 0:
        raise ValueError("step must be positive")
    exact = exact_grad_objective(pol, corpus, h)
    probe = pol.copy()
    worst = 0.0
    for k in range(pol.size):
        base = probe.theta[k]
        probe.theta[k] = base + step
        up = exact_objective(probe, corpus, h)
        probe.theta[k] = base - step
        down = exact_objective(probe, corpus, h)
        probe.theta[k] = base
        fd = (up - down) / (2 * step)
        worst = max(worst, abs(fd - exact[k]) / max(1.0, abs(exact[k])))
    return worst


# --- checkpoints ---------------------------------------------------------

def save_policy(pol: TabularPolicy, fh: TextIO) -> None:
    writer = csv.writer(fh, lineterminator="\n")
    writer.writerow(("prompt_id", "answer", "logit"))
    for x, pid in enumerate(pol.ids):
        for y, v in enumerate(pol.row(x)):
            writer.writerow((pid, y, format(float(v), ".17g")))


def load_policy(fh: Iterable[str], corpus: Corpus) -> TabularPolicy:
    pol = TabularPolicy.zeros(corpus)
    seen = set()
    reader = csv.DictReader(fh)
    for rec in reader:
        x = pol.index.get(rec["prompt_id"])
        if x is None:
            raise ConfigurationError(f"checkpoint prompt {rec['prompt_id']!r} not in corpus")
        y = int(rec["answer"])
        if not 0 <= y < pol.vocab_sizes[x]:
            raise ConfigurationError(f"checkpoint answer {y} out of range for {rec['prompt_id']!r}")
        pol.theta[pol.offsets[x] + y] = float(rec["logit"])
        seen.add((x, y))
    if len(seen) != pol.size:
        raise ConfigurationError("checkpoint does not cover every logit")
    return pol
