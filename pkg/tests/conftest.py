import numpy as np
import pytest

from rlobjective.policy import Corpus, PromptTask, TabularPolicy

ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def rng():
    return np.random.default_rng(20240917)


def make_instance(rng, V, correct=None, scale=1.0, prompts=1):
    tasks, rows = [], []
    for i in range(prompts):
        if correct is None:
            k = int(rng.integers(1, V)) if V > 1 else 1
            c = frozenset(int(j) for j in rng.choice(V, size=k, replace=False))
        else:
            c = frozenset(correct)
        tasks.append(PromptTask(f"x{i}", V, c))
        rows.append(scale * rng.standard_normal(V))
    corpus = Corpus(tasks)
    return TabularPolicy.from_logits(corpus, rows), corpus


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
