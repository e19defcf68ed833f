import numpy as np
import pytest

from tacorl.corpus import Vocabulary, tokenize
from tacorl.policy import Dims, init_params


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def small_params():
    return init_params(0, Dims(20, 6, 1))


@pytest.fixture
def vocab():
    return Vocabulary.build(["the cat sat on the mat . a dog ran !", "birds fly south in winter ?"])


@pytest.fixture
def seq(vocab):
    return tokenize("the cat sat on the mat .", vocab)


# acceptance criteria register one verdict line each; repeated in the terminal summary
ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def verdict():
    def record(number: int, ok: bool, detail: str) -> None:
        line = f"[{'PASS' if ok else 'FAIL'}] criterion {number}: {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split("criterion ")[1].split(":")[0])):
            terminalreporter.write_line(line)
