import numpy as np
import pytest

from cslm.corpus import Lang, Vocabulary, build_vocabulary


def make_vocab(n1: int, n2: int) -> Vocabulary:
    """L1 words x00.., L2 words y00..; frequency decreases with the index."""
    sents = [[(f"x{i:02d}", Lang.L1)] * (100 - i) for i in range(n1)]
    sents += [[(f"y{i:02d}", Lang.L2)] * (100 - i) for i in range(n2)]
    return build_vocabulary(sents)


@pytest.fixture
def vocab():
    return make_vocab(5, 4)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# one line per acceptance criterion, echoed in the terminal summary
ACCEPTANCE: list[str] = []


@pytest.fixture
def criterion():
    def report(name: str, ok: bool, detail: str = "") -> bool:
        line = f"criterion {name}: {'PASS' if ok else 'FAIL'}" + (f"  {detail}" if detail else "")
        ACCEPTANCE.append(line)
        print(line)
        return ok
    return report


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE:
            terminalreporter.write_line(line)
