import numpy as np
import pytest

from glimpsekit.core import OracleModel, Vocabulary
from glimpsekit import synthetic


def table_walk(table, cls, target):
    """Independent product of transition-table entries along ``target``."""
    p = 1.0
    for a, b in zip(target[:-1], target[1:]):
        p *= float(table[cls][a][b])
    return p


@pytest.fixture
def small_oracle():
    return synthetic.random_oracle(np.random.default_rng(7), n_words=3, classes=3, eos_mass=0.35)


@pytest.fixture
def two_class_oracle():
    """Class 0 prefers the specific word, class 1 strongly prefers the generic word.

    Token ids: 3 = 'generic', 4 = 'specific'.  Sources (3,) -> class 1, (4,) -> class 0.
    """
    vocab = Vocabulary.from_tokens(["generic", "specific"])
    table = np.zeros((2, 5, 5))
    for c, (pg, ps) in enumerate([(0.6, 0.4), (0.9, 0.1)]):
        for t in (0, 2, 3, 4):
            table[c, t, 1] = 1.0 if t in (3, 4) else 0.0
        table[c, 0, 3], table[c, 0, 4] = pg, ps
        table[c, 2, 1] = 1.0
    return OracleModel(vocab, table, [(4,), (3,)], [0.5, 0.5])


def pytest_terminal_summary(terminalreporter):
    """Print one pass/fail line per acceptance criterion that ran."""
    import sys
    module = sys.modules.get("test_acceptance")
    results = getattr(module, "RESULTS", None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(results):
        terminalreporter.write_line(results[n])
