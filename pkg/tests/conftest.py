import numpy as np
import pytest

from tzsl.embedding_store import SemanticTable
from tzsl.projection import init_net


def random_table(rng, n_seen, n_unseen, dim):
    K = n_seen + n_unseen
    return SemanticTable(tuple(f"k{i}" for i in range(K)), tuple(f"class{i}" for i in range(K)),
                         rng.standard_normal((K, dim)), np.arange(K) < n_seen)


@pytest.fixture
def small_problem():
    """A 5->7->6 S2F net, a 3 seen / 2 unseen table and a batch of 8 features."""
    rng = np.random.default_rng(11)
    table = random_table(rng, 3, 2, 5)
    net = init_net("S2F", (5, 7, 6), seed=3)
    feats = rng.standard_normal((8, 6)) * 0.7
    return net, table, feats


ACCEPTANCE = {}


def record(criterion, ok, detail):
    """Store one acceptance verdict for the end-of-run summary."""
    ACCEPTANCE[criterion] = (bool(ok), detail)
    return ok


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}")
