import numpy as np
import pytest

from tailmc.data import FrequencyTable, compute_frequencies, split
from tailmc.synthgen import apply_mask, full_matrix, generate_lowrank


def lowrank_split(n=50, m=40, rank=2, density=0.6, seed=0, val=0.2, test=0.2):
    P, Q = generate_lowrank(n, m, rank, seed)
    full = full_matrix(P, Q)
    ds = apply_mask(full, density=density, seed=seed)
    return split(ds, val, test, seed=seed)


def flat_freq(n_users, n_items, user_counts=None, item_counts=None):
    uf = np.asarray(user_counts if user_counts is not None else np.ones(n_users), dtype=np.int64)
    itf = np.asarray(item_counts if item_counts is not None else np.ones(n_items), dtype=np.int64)
    return FrequencyTable(uf, itf, uf / uf.max(), itf / itf.max())


@pytest.fixture(scope="session")
def small_split():
    tr, va, te = lowrank_split()
    return tr, va, te, compute_frequencies(tr)


_VERDICTS = {}


@pytest.fixture
def verdict():
    """Record one acceptance line, echo it, and fail the test when the criterion fails."""

    def record(number, ok, detail):
        line = f"criterion {number:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
        _VERDICTS[number] = line
        print(line)
        assert ok, line

    return record


def pytest_terminal_summary(terminalreporter):
    if _VERDICTS:
        terminalreporter.section("acceptance criteria")
        for number in sorted(_VERDICTS):
            terminalreporter.write_line(_VERDICTS[number])
