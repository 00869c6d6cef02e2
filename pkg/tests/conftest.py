"""Shared oracles and the acceptance summary hook.

The oracles here deliberately avoid the package's spin/field machinery:
codewords come from brute force over {0,1}^n and entropies from Bayes' rule
on the channel transition probabilities.
"""

import itertools
import math

import numpy as np
import pytest

ACCEPTANCE_LINES = []


def brute_codewords(H: np.ndarray, n: int) -> np.ndarray:
    words = np.array(list(itertools.product((0, 1), repeat=n)), dtype=np.int64)
    if H.size == 0:
        return words
    ok = np.all((words @ H.T.astype(np.int64)) % 2 == 0, axis=1)
    return words[ok]


def bayes_entropy(H: np.ndarray, n: int, channel_rows) -> float:
    """H(X|Y) in nats by enumerating codewords and output symbols.

    channel_rows[i] is a (2, m_i) transition matrix P(y_i | x_i) for bit i.
    """
    C = brute_codewords(H, n)
    sizes = [np.asarray(r).shape[1] for r in channel_rows]
    total = 0.0
    for y in itertools.product(*[range(m) for m in sizes]):
        lik = np.ones(len(C))
        for i, yi in enumerate(y):
            lik *= np.asarray(channel_rows[i])[C[:, i], yi]
        py = lik.sum() / len(C)
        if py == 0:
            continue
        post = lik / lik.sum()
        nz = post[post > 0]
        total += py * float(-(nz * np.log(nz)).sum())
    return total


def bsc_rows(eps):
    return np.array([[1 - eps, eps], [eps, 1 - eps]])


def bec_rows(eps):
    # outputs: 0, 1, erasure
    return np.array([[1 - eps, 0.0, eps], [0.0, 1 - eps, eps]])


@pytest.fixture
def acceptance():
    def record(k, ok, detail):
        line = f"criterion {k:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
