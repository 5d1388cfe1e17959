import numpy as np
import pytest

from graphwalk.weights import EdgeWeights


def random_connected_graph(rng, n, p_extra=0.4, wmin=0.1, wmax=2.0):
    """Spanning path plus random extra edges, positive weights."""
    perm = rng.permutation(n)
    edges = {tuple(sorted((int(perm[i]), int(perm[i + 1])))) for i in range(n - 1)}
    for j in range(n):
        for k in range(j + 1, n):
            if rng.random() < p_extra:
                edges.add((j, k))
    edges = np.array(sorted(edges), dtype=np.int64).reshape(-1, 2)
    return EdgeWeights(n, edges, rng.uniform(wmin, wmax, len(edges)))


def random_priors(rng, n, c):
    a = rng.dirichlet(np.ones(c), n)
    a = np.clip(a, 1e-3, None)
    return a / a.sum(axis=1, keepdims=True)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE = {}
CRITERIA = 11


@pytest.fixture
def acceptance():
    """Record ``(criterion, ok, detail)``; parts of one criterion are AND-ed."""

    def record(k, ok, detail=""):
        prev = ACCEPTANCE.get(k)
        ok = bool(ok)
        if prev is None:
            ACCEPTANCE[k] = (ok, [detail] if detail else [])
        else:
            ACCEPTANCE[k] = (prev[0] and ok, prev[1] + ([detail] if detail else []))
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in range(1, CRITERIA + 1):
        if k not in ACCEPTANCE:
            terminalreporter.write_line(f"criterion {k:2d}: NOT RUN")
            continue
        ok, details = ACCEPTANCE[k]
        terminalreporter.write_line(f"criterion {k:2d}: {'PASS' if ok else 'FAIL'}  {'; '.join(details)}")
