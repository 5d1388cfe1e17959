import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import random_connected_graph, random_priors
from graphwalk.errors import InvalidInputError, SingularSystemError
from graphwalk.solver import (
    assemble,
    dirichlet_energy,
    laplacian,
    seed_posteriors,
    solve,
    stationarity_residual,
)
from graphwalk.weights import EdgeWeights


def dense_oracle(weights, priors, lam):
    W = np.zeros((weights.n, weights.n))
    for (j, k), w in zip(weights.edges, weights.w):
        W[j, k] = W[k, j] = w
    G = np.diag(W.sum(axis=1) + lam) - W
    return np.linalg.solve(G, lam * priors)


def test_two_chain_matrix():
    w = EdgeWeights(2, [[0, 1]], [1.0])
    G = laplacian(w, 1.0).toarray()
    assert np.array_equal(G, [[2.0, -1.0], [-1.0, 2.0]])


def test_two_chain_solution():
    w = EdgeWeights(2, [[0, 1]], [1.0])
    a = np.array([[0.9, 0.1], [0.3, 0.7]])
    P, _ = solve(assemble(w, a, 1.0))
    # (2 p0 - p1, -p0 + 2 p1) = a  ->  p0 = (2 a0 + a1) / 3
    assert np.allclose(P[0], (2 * a[0] + a[1]) / 3, atol=1e-15)
    assert np.allclose(P[1], (a[0] + 2 * a[1]) / 3, atol=1e-15)


def test_isolated_sample_keeps_prior():
    w = EdgeWeights(3, [[0, 1]], [2.0])
    a = np.array([[0.2, 0.8], [0.6, 0.4], [0.7, 0.3]])
    P, _ = solve(assemble(w, a, 0.5))
    assert np.allclose(P[2], a[2], atol=1e-15)


def test_pcg_and_direct_agree_with_dense(rng):
    for _ in range(5):
        n = int(rng.integers(5, 60))
        w = random_connected_graph(rng, n, p_extra=0.1)
        a = random_priors(rng, n, 3)
        lam = float(rng.uniform(0.05, 2))
        ref = dense_oracle(w, a, lam)
        Pd, _ = solve(assemble(w, a, lam), "direct")
        Pi, rep = solve(assemble(w, a, lam), "pcg", tol=1e-12)
        assert np.abs(Pd - ref).max() < 1e-12
        assert np.abs(Pi - ref).max() < 1e-9
        assert rep.converged and len(rep.iterations) == 3


def test_seeds_clamped_and_recorded():
    w = EdgeWeights(3, [[0, 1], [1, 2]], [1.0, 1.0])
    a = np.full((3, 2), 0.5)
    P, _ = solve(assemble(w, a, 0.0, seeds=[0, -1, 1]))
    assert np.allclose(P[0], seed_posteriors([0], 2)[0])
    assert np.allclose(P[2], seed_posteriors([1], 2)[0])
    assert np.allclose(P[1], 0.5)


def test_lambda_zero_without_seed_is_singular():
    w = EdgeWeights(4, [[0, 1], [2, 3]], [1.0, 1.0])
    with pytest.raises(SingularSystemError) as info:
        solve(assemble(w, np.full((4, 2), 0.5), 0.0, seeds=[0, -1, -1, -1]))
    assert sorted(info.value.component.tolist()) == [2, 3]


def test_bad_solver_name():
    w = EdgeWeights(2, [[0, 1]], [1.0])
    with pytest.raises(InvalidInputError):
        solve(assemble(w, np.full((2, 2), 0.5), 1.0), "qr")


def test_auto_picks_a_path(rng):
    w = random_connected_graph(rng, 20)
    a = random_priors(rng, 20, 2)
    P, rep = solve(assemble(w, a, 1.0), "auto")
    assert rep is None
    assert stationarity_residual(P, w.matrix(), a, 1.0) < 1e-12


@settings(max_examples=30, deadline=None)
@given(st.integers(2, 12), st.integers(2, 4), st.floats(0.01, 5.0), st.integers(0, 2**31))
def test_rows_sum_to_one_and_stay_in_prior_range(n, c, lam, seed):
    rng = np.random.default_rng(seed)
    w = random_connected_graph(rng, n)
    a = random_priors(rng, n, c)
    P, _ = solve(assemble(w, a, lam))
    assert np.allclose(P.sum(axis=1), 1.0, atol=1e-12)
    assert np.all(P >= a.min(axis=0) - 1e-12) and np.all(P <= a.max(axis=0) + 1e-12)


@settings(max_examples=30, deadline=None)
@given(st.integers(2, 8), st.floats(0.05, 3.0), st.integers(0, 2**31))
def test_solution_minimizes_dirichlet_energy(n, lam, seed):
    rng = np.random.default_rng(seed)
    w = random_connected_graph(rng, n)
    a = random_priors(rng, n, 2)
    P, _ = solve(assemble(w, a, lam))
    e0 = dirichlet_energy(P, w, a, lam)
    for _ in range(50):
        Q = P + rng.normal(scale=0.05, size=P.shape)
        assert dirichlet_energy(Q, w, a, lam) >= e0 - 1e-12


def test_coo_export_sorted(rng):
    w = random_connected_graph(rng, 5)
    text = assemble(w, random_priors(rng, 5, 2), 1.0).to_coo_text()
    rows = [tuple(map(int, line.split()[:2])) for line in text.splitlines()]
    assert rows == sorted(rows)
