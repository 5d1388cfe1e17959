import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from graphwalk.errors import InvalidInputError, StructureError
from graphwalk.hcrf import (
    HcrfGraph,
    brute_force_minimum,
    build_hcrf,
    energy_report,
    hcrf_edge_weights,
    hcrf_energy,
    minimize,
    unaries_from_posteriors,
)
from graphwalk.pyramid import build_pyramid


def random_forest(rng, n, c, lam=None):
    parent = np.array([-1] + [int(rng.integers(-1, v)) for v in range(1, n)])
    # shuffle vertex ids so parents are not always lower-indexed
    perm = rng.permutation(n)
    inv = np.argsort(perm)
    par = np.where(parent[inv] >= 0, perm[parent[inv]], -1)
    unary = rng.exponential(1.0, (n, c))
    lam = float(rng.uniform(0, 3)) if lam is None else lam
    return HcrfGraph(unary, par, rng.uniform(0, 1.5, n), lam)


def test_pairwise_example():
    g = HcrfGraph(np.zeros((2, 2)), [-1, 0], [0.0, 0.5], 0.8)
    rep = energy_report(np.array([0, 1]), g)
    assert rep.pairwise == pytest.approx(0.4) and rep.disagreements == 1


def test_unaries_clamped():
    u = unaries_from_posteriors(np.array([[1.0, 0.0]]))
    assert u[0, 0] == 0.0 and u[0, 1] == pytest.approx(-math.log(1e-12))


def test_zero_coupling_is_argmax(rng):
    P = rng.dirichlet(np.ones(3), 12)
    g = HcrfGraph(unaries_from_posteriors(P), [-1] + [0] * 11, np.ones(12), 0.0)
    assert np.array_equal(minimize(g), np.argmax(P, axis=1))


def test_strong_coupling_uniform(rng):
    g = random_forest(rng, 7, 3)
    g = HcrfGraph(g.unary, [-1] + list(range(6)), np.ones(7), 1e6)
    lab = minimize(g)
    assert len(set(lab)) == 1 and lab[0] == np.argmin(g.unary.sum(axis=0))


def test_ties_smallest_class():
    g = HcrfGraph(np.zeros((3, 3)), [-1, 0, 0], np.ones(3), 1.0)
    assert minimize(g).tolist() == [0, 0, 0]


def test_matches_brute_force(rng):
    for _ in range(150):
        n, c = int(rng.integers(1, 8)), int(rng.integers(1, 4))
        g = random_forest(rng, n, c)
        e_bf, _ = brute_force_minimum(g)
        assert hcrf_energy(minimize(g), g) == pytest.approx(e_bf, abs=1e-12)


def test_optimum_beats_random_labelings(rng):
    g = random_forest(rng, 30, 4)
    e0 = hcrf_energy(minimize(g), g)
    for _ in range(1000):
        assert hcrf_energy(rng.integers(0, 4, 30), g) >= e0 - 1e-12


def _weighted_disagreement(labels, g):
    child = np.nonzero(g.parent >= 0)[0]
    return float(g.weight[child][labels[child] != labels[g.parent[child]]].sum())


def test_monotone_coupling(rng):
    lams = np.linspace(0, 5, 26)
    for _ in range(20):
        g = random_forest(rng, 25, 3)
        wd = [_weighted_disagreement(minimize(g.with_lambda(lam)), g) for lam in lams]
        assert all(b <= a + 1e-12 for a, b in zip(wd, wd[1:]))
        g1 = HcrfGraph(g.unary, g.parent, np.ones(g.n), 0.0)
        dis = [energy_report(minimize(g1.with_lambda(lam)), g1).disagreements for lam in lams]
        assert all(b <= a for a, b in zip(dis, dis[1:]))


def test_cycle_raises():
    with pytest.raises(StructureError):
        minimize(HcrfGraph(np.zeros((3, 2)), [1, 2, 0], np.ones(3), 1.0))


def test_bad_inputs():
    with pytest.raises(InvalidInputError):
        HcrfGraph(np.zeros((2, 2)), [-1, 0], [1.0, -1.0])
    with pytest.raises(InvalidInputError):
        energy_report(np.array([0, 5]), HcrfGraph(np.zeros((2, 2)), [-1, 0], [1.0, 1.0]))


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 9), st.integers(1, 4), st.integers(0, 2**31))
def test_permutation_equivariance(n, c, seed):
    rng = np.random.default_rng(seed)
    g = random_forest(rng, n, c)
    perm = rng.permutation(n)  # new id of old vertex v is perm[v]
    inv = np.argsort(perm)
    par = np.where(g.parent[inv] >= 0, perm[g.parent[inv]], -1)
    g2 = HcrfGraph(g.unary[inv], par, g.weight[inv], g.lambda_hcrf)
    assert hcrf_energy(minimize(g2), g2) == pytest.approx(hcrf_energy(minimize(g), g), abs=1e-12)


def test_build_from_pyramid_layout():
    p = build_pyramid((6, 6, 6), 2)
    post = [np.full((p.n_samples(r), 2), 0.5) for r in range(3)]
    feats = [np.zeros(p.n_samples(r)) for r in range(3)]
    rel = [np.ones(p.n_samples(r)) for r in range(3)]
    g = build_hcrf(p, post, feats, rel, [1.0, 1.0, 1.0], 0.5)
    assert g.layer_offsets == (0, 216, 224)
    assert g.parent[224] == -1 and g.parent[216] == 224
    assert np.all(g.weight[:224] == 1.0)
    w = hcrf_edge_weights(p, [np.zeros(216), np.full(8, 10.0), np.zeros(1)], rel, [2.0, 2.0, 2.0])
    assert np.allclose(w[0], math.exp(-4 / 6))
