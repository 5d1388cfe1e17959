import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from graphwalk.errors import HierarchyError, InvalidInputError
from graphwalk.pyramid import (
    NeighborhoodTopology,
    SampleSet,
    build_pyramid,
    normalize_priors,
    patch_edge,
)


def test_patch_edge_table():
    assert [patch_edge(r) for r in range(6)] == [1, 3, 6, 12, 24, 48]


def test_layer_counts_48_cube():
    p = build_pyramid((48, 48, 48), 5)
    assert [p.n_samples(r) for r in range(6)] == [48**3, 16**3, 8**3, 4**3, 2**3, 1]


def test_single_patch_case():
    p = build_pyramid((3, 3, 3), 1)
    assert p.n_samples(1) == 1 and p.n_samples(0) == 27
    assert np.array_equal(p.children_of(1, 0), np.arange(27))
    assert all(p.parent_of(0, j) == 0 for j in range(27))


def test_six_cube_two_layers():
    p = build_pyramid((6, 6, 6), 2)
    assert [p.n_samples(r) for r in (2, 1, 0)] == [1, 8, 216]


def test_zero_dimension_rejected():
    with pytest.raises(InvalidInputError):
        build_pyramid((0, 4, 4), 1)


def test_padding_high_faces():
    p = build_pyramid((7, 6, 5), 1)
    assert p.dims_finest == (9, 6, 6)
    v = np.ones((7, 6, 5))
    padded = p.pad(v)
    assert padded[:7, :, :5].all() and not padded[7:].any() and not padded[:, :, 5:].any()


def _brute_neighbors(c, dims):
    out = []
    for off in itertools.product((-1, 0, 1), repeat=3):
        if off == (0, 0, 0):
            continue
        q = np.add(c, off)
        if np.all(q >= 0) and np.all(q < dims):
            out.append(int(q[0] + dims[0] * (q[1] + dims[1] * q[2])))
    return sorted(out)


def test_neighbor_counts():
    p = build_pyramid((8, 8, 8), 0)
    interior = p.index(0, np.array([3, 4, 5]))
    assert len(p.neighbors_26(0, int(interior))) == 26
    assert len(p.neighbors_26(0, 0)) == 7
    t = NeighborhoodTopology((3, 3, 3))
    j = int(0 + 3 * (1 + 3 * 1))
    assert len(t.neighbors(j)) == 17


def test_neighbors_match_brute_force():
    dims = (4, 3, 5)
    t = NeighborhoodTopology(dims)
    for j in range(t.n):
        c = (j % 4, (j // 4) % 3, j // 12)
        assert sorted(t.neighbors(j).tolist()) == _brute_neighbors(c, dims)


def test_adjacency_symmetric_no_self_loops():
    t = NeighborhoodTopology((5, 4, 3))
    nb = [set(t.neighbors(j).tolist()) for j in range(t.n)]
    for j in range(t.n):
        assert j not in nb[j]
        for k in nb[j]:
            assert j in nb[k]


def test_parent_ratio_three_and_two():
    p = build_pyramid((12, 12, 12), 2)
    j = int(p.index(0, np.array([4, 4, 4])))
    assert np.array_equal(p.coords(1, p.parent_of(0, j)), [1, 1, 1])
    assert len(p.children_of(1, 0)) == 27
    kids = p.children_of(2, 0)
    expect = sorted(int(p.index(1, np.array(c))) for c in itertools.product((0, 1), repeat=3))
    assert kids.tolist() == expect


def test_parent_query_at_top_raises():
    p = build_pyramid((6, 6, 6), 2)
    with pytest.raises(HierarchyError):
        p.parent_of(2, 0)
    with pytest.raises(HierarchyError):
        p.children_of(0, 0)


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 3), st.tuples(st.integers(1, 14), st.integers(1, 14), st.integers(1, 14)))
def test_children_tile_parent(n_lay, dims):
    p = build_pyramid(dims, n_lay)
    for r in range(1, n_lay + 1):
        par = p.parents(r - 1)
        counts = np.bincount(par, minlength=p.n_samples(r))
        ratio = p.ratio(r - 1)
        assert np.all(counts == ratio**3)
        # child patch volumes sum to the parent patch volume
        assert counts[0] * patch_edge(r - 1) ** 3 == patch_edge(r) ** 3
        j = 0
        assert j in set(p.children_of(r, int(par[j])).tolist())


def test_aggregate_mean_and_volume_round_trip(rng):
    p = build_pyramid((6, 6, 6), 1)
    v = rng.random((6, 6, 6, 2))
    m = p.aggregate_mean(v, 1)
    assert m.shape == (8, 2)
    assert np.allclose(m[0], v[:3, :3, :3].reshape(-1, 2).mean(axis=0))
    lin = p.from_volume(v, 0)
    assert np.array_equal(p.to_volume(lin, 0), v)
    # x-fastest linear index
    assert np.array_equal(lin[1], v[1, 0, 0]) and np.array_equal(lin[6], v[0, 1, 0])


def test_sampleset_validation():
    a = np.array([[0.5, 0.5], [0.2, 0.8]])
    s = SampleSet(0, np.zeros(2), a)
    assert np.array_equal(s.reliability, [1.0, 1.0])
    with pytest.raises(InvalidInputError):
        SampleSet(0, np.zeros(2), np.array([[0.5, 0.6], [0.2, 0.8]]))
    with pytest.raises(InvalidInputError):
        SampleSet(0, np.zeros(2), np.array([[1.0, 0.0], [0.2, 0.8]]))
    with pytest.raises(InvalidInputError):
        SampleSet(0, np.zeros(2), a, reliability=np.array([0.0, 1.0]))


def test_normalize_priors_strictly_inside():
    a = normalize_priors(np.array([[1.0, 0.0, 0.0]]))
    assert np.all(a > 0) and np.all(a < 1) and abs(a.sum() - 1) < 1e-12
