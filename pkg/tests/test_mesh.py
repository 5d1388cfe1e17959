import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from graphwalk.errors import InvalidInputError, PopulationDetectionError
from graphwalk.mesh import (
    MYOCARDIUM,
    UNTYPED,
    VESSEL,
    SurfaceSamples,
    TriMesh,
    VoxelGrid,
    canonical_axial_median,
    curvature_histogram,
    curvature_tensor,
    cylinder_mesh,
    derive_susceptibilities,
    hog_mode,
    hog_modes,
    icosphere,
    susceptibility_for_hit,
    vertex_normals,
    voxelize_surface,
)
from graphwalk.phantom import generate_phantom
from graphwalk.pyramid import build_pyramid


def grid_mesh(fn, n=21, half=1.0):
    xs = np.linspace(-half, half, n)
    X, Y = np.meshgrid(xs, xs, indexing="ij")
    V = np.column_stack([X.ravel(), Y.ravel(), fn(X, Y).ravel()])
    F = []
    for i in range(n - 1):
        for j in range(n - 1):
            a, b, c, d = i * n + j, (i + 1) * n + j, (i + 1) * n + j + 1, i * n + j + 1
            F += [[a, b, c], [a, c, d]]
    return TriMesh(V, F)


def test_octahedron_normals_radial():
    V = np.array([[1, 0, 0], [-1, 0, 0], [0, 1, 0], [0, -1, 0], [0, 0, 1], [0, 0, -1]], float)
    F = [[0, 2, 4], [2, 1, 4], [1, 3, 4], [3, 0, 4], [2, 0, 5], [1, 2, 5], [3, 1, 5], [0, 3, 5]]
    assert np.allclose(vertex_normals(TriMesh(V, F)), V, atol=1e-12)


def test_zero_area_face_ignored():
    m = TriMesh([[0, 0, 0], [1, 0, 0], [0, 1, 0], [2, 0, 0]], [[0, 1, 2], [0, 1, 3], [1, 3, 2]])
    assert np.allclose(vertex_normals(m), [0, 0, 1])
    with pytest.raises(InvalidInputError):
        vertex_normals(TriMesh(m.vertices, [[0, 1, 2], [0, 1, 3]]))


def test_sphere_curvature_and_normals():
    m = icosphere(3, radius=2.0)
    c = curvature_tensor(m)
    assert c.valid.all()
    err = np.abs(c.k_max - 0.5) / 0.5
    assert err.mean() <= 0.15
    dev = np.degrees(np.arccos(np.clip(np.sum(c.normal * m.vertices / 2.0, axis=1), -1, 1)))
    assert dev.max() < 5.0


def test_cylinder_directions():
    m = cylinder_mesh(1.0, 6.0, 48, 24)
    c = curvature_tensor(m)
    mid = np.abs(m.vertices[:, 2]) < 2.0
    assert np.allclose(c.k_max[mid], 1.0, atol=0.05) and np.allclose(c.k_min[mid], 0.0, atol=0.05)
    axis = np.array([0, 0, 1.0])
    ang_axis = np.degrees(np.arccos(np.abs(c.dir_min[mid] @ axis)))
    ang_circ = np.degrees(np.arcsin(np.clip(np.abs(c.dir_max[mid] @ axis), 0, 1)))
    assert ang_axis.max() < 10 and ang_circ.max() < 10


def test_plane_has_zero_curvature():
    c = curvature_tensor(grid_mesh(lambda x, y: 0 * x))
    assert np.abs(c.k_max).max() < 1e-10 and np.abs(c.k_min).max() < 1e-10


def test_saddle_at_origin():
    m = grid_mesh(lambda x, y: 0.5 * (x * x - y * y), n=41, half=0.5)
    c = curvature_tensor(m)
    o = int(np.argmin(np.linalg.norm(m.vertices, axis=1)))
    assert c.gauss[o] == pytest.approx(-1.0, abs=0.05)
    assert c.mean[o] == pytest.approx(0.0, abs=0.05)


def test_tensor_reconstruction():
    c = curvature_tensor(icosphere(2, 3.0))
    i = 5
    for e, k in ((c.dir_min[i], c.k_min[i]), (c.dir_max[i], c.k_max[i])):
        assert c.normal_curvature(i, e) == pytest.approx(k, abs=1e-12)


def test_triangle_spanning_two_voxels():
    m = TriMesh([[0.5, 0.5, 0.5], [1.5, 0.5, 0.5], [1.0, 0.6, 0.5]], [[0, 1, 2]])
    s = voxelize_surface(m, VoxelGrid((4, 4, 4)))
    assert sorted(map(tuple, s.coords.tolist())) == [(0, 0, 0), (1, 0, 0)]


def test_empty_mesh_and_outside_mesh():
    assert voxelize_surface(TriMesh(np.zeros((0, 3)), np.zeros((0, 3))), VoxelGrid((4, 4, 4))).size == 0
    with pytest.raises(InvalidInputError):
        voxelize_surface(icosphere(1, 1.0, (10, 10, 10)), VoxelGrid((4, 4, 4)))


def test_icosphere_shell_is_26_connected():
    from scipy import ndimage

    s = voxelize_surface(icosphere(3, 6.0, (8, 8, 8)), VoxelGrid((16, 16, 16)))
    _, ncomp = ndimage.label(s.mask(), structure=np.ones((3, 3, 3)))
    assert ncomp == 1


def test_sphere_tube_two_disjoint_populations():
    ph = generate_phantom("sphere-tube", (32, 32, 32))
    surf = voxelize_surface(ph.mesh, VoxelGrid((32, 32, 32)), curvature_tensor(ph.mesh))
    pops = curvature_histogram(surf)
    assert pops.lower[1] < pops.upper[0]
    assert pops.lower[0] <= 1 / ph.params["sphere_radius"] <= pops.lower[1]
    assert pops.classify([1 / ph.params["sphere_radius"]])[0] == MYOCARDIUM
    assert pops.classify([pops.upper[1]])[0] == VESSEL
    assert pops.to_csv().startswith("bin_center,count\n")


def test_single_population_raises():
    surf = voxelize_surface(icosphere(3, 6.0, (8, 8, 8)), VoxelGrid((16, 16, 16)))
    with pytest.raises(PopulationDetectionError):
        curvature_histogram(surf)


def test_hog_ramps_and_grating():
    x, y, _ = np.meshgrid(np.arange(8.0), np.arange(8.0), np.arange(4.0), indexing="ij")
    assert hog_mode(x) == 0.0
    assert hog_mode(y) == 90.0
    assert hog_mode(np.sin(0.7 * (x + y))) == 45.0
    assert math.isnan(hog_mode(np.ones((4, 4, 4))))


def test_hog_modes_per_sample():
    p = build_pyramid((6, 6, 6), 1)
    _, y, _ = np.meshgrid(*[np.arange(6.0)] * 3, indexing="ij")
    assert np.all(hog_modes(y, p, 1) == 90.0)
    assert np.all(hog_modes(y, p, 0) == 90.0)


def test_susceptibility_examples():
    s = susceptibility_for_hit(0.0, 4, 0)
    assert s[0] == pytest.approx(math.e / (math.e + 3))
    assert np.allclose(susceptibility_for_hit(90.0, 4, 2), 0.25)
    assert np.allclose(susceptibility_for_hit(180.0, 4, 0), s)


def _one_source(direction, normal):
    p = build_pyramid((6, 6, 6), 1)
    src = int(p.index(1, np.array([0, 0, 0])))
    ss = SurfaceSamples(1, np.array([src]), np.array([0.1]), np.array([direction], float),
                        np.array([normal], float), np.array([MYOCARDIUM], dtype=object))
    hog = np.zeros(p.n_samples(1))
    return p, derive_susceptibilities(ss, p, hog, 4, 0, 2)


def test_ray_hit_gets_boost():
    p, s = _one_source([1, 0, 0], [1, 0, 0])
    hit = int(p.index(1, np.array([1, 0, 0])))
    assert s[hit, 0] == pytest.approx(math.e / (math.e + 3))
    others = np.delete(np.arange(8), hit)
    assert np.allclose(s[others], 0.25)


def test_flipped_direction_same_susceptibility():
    _, s1 = _one_source([1, 0, 0], [1, 0, 0])
    _, s2 = _one_source([-1, 0, 0], [1, 0, 0])
    assert np.array_equal(s1, s2)


def test_untyped_source_emits_nothing():
    p = build_pyramid((6, 6, 6), 1)
    ss = SurfaceSamples(1, np.array([0]), np.array([0.1]), np.array([[1.0, 0, 0]]),
                        np.array([[1.0, 0, 0]]), np.array([UNTYPED], dtype=object))
    assert np.allclose(derive_susceptibilities(ss, p, np.zeros(8), 4, 0, 2), 0.25)


@settings(max_examples=30, deadline=None)
@given(st.integers(2, 12), st.integers(0, 2**31))
def test_axial_median_permutation_and_sign_invariant(n, seed):
    rng = np.random.default_rng(seed)
    base = np.array([0.3, 0.8, 0.2])
    d = base + rng.normal(scale=0.1, size=(n, 3))
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    m1 = canonical_axial_median(d)
    signs = rng.choice([-1.0, 1.0], size=(n, 1))
    m2 = canonical_axial_median((signs * d)[rng.permutation(n)])
    assert np.allclose(m1, m2, atol=1e-12)


def test_curvature_permutation_invariance(rng):
    m = icosphere(2, 2.0)
    perm = rng.permutation(m.n_vertices)
    inv = np.argsort(perm)
    m2 = TriMesh(m.vertices[perm], inv[m.faces])
    c1, c2 = curvature_tensor(m), curvature_tensor(m2)
    assert np.allclose(c1.k_max[perm], c2.k_max, atol=1e-12)
    assert np.allclose(c1.k_min[perm], c2.k_min, atol=1e-12)
