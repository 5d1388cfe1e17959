"""Triangle-mesh normals and curvature, surface voxelization, curvature
populations, HOG orientations and the susceptibility derivation.

Curvature follows the convex-positive convention: with outward normals a
sphere of radius ``R`` has ``k_min = k_max = 1/R``.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .errors import InvalidInputError, PopulationDetectionError

log = logging.getLogger(__name__)

HIST_BINS = 64
HIST_SMOOTH = 5
HIST_UPPER_PERCENTILE = 99.0
SUBVOXEL_SPACING = 0.5
HOG_BINS = 36
DEFAULT_RAY_RANGE = 30.0

MYOCARDIUM, VESSEL, UNTYPED = "myocardium", "vessel", "untyped"


@dataclass
class TriMesh:
    vertices: np.ndarray
    faces: np.ndarray

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=float).reshape(-1, 3)
        self.faces = np.asarray(self.faces, dtype=np.int64).reshape(-1, 3)
        if self.faces.size and (self.faces.min() < 0 or self.faces.max() >= len(self.vertices)):
            raise InvalidInputError("face index out of range")

    @property
    def n_vertices(self) -> int:
        return self.vertices.shape[0]

    def face_cross(self) -> np.ndarray:
        v = self.vertices[self.faces]
        return np.cross(v[:, 1] - v[:, 0], v[:, 2] - v[:, 0])

    def face_areas(self) -> np.ndarray:
        return 0.5 * np.linalg.norm(self.face_cross(), axis=1)

    def face_normals(self) -> np.ndarray:
        cr = self.face_cross()
        norm = np.linalg.norm(cr, axis=1, keepdims=True)
        return np.divide(cr, norm, out=np.zeros_like(cr), where=norm > 0)

    def edges(self) -> np.ndarray:
        f = self.faces
        e = np.concatenate([f[:, [0, 1]], f[:, [1, 2]], f[:, [2, 0]]])
        e = np.sort(e, axis=1)
        return np.unique(e, axis=0)

    def concatenate(self, other: "TriMesh") -> "TriMesh":
        return TriMesh(
            np.vstack([self.vertices, other.vertices]),
            np.vstack([self.faces, other.faces + self.n_vertices]),
        )


def vertex_normals(mesh: TriMesh) -> np.ndarray:
    """Area-weighted average of adjacent face normals, normalized."""
    areas = mesh.face_areas()
    degenerate = areas <= 0
    if degenerate.any():
        log.info("skipping %d zero-area faces", int(degenerate.sum()))
    weighted = mesh.face_normals() * areas[:, None]
    acc = np.zeros_like(mesh.vertices)
    for corner in range(3):
        np.add.at(acc, mesh.faces[~degenerate, corner], weighted[~degenerate])
    norm = np.linalg.norm(acc, axis=1, keepdims=True)
    if np.any(norm == 0):
        raise InvalidInputError("vertex without any non-degenerate face")
    return acc / norm


def tangent_basis(normals):
    """Orthonormal ``(u, v)`` spanning the plane orthogonal to each normal."""
    n = np.asarray(normals, dtype=float)
    helper = np.where(np.abs(n[:, [0]]) < 0.9, [[1.0, 0.0, 0.0]], [[0.0, 1.0, 0.0]])
    u = np.cross(n, helper)
    u /= np.linalg.norm(u, axis=1, keepdims=True)
    v = np.cross(n, u)
    return u, v


@dataclass
class Curvature:
    k_min: np.ndarray
    k_max: np.ndarray
    dir_min: np.ndarray
    dir_max: np.ndarray
    normal: np.ndarray
    tensor: np.ndarray  # (V, 3, 3) shape operator in world coordinates
    valid: np.ndarray

    @property
    def gauss(self) -> np.ndarray:
        return self.k_min * self.k_max

    @property
    def mean(self) -> np.ndarray:
        return 0.5 * (self.k_min + self.k_max)

    def normal_curvature(self, i: int, e) -> float:
        """``e^T C e`` for a tangent direction ``e`` at vertex ``i``."""
        e = np.asarray(e, dtype=float)
        return float(e @ self.tensor[i] @ e)


def curvature_tensor(mesh: TriMesh, normals=None) -> Curvature:
    """Per-vertex shape operator from least squares over incident edges.

    For each edge ``i -> j`` in the tangent frame of ``i`` the fit asks
    ``C @ proj(x_j - x_i) = proj(n_j - n_i)``; ``C`` is symmetric 2x2.
    Vertices whose edges do not span the tangent plane are marked invalid.
    """
    if normals is None:
        normals = vertex_normals(mesh)
    V = mesh.n_vertices
    u, v = tangent_basis(normals)
    e = mesh.edges()
    src = np.concatenate([e[:, 0], e[:, 1]])
    dst = np.concatenate([e[:, 1], e[:, 0]])
    dx = mesh.vertices[dst] - mesh.vertices[src]
    dn = normals[dst] - normals[src]
    eu = np.einsum("ij,ij->i", dx, u[src])
    ev = np.einsum("ij,ij->i", dx, v[src])
    nu = np.einsum("ij,ij->i", dn, u[src])
    nv = np.einsum("ij,ij->i", dn, v[src])
    # rows [eu, ev, 0] -> nu and [0, eu, ev] -> nv for unknowns (a, b, c)
    rows = np.stack(
        [np.stack([eu, ev, np.zeros_like(eu)], 1), np.stack([np.zeros_like(eu), eu, ev], 1)], 1
    )
    rhs = np.stack([nu, nv], 1)
    AtA = np.zeros((V, 3, 3))
    Atb = np.zeros((V, 3))
    np.add.at(AtA, src, np.einsum("kri,krj->kij", rows, rows))
    np.add.at(Atb, src, np.einsum("kri,kr->ki", rows, rhs))

    scale = np.trace(AtA, axis1=1, axis2=2)
    with np.errstate(divide="ignore", invalid="ignore"):
        cond = np.linalg.cond(AtA)
    valid = (scale > 0) & np.isfinite(cond) & (cond < 1e10)
    abc = np.zeros((V, 3))
    if valid.any():
        abc[valid] = np.linalg.solve(AtA[valid], Atb[valid][..., None])[..., 0]
    C = np.zeros((V, 2, 2))
    C[:, 0, 0], C[:, 0, 1], C[:, 1, 0], C[:, 1, 1] = abc[:, 0], abc[:, 1], abc[:, 1], abc[:, 2]
    evals, evecs = np.linalg.eigh(C)
    basis = np.stack([u, v], axis=2)  # (V, 3, 2)
    dirs = np.einsum("vij,vjk->vik", basis, evecs)  # columns: min, max
    tensor = np.einsum("vij,vjk,vlk->vil", basis, C, basis)
    if (~valid).any():
        log.info("%d vertices lack independent edge constraints; marked untyped", int((~valid).sum()))
    return Curvature(
        k_min=np.where(valid, evals[:, 0], np.nan),
        k_max=np.where(valid, evals[:, 1], np.nan),
        dir_min=dirs[:, :, 0],
        dir_max=dirs[:, :, 1],
        normal=normals,
        tensor=tensor,
        valid=valid,
    )


def icosphere(subdivisions: int = 2, radius: float = 1.0, center=(0.0, 0.0, 0.0)) -> TriMesh:
    t = (1.0 + math.sqrt(5.0)) / 2.0
    verts = [(-1, t, 0), (1, t, 0), (-1, -t, 0), (1, -t, 0), (0, -1, t), (0, 1, t),
             (0, -1, -t), (0, 1, -t), (t, 0, -1), (t, 0, 1), (-t, 0, -1), (-t, 0, 1)]
    faces = [(0, 11, 5), (0, 5, 1), (0, 1, 7), (0, 7, 10), (0, 10, 11), (1, 5, 9), (5, 11, 4),
             (11, 10, 2), (10, 7, 6), (7, 1, 8), (3, 9, 4), (3, 4, 2), (3, 2, 6), (3, 6, 8),
             (3, 8, 9), (4, 9, 5), (2, 4, 11), (6, 2, 10), (8, 6, 7), (9, 8, 1)]
    verts = [np.array(p, dtype=float) / np.linalg.norm(p) for p in verts]
    for _ in range(subdivisions):
        cache = {}

        def mid(a, b):
            key = (min(a, b), max(a, b))
            if key not in cache:
                m = verts[a] + verts[b]
                verts.append(m / np.linalg.norm(m))
                cache[key] = len(verts) - 1
            return cache[key]

        new = []
        for a, b, c in faces:
            ab, bc, ca = mid(a, b), mid(b, c), mid(c, a)
            new += [(a, ab, ca), (b, bc, ab), (c, ca, bc), (ab, bc, ca)]
        faces = new
    return TriMesh(np.array(verts) * radius + np.asarray(center, dtype=float), np.array(faces))


def cylinder_mesh(radius=1.0, height=4.0, n_around=48, n_along=None, center=(0.0, 0.0, 0.0),
                  axis: int = 2) -> TriMesh:
    """Open cylinder around the given coordinate axis, outward-facing triangles."""
    if n_along is None:
        n_along = max(2, int(round(height / (2 * math.pi * radius / n_around))) + 1)
    th = np.linspace(0.0, 2 * math.pi, n_around, endpoint=False)
    zs = np.linspace(-height / 2, height / 2, n_along)
    T, Z = np.meshgrid(th, zs)
    local = np.stack([radius * np.cos(T), radius * np.sin(T), Z], axis=-1).reshape(-1, 3)
    perm = {2: [0, 1, 2], 0: [2, 0, 1], 1: [1, 2, 0]}[axis]
    pts = local[:, perm] + np.asarray(center, dtype=float)
    faces = []
    for i in range(n_along - 1):
        for j in range(n_around):
            a = i * n_around + j
            b = i * n_around + (j + 1) % n_around
            c, d = a + n_around, b + n_around
            faces += [(a, b, d), (a, d, c)]
    mesh = TriMesh(pts, np.array(faces))
    # orient outward
    fn = mesh.face_normals()
    cen = mesh.vertices[mesh.faces].mean(axis=1) - np.asarray(center, dtype=float)
    radial = cen.copy()
    radial[:, axis] = 0.0
    if np.mean(np.einsum("ij,ij->i", fn, radial)) < 0:
        mesh.faces = mesh.faces[:, ::-1].copy()
    return mesh


@dataclass
class VoxelGrid:
    dims: tuple
    origin: tuple = (0.0, 0.0, 0.0)
    spacing: float = 1.0

    def contains(self, pts) -> bool:
        lo = np.asarray(self.origin, dtype=float)
        hi = lo + np.asarray(self.dims, dtype=float) * self.spacing
        pts = np.asarray(pts, dtype=float)
        return bool(np.all((pts >= lo) & (pts <= hi)))


@dataclass
class SurfaceVoxels:
    """Per surface voxel: coordinates and medians over contributing triangles."""

    coords: np.ndarray
    kmax_abs: np.ndarray
    direction: np.ndarray
    normal: np.ndarray
    grid: VoxelGrid

    @property
    def size(self) -> int:
        return self.coords.shape[0]

    def mask(self) -> np.ndarray:
        m = np.zeros(tuple(self.grid.dims), dtype=bool)
        if self.size:
            m[tuple(self.coords.T)] = True
        return m


def canonical_axial_median(dirs) -> np.ndarray:
    """Median of sign-ambiguous directions, independent of input order.

    Directions are flipped into the hemisphere of the dominant scatter axis
    before a componentwise median.
    """
    d = np.asarray(dirs, dtype=float).reshape(-1, 3)
    if d.shape[0] == 0:
        return np.full(3, np.nan)
    _, vecs = np.linalg.eigh(d.T @ d)
    ref = vecs[:, -1]
    ref = ref * np.sign(ref[np.argmax(np.abs(ref))])
    flip = np.where(d @ ref < 0, -1.0, 1.0)
    m = np.median(d * flip[:, None], axis=0)
    n = np.linalg.norm(m)
    return m / n if n > 0 else ref


def _unit_median(vecs) -> np.ndarray:
    m = np.median(np.asarray(vecs, dtype=float).reshape(-1, 3), axis=0)
    n = np.linalg.norm(m)
    return m / n if n > 0 else m


def _triangle_attributes(mesh, curv):
    f = mesh.faces
    k = np.abs(curv.k_max)[f]
    ok = curv.valid[f]
    with np.errstate(invalid="ignore"):
        kabs = np.where(ok.any(axis=1), np.nansum(np.where(ok, k, 0.0), axis=1) / np.maximum(ok.sum(axis=1), 1), np.nan)
    dirs = curv.dir_max[f]  # (F, 3, 3)
    ref = dirs[:, 0:1, :]
    sign = np.where(np.einsum("fij,fij->fi", dirs, np.broadcast_to(ref, dirs.shape)) < 0, -1.0, 1.0)
    tdir = (dirs * sign[..., None]).sum(axis=1)
    tdir /= np.maximum(np.linalg.norm(tdir, axis=1, keepdims=True), 1e-300)
    tn = curv.normal[f].sum(axis=1)
    tn /= np.maximum(np.linalg.norm(tn, axis=1, keepdims=True), 1e-300)
    return kabs, tdir, tn


def voxelize_surface(mesh: TriMesh, grid: VoxelGrid, curv: Curvature | None = None) -> SurfaceVoxels:
    """Mark every voxel touched by a barycentric sample of some triangle.

    Samples are spaced at most half a voxel along each triangle edge.
    """
    if mesh.faces.shape[0] == 0:
        empty = np.zeros((0, 3))
        return SurfaceVoxels(np.zeros((0, 3), dtype=np.int64), np.zeros(0), empty, empty, grid)
    if not grid.contains(mesh.vertices):
        raise InvalidInputError("mesh extends outside the voxel grid")
    if curv is None:
        curv = curvature_tensor(mesh)
    kabs, tdir, tn = _triangle_attributes(mesh, curv)
    tri = mesh.vertices[mesh.faces]
    longest = np.max(np.linalg.norm(tri - np.roll(tri, 1, axis=1), axis=2), axis=1)
    nsub = np.maximum(1, np.ceil(longest / (SUBVOXEL_SPACING * grid.spacing))).astype(int)
    origin = np.asarray(grid.origin, dtype=float)
    dims = np.asarray(grid.dims)
    pairs = []
    for n in np.unique(nsub):
        sel = np.nonzero(nsub == n)[0]
        ij = np.array([(i, j) for i in range(n + 1) for j in range(n + 1 - i)], dtype=float) / n
        bary = np.column_stack([1.0 - ij.sum(axis=1), ij[:, 0], ij[:, 1]])
        pts = np.einsum("pk,fkd->fpd", bary, tri[sel])
        vox = np.floor((pts - origin) / grid.spacing).astype(np.int64)
        vox = np.clip(vox, 0, dims - 1)
        lin = vox[..., 0] + dims[0] * (vox[..., 1] + dims[1] * vox[..., 2])
        fid = np.broadcast_to(sel[:, None], lin.shape)
        pairs.append(np.stack([lin.ravel(), fid.ravel()], axis=1))
    pairs = np.unique(np.concatenate(pairs), axis=0)
    voxels, start = np.unique(pairs[:, 0], return_index=True)
    groups = np.split(pairs[:, 1], start[1:])
    k_med = np.empty(voxels.size)
    d_med = np.empty((voxels.size, 3))
    n_med = np.empty((voxels.size, 3))
    for i, g in enumerate(groups):
        kk = kabs[g]
        kk = kk[np.isfinite(kk)]
        k_med[i] = np.median(kk) if kk.size else np.nan
        d_med[i] = canonical_axial_median(tdir[g])
        n_med[i] = _unit_median(tn[g])
    coords = np.stack(
        [voxels % dims[0], (voxels // dims[0]) % dims[1], voxels // (dims[0] * dims[1])], axis=1
    )
    return SurfaceVoxels(coords, k_med, d_med, n_med, grid)


@dataclass
class CurvaturePopulations:
    counts: np.ndarray
    edges: np.ndarray
    smoothed: np.ndarray
    lower: tuple
    upper: tuple
    peaks: tuple
    constants: dict = field(default_factory=lambda: {
        "bins": HIST_BINS, "smoothing_window": HIST_SMOOTH,
        "upper_percentile": HIST_UPPER_PERCENTILE, "subvoxel_spacing": SUBVOXEL_SPACING,
    })

    @property
    def centers(self) -> np.ndarray:
        return 0.5 * (self.edges[:-1] + self.edges[1:])

    def classify(self, k):
        k = np.asarray(k, dtype=float)
        out = np.full(k.shape, UNTYPED, dtype=object)
        out[(k >= self.lower[0]) & (k <= self.lower[1])] = MYOCARDIUM
        out[(k >= self.upper[0]) & (k <= self.upper[1])] = VESSEL
        return out

    def to_csv(self) -> str:
        lines = ["bin_center,count"]
        lines += [f"{c:.10g},{int(n)}" for c, n in zip(self.centers, self.counts)]
        return "\n".join(lines) + "\n"


def _moving_average(x, window):
    kernel = np.ones(window) / window
    return np.convolve(x, kernel, mode="same")


def _local_maxima(s):
    idx = []
    for i in range(len(s)):
        left = s[i - 1] if i > 0 else -np.inf
        right = s[i + 1] if i < len(s) - 1 else -np.inf
        if s[i] > left and s[i] >= right and s[i] > 0:
            idx.append(i)
    return idx


def _fwhm(s, p, edges):
    half = s[p] / 2.0
    lo = p
    while lo > 0 and s[lo - 1] >= half:
        lo -= 1
    hi = p
    while hi < len(s) - 1 and s[hi + 1] >= half:
        hi += 1
    return float(edges[lo]), float(edges[hi + 1])


def curvature_histogram(values) -> CurvaturePopulations:
    """Two-population split of ``|k_max|`` values via histogram FWHM.

    64 bins over ``[0, p99]``, 5-bin moving average, then the FWHM intervals
    of the highest peak and of the highest other peak separated from it by a
    valley below half of the lower peak.
    """
    if isinstance(values, SurfaceVoxels):
        values = values.kmax_abs
    k = np.asarray(values, dtype=float)
    k = np.abs(k[np.isfinite(k)])
    if k.size == 0:
        raise PopulationDetectionError("no curvature values", np.zeros(HIST_BINS), np.zeros(HIST_BINS))
    top = float(np.percentile(k, HIST_UPPER_PERCENTILE))
    if top <= 0:
        top = float(k.max()) or 1.0
    counts, edges = np.histogram(k[k <= top], bins=HIST_BINS, range=(0.0, top))
    s = _moving_average(counts.astype(float), HIST_SMOOTH)
    centers = 0.5 * (edges[:-1] + edges[1:])
    peaks = sorted(_local_maxima(s), key=lambda i: (-s[i], i))
    if not peaks:
        raise PopulationDetectionError("histogram has no peak", counts, centers)
    p1 = peaks[0]
    p2 = None
    for q in peaks[1:]:
        a, b = sorted((p1, q))
        valley = s[a:b + 1].min()
        if valley <= 0.5 * min(s[p1], s[q]):
            p2 = q
            break
    if p2 is None:
        raise PopulationDetectionError("fewer than two separated peaks", counts, centers)
    lo_p, hi_p = sorted((p1, p2))
    lower, upper = _fwhm(s, lo_p, edges), _fwhm(s, hi_p, edges)
    if not lower[1] < upper[0]:
        raise PopulationDetectionError(
            f"FWHM intervals overlap: {lower} vs {upper}", counts, centers
        )
    return CurvaturePopulations(counts, edges, s, lower, upper, (lo_p, hi_p))


def axial_angle(vectors) -> np.ndarray:
    """Azimuth in the x-y plane, degrees folded to ``[0, 180)``."""
    v = np.asarray(vectors, dtype=float)
    return np.mod(np.degrees(np.arctan2(v[..., 1], v[..., 0])), 180.0)


def _hog_bin(angle, bins):
    width = 180.0 / bins
    return np.mod(np.floor(angle / width + 0.5), bins).astype(np.int64)


def hog_mode(channel, patch=None, bins: int = HOG_BINS) -> float:
    """Dominant axial gradient orientation (degrees) of a patch.

    Central-difference gradients, orientations folded to [0, 180),
    magnitude-weighted bins centered on multiples of ``180 / bins``.
    Returns NaN for a gradient-free patch.
    """
    ch = np.asarray(channel, dtype=float)
    if min(ch.shape) < 2:
        raise InvalidInputError("channel needs at least 2 voxels per axis")
    gx, gy, _ = np.gradient(ch)
    if patch is not None:
        gx, gy = gx[patch], gy[patch]
    mag = np.hypot(gx, gy)
    if not np.any(mag > 0):
        return float("nan")
    b = _hog_bin(np.mod(np.degrees(np.arctan2(gy, gx)), 180.0), bins)
    hist = np.bincount(b.ravel(), weights=mag.ravel(), minlength=bins)
    return float(np.argmax(hist) * 180.0 / bins)


def hog_modes(channel, pyramid, r: int, bins: int = HOG_BINS) -> np.ndarray:
    """:func:`hog_mode` for every sample of layer ``r``.

    Layer-0 samples use their 3x3x3 voxel neighborhood.
    """
    ch = pyramid.pad(np.asarray(channel, dtype=float))
    gx, gy, _ = np.gradient(ch)
    mag = np.hypot(gx, gy)
    b = _hog_bin(np.mod(np.degrees(np.arctan2(gy, gx)), 180.0), bins)
    n = pyramid.n_samples(r)
    if r == 0:
        hist = np.zeros((n, bins))
        for k in range(bins):
            layer = np.where(b == k, mag, 0.0)
            summed = ndimage.uniform_filter(layer, size=3, mode="constant") * 27.0
            hist[:, k] = pyramid.from_volume(summed, 0)
    else:
        owner = pyramid.voxel_to_sample(r)
        hist = np.bincount((owner * bins + b).ravel(), weights=mag.ravel(), minlength=n * bins)
        hist = hist.reshape(n, bins)
    modes = np.argmax(hist, axis=1) * 180.0 / bins
    return np.where(hist.max(axis=1) > 1e-12, modes, np.nan)


@dataclass
class SurfaceSamples:
    r: int
    index: np.ndarray
    kmax_abs: np.ndarray
    direction: np.ndarray
    normal: np.ndarray
    population: np.ndarray

    @property
    def angle(self) -> np.ndarray:
        return axial_angle(self.direction)


def surface_samples(surface: SurfaceVoxels, pyramid, r: int, populations: CurvaturePopulations) -> SurfaceSamples:
    """Aggregate surface voxels into the samples whose patch contains them."""
    if surface.size == 0:
        z = np.zeros((0, 3))
        return SurfaceSamples(r, np.zeros(0, dtype=np.int64), np.zeros(0), z, z, np.zeros(0, dtype=object))
    e = pyramid.patch_edge(r)
    owner = pyramid.index(r, surface.coords // e)
    order = np.argsort(owner, kind="stable")
    ids, start = np.unique(owner[order], return_index=True)
    groups = np.split(order, start[1:])
    k = np.empty(ids.size)
    d = np.empty((ids.size, 3))
    nrm = np.empty((ids.size, 3))
    for i, g in enumerate(groups):
        kk = surface.kmax_abs[g]
        kk = kk[np.isfinite(kk)]
        k[i] = np.median(kk) if kk.size else np.nan
        d[i] = canonical_axial_median(surface.direction[g])
        nrm[i] = _unit_median(surface.normal[g])
    return SurfaceSamples(r, ids, k, d, nrm, populations.classify(k))


def _sample_at(points, e, dims):
    """Patch containing each point; points on a border go to the lower patch."""
    q = points / e
    idx = np.floor(q).astype(np.int64)
    on_border = (q == np.floor(q)) & (idx > 0)
    idx = idx - on_border
    inside = np.all((idx >= 0) & (idx < np.asarray(dims)), axis=-1) & np.all(points >= 0, axis=-1)
    return idx, inside


def derive_susceptibilities(surface: SurfaceSamples, pyramid, hog: np.ndarray, n_clas: int,
                            epat: int, pvat: int, max_range: float = DEFAULT_RAY_RANGE) -> np.ndarray:
    """Susceptibilities of every layer-``r`` sample from outward-normal searches.

    A myocardium source raises the EpAT entry of each hit sample to
    ``exp(|cos(hog_j - angle_src)|)``, a vessel source the PvAT entry; other
    entries and unhit samples stay 1. Multiple hits keep the maximum; rows
    are finally normalized to sum to one.
    """
    r = surface.r
    n = pyramid.n_samples(r)
    hog = np.asarray(hog, dtype=float)
    if hog.shape != (n,):
        raise InvalidInputError("one HOG mode per sample required")
    s_raw = np.ones((n, n_clas))
    e = pyramid.patch_edge(r)
    dims = pyramid.dims(r)
    steps = np.arange(1, int(math.floor(max_range)) + 1, dtype=float)
    for src, pop, nrm, ang in zip(surface.index, surface.population, surface.normal, surface.angle):
        if pop == UNTYPED or not np.all(np.isfinite(nrm)) or not np.isfinite(ang):
            continue
        cls = epat if pop == MYOCARDIUM else pvat
        centroid = (pyramid.coords(r, src) + 0.5) * e
        pts = centroid[None, :] + steps[:, None] * nrm[None, :]
        idx, inside = _sample_at(pts, e, dims)
        # the search ends where the ray leaves the volume
        stop = np.argmin(inside) if not inside.all() else inside.size
        hits = np.unique(pyramid.index(r, idx[:stop]))
        hits = hits[hits != src]
        hits = hits[np.isfinite(hog[hits])]
        if hits.size == 0:
            continue
        val = np.exp(np.abs(np.cos(np.radians(hog[hits] - ang))))
        s_raw[hits, cls] = np.maximum(s_raw[hits, cls], val)
    return s_raw / s_raw.sum(axis=1, keepdims=True)


def susceptibility_for_hit(delta_deg: float, n_clas: int, cls: int) -> np.ndarray:
    """Normalized susceptibility row of a single hit with angle difference ``delta_deg``."""
    s = np.ones(n_clas)
    s[cls] = math.exp(abs(math.cos(math.radians(delta_deg))))
    return s / s.sum()


@dataclass
class MeshGuidance:
    curvature: Curvature
    surface: SurfaceVoxels
    populations: CurvaturePopulations
    susceptibilities: list
    samples: list


def susceptibilities_from_mesh(mesh: TriMesh, fat_channel, pyramid, n_clas: int, epat: int,
                               pvat: int, max_range: float = DEFAULT_RAY_RANGE) -> MeshGuidance:
    """Full mesh-to-susceptibility chain for every layer of the pyramid."""
    curv = curvature_tensor(mesh)
    grid = VoxelGrid(pyramid.dims_finest)
    surf = voxelize_surface(mesh, grid, curv)
    pops = curvature_histogram(surf)
    s_layers, samples = [], []
    for r in range(pyramid.n_lay + 1):
        ss = surface_samples(surf, pyramid, r, pops)
        hog = hog_modes(fat_channel, pyramid, r)
        s_layers.append(derive_susceptibilities(ss, pyramid, hog, n_clas, epat, pvat, max_range))
        samples.append(ss)
    return MeshGuidance(curv, surf, pops, s_layers, samples)
