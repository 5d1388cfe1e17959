"""Multiresolution sample lattice, 26-neighborhoods and per-layer sample data.

Layer ``r = 0`` holds one sample per voxel. Layer ``r >= 1`` holds cubic
patches of edge ``3 * 2**(r - 1)`` voxels, so a layer-1 sample has 27
children and every coarser sample has 8. Samples are indexed per layer in
row-major order with x fastest: ``j = x + nx * (y + ny * z)``.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from .errors import HierarchyError, InvalidInputError

OFFSETS_26 = np.array(
    [o for o in itertools.product((-1, 0, 1), repeat=3) if o != (0, 0, 0)],
    dtype=np.int64,
)
# one representative per undirected neighbor pair
FORWARD_OFFSETS = np.array(
    [o for o in OFFSETS_26.tolist() if tuple(o) > (0, 0, 0)], dtype=np.int64
)


def patch_edge(r: int) -> int:
    """Voxels per patch edge at resolution ``r``."""
    if r < 0:
        raise InvalidInputError(f"negative resolution {r}")
    return 1 if r == 0 else 3 * 2 ** (r - 1)


def ravel(coords, dims) -> np.ndarray:
    coords = np.asarray(coords, dtype=np.int64)
    x, y, z = coords[..., 0], coords[..., 1], coords[..., 2]
    return x + dims[0] * (y + dims[1] * z)


def unravel(index, dims) -> np.ndarray:
    index = np.asarray(index, dtype=np.int64)
    x = index % dims[0]
    y = (index // dims[0]) % dims[1]
    z = index // (dims[0] * dims[1])
    return np.stack([x, y, z], axis=-1)


class NeighborhoodTopology:
    """26-connected adjacency of one lattice layer.

    ``edges`` lists every undirected neighbor pair once as ``(j, k)`` with
    ``j < k``. Boundary samples simply have fewer neighbors.
    """

    def __init__(self, dims):
        self.dims = tuple(int(d) for d in dims)
        self.n = int(np.prod(self.dims))
        self.edges = self._build_edges()

    def _build_edges(self):
        nx, ny, nz = self.dims
        grid = np.stack(
            np.meshgrid(np.arange(nx), np.arange(ny), np.arange(nz), indexing="ij"),
            axis=-1,
        ).reshape(-1, 3)
        pairs = []
        for off in FORWARD_OFFSETS:
            dst = grid + off
            ok = np.all((dst >= 0) & (dst < self.dims), axis=1)
            j = ravel(grid[ok], self.dims)
            k = ravel(dst[ok], self.dims)
            pairs.append(np.stack([np.minimum(j, k), np.maximum(j, k)], axis=1))
        if not pairs:
            return np.zeros((0, 2), dtype=np.int64)
        e = np.concatenate(pairs)
        order = np.lexsort((e[:, 1], e[:, 0]))
        return e[order]

    def neighbors(self, j: int) -> np.ndarray:
        if not 0 <= j < self.n:
            raise InvalidInputError(f"sample index {j} out of range [0, {self.n})")
        c = unravel(j, self.dims)
        dst = c + OFFSETS_26
        ok = np.all((dst >= 0) & (dst < self.dims), axis=1)
        return ravel(dst[ok], self.dims)

    def neighbor_slots(self):
        """Neighbor index per (sample, offset slot); -1 where out of bounds.

        Slot order follows ``OFFSETS_26``.
        """
        grid = unravel(np.arange(self.n), self.dims)
        dst = grid[:, None, :] + OFFSETS_26[None, :, :]
        ok = np.all((dst >= 0) & (dst < self.dims), axis=2)
        out = np.where(ok, ravel(np.where(ok[..., None], dst, 0), self.dims), -1)
        return out

    def degree_counts(self) -> np.ndarray:
        return np.bincount(self.edges.ravel(), minlength=self.n)


@dataclass(frozen=True)
class Pyramid:
    """Lattice geometry for layers ``0..n_lay``.

    ``dims_finest`` is the padded voxel grid; ``dims_input`` the grid the
    caller supplied before padding.
    """

    dims_input: tuple
    n_lay: int
    dims_finest: tuple = field(init=False)

    def __post_init__(self):
        dims = tuple(int(d) for d in self.dims_input)
        if len(dims) != 3:
            raise InvalidInputError(f"expected 3 dimensions, got {dims}")
        if any(d <= 0 for d in dims):
            raise InvalidInputError(f"zero or negative dimension in {dims}")
        if self.n_lay < 0:
            raise InvalidInputError("n_lay must be nonnegative")
        e = patch_edge(self.n_lay)
        padded = tuple(-(-d // e) * e for d in dims)
        object.__setattr__(self, "dims_input", dims)
        object.__setattr__(self, "dims_finest", padded)

    @property
    def padded(self) -> bool:
        return self.dims_finest != self.dims_input

    def patch_edge(self, r: int) -> int:
        self._check_layer(r)
        return patch_edge(r)

    def dims(self, r: int) -> tuple:
        e = self.patch_edge(r)
        return tuple(d // e for d in self.dims_finest)

    def n_samples(self, r: int) -> int:
        return int(np.prod(self.dims(r)))

    def ratio(self, r: int) -> int:
        """Edge ratio between layer ``r`` and its parent layer ``r + 1``."""
        if r >= self.n_lay:
            raise HierarchyError(f"layer {r} has no parent layer (n_lay={self.n_lay})")
        return patch_edge(r + 1) // patch_edge(r)

    def _check_layer(self, r):
        if not 0 <= r <= self.n_lay:
            raise HierarchyError(f"resolution {r} outside 0..{self.n_lay}")

    def _check_index(self, r, j):
        n = self.n_samples(r)
        if not 0 <= j < n:
            raise InvalidInputError(f"sample {j} out of range at layer {r} ({n} samples)")

    def coords(self, r: int, j):
        return unravel(j, self.dims(r))

    def index(self, r: int, coords):
        return ravel(coords, self.dims(r))

    def topology(self, r: int) -> NeighborhoodTopology:
        return NeighborhoodTopology(self.dims(r))

    def neighbors_26(self, r: int, j: int) -> np.ndarray:
        self._check_index(r, j)
        return self.topology(r).neighbors(j)

    def parent_of(self, r: int, j: int) -> int:
        if r >= self.n_lay:
            raise HierarchyError(f"samples at the coarsest layer {r} have no parent")
        self._check_index(r, j)
        return int(self.index(r + 1, self.coords(r, j) // self.ratio(r)))

    def parents(self, r: int) -> np.ndarray:
        """Parent index at ``r + 1`` for every sample of layer ``r``."""
        if r >= self.n_lay:
            raise HierarchyError(f"samples at the coarsest layer {r} have no parent")
        c = self.coords(r, np.arange(self.n_samples(r)))
        return self.index(r + 1, c // self.ratio(r))

    def children_of(self, r: int, j: int) -> np.ndarray:
        if r <= 0:
            raise HierarchyError("layer 0 samples have no children")
        self._check_layer(r)
        self._check_index(r, j)
        q = self.ratio(r - 1)
        base = self.coords(r, j) * q
        block = np.array(list(itertools.product(range(q), repeat=3)))
        return np.sort(self.index(r - 1, base + block))

    def voxel_to_sample(self, r: int) -> np.ndarray:
        """Sample index at layer ``r`` for every voxel, shape ``dims_finest``."""
        e = self.patch_edge(r)
        axes = [np.arange(d) // e for d in self.dims_finest]
        gx, gy, gz = np.meshgrid(*axes, indexing="ij")
        return ravel(np.stack([gx, gy, gz], axis=-1), self.dims(r))

    def patch_slices(self, r: int, j: int):
        e = self.patch_edge(r)
        c = self.coords(r, j)
        return tuple(slice(int(ci) * e, (int(ci) + 1) * e) for ci in c)

    def pad(self, volume, fill=0.0):
        """Pad a voxel array (spatial axes first) at the high-index faces."""
        volume = np.asarray(volume)
        if volume.shape[:3] != self.dims_input:
            if volume.shape[:3] == self.dims_finest:
                return volume
            raise InvalidInputError(
                f"volume shape {volume.shape[:3]} does not match {self.dims_input}"
            )
        widths = [(0, p - d) for p, d in zip(self.dims_finest, self.dims_input)]
        widths += [(0, 0)] * (volume.ndim - 3)
        return np.pad(volume, widths, mode="constant", constant_values=fill)

    def aggregate_mean(self, volume, r: int) -> np.ndarray:
        """Patch means of a voxel field; returns ``(n_samples(r), channels)``."""
        v = self.pad(np.asarray(volume, dtype=float))
        if v.ndim == 3:
            v = v[..., None]
        e = self.patch_edge(r)
        nx, ny, nz = self.dims(r)
        c = v.shape[3]
        blocks = v.reshape(nx, e, ny, e, nz, e, c).mean(axis=(1, 3, 5))
        return blocks.transpose(2, 1, 0, 3).reshape(-1, c)

    def aggregate_any(self, mask, r: int) -> np.ndarray:
        """True for samples whose patch contains at least one true voxel."""
        m = self.pad(np.asarray(mask, dtype=bool), fill=False)
        e = self.patch_edge(r)
        nx, ny, nz = self.dims(r)
        blocks = m.reshape(nx, e, ny, e, nz, e).any(axis=(1, 3, 5))
        return blocks.transpose(2, 1, 0).reshape(-1)

    def to_volume(self, values, r: int) -> np.ndarray:
        """Reshape per-sample values of layer ``r`` to ``dims(r)`` (+ channels)."""
        values = np.asarray(values)
        nx, ny, nz = self.dims(r)
        rest = values.shape[1:]
        return values.reshape((nz, ny, nx) + rest).transpose((2, 1, 0) + tuple(range(3, 3 + len(rest))))

    def from_volume(self, volume, r: int) -> np.ndarray:
        volume = np.asarray(volume)
        if volume.shape[:3] != self.dims(r):
            raise InvalidInputError(f"layer {r} volume must have shape {self.dims(r)}")
        rest = volume.shape[3:]
        return volume.transpose((2, 1, 0) + tuple(range(3, volume.ndim))).reshape((-1,) + rest)


def build_pyramid(dims_finest, n_lay: int) -> Pyramid:
    return Pyramid(tuple(dims_finest), int(n_lay))


@dataclass
class SampleSet:
    """Per-layer sample data: features, priors, reliabilities and labels.

    ``features`` are resolution-specific (used by the spatial graph),
    ``features_ind`` resolution-independent (used by the hierarchy).
    """

    r: int
    features: np.ndarray
    priors: np.ndarray
    reliability: np.ndarray | None = None
    features_ind: np.ndarray | None = None
    labels: np.ndarray | None = None
    prelabeled: np.ndarray | None = None

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=float)
        if self.features.ndim == 1:
            self.features = self.features[:, None]
        self.priors = np.asarray(self.priors, dtype=float)
        n = self.priors.shape[0]
        if self.features.shape[0] != n:
            raise InvalidInputError("features and priors disagree on sample count")
        if self.reliability is None:
            self.reliability = np.ones(n)
        self.reliability = np.asarray(self.reliability, dtype=float)
        if self.features_ind is None:
            self.features_ind = self.features
        self.features_ind = np.asarray(self.features_ind, dtype=float)
        if self.features_ind.ndim == 1:
            self.features_ind = self.features_ind[:, None]
        self.validate()

    @property
    def n(self) -> int:
        return self.priors.shape[0]

    @property
    def n_clas(self) -> int:
        return self.priors.shape[1]

    def validate(self):
        a = self.priors
        if a.ndim != 2:
            raise InvalidInputError("priors must be a (samples, classes) matrix")
        if not np.all(np.abs(a.sum(axis=1) - 1.0) <= 1e-9):
            raise InvalidInputError("prior rows must sum to 1")
        if not np.all((a > 0) & (a < 1)):
            raise InvalidInputError("priors must lie strictly inside (0, 1)")
        h = self.reliability
        if h.shape != (self.n,) or not np.all((h > 0) & (h <= 1)):
            raise InvalidInputError("reliabilities must lie in (0, 1]")
        if self.labels is not None:
            lab = np.asarray(self.labels)
            if lab.shape != (self.n,) or lab.min(initial=0) < 0 or lab.max(initial=0) >= self.n_clas:
                raise InvalidInputError("labels must be class indices, one per sample")


def normalize_priors(a, floor: float = 1e-6) -> np.ndarray:
    """Clip to ``[floor, 1]`` and renormalize rows so every entry is in (0, 1)."""
    a = np.clip(np.asarray(a, dtype=float), floor, None)
    return a / a.sum(axis=1, keepdims=True)
