"""Synthetic multi-channel test volumes with known labels.

``step``: two classes split halfway along x, one channel.
``nested-shells``: a ball inside two concentric shells plus background,
two channels.
``sphere-tube``: a sphere and a thin tube with fat layers around them, the
class set of the guided variant (EpAT, PeAT, PvAT, background) and an
analytic surface mesh.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .errors import InvalidInputError
from .mesh import TriMesh, cylinder_mesh, icosphere
from .pyramid import normalize_priors

KINDS = ("step", "nested-shells", "sphere-tube")
SHELL_FRACTIONS = (0.3, 0.55, 0.8)


@dataclass
class Phantom:
    kind: str
    volume: np.ndarray  # (nx, ny, nz, channels)
    labels: np.ndarray  # (nx, ny, nz) class index per voxel
    class_names: list
    background: int
    mesh: TriMesh | None = None
    params: dict = field(default_factory=dict)

    @property
    def dims(self) -> tuple:
        return self.labels.shape

    @property
    def n_clas(self) -> int:
        return len(self.class_names)

    def layer_labels(self, pyramid) -> list:
        """Reference labels per layer; each parent takes its children's majority."""
        lab = pyramid.pad(self.labels, fill=self.background)
        out = [pyramid.from_volume(lab, 0).astype(np.int64)]
        for r in range(1, pyramid.n_lay + 1):
            child = out[-1]
            par = pyramid.parents(r - 1)
            counts = np.zeros((pyramid.n_samples(r), self.n_clas), dtype=np.int64)
            np.add.at(counts, (par, child), 1)
            out.append(np.argmax(counts, axis=1))
        return out

    def prior_volume(self, blur: float = 1.0, floor: float = 1e-3) -> np.ndarray:
        """Gaussian-blurred one-hot labels, floored and renormalized per voxel."""
        onehot = np.stack([(self.labels == c).astype(float) for c in range(self.n_clas)], axis=-1)
        if blur > 0:
            onehot = np.stack(
                [ndimage.gaussian_filter(onehot[..., c], blur, mode="nearest") for c in range(self.n_clas)],
                axis=-1,
            )
        return normalize_priors(onehot.reshape(-1, self.n_clas), floor).reshape(onehot.shape)


def _grid(dims):
    return np.meshgrid(*[np.arange(d) + 0.5 for d in dims], indexing="ij")


def _step(dims):
    x, _, _ = _grid(dims)
    labels = np.where(x < dims[0] // 2, 0, 1)
    volume = np.where(labels == 0, 1.0, 0.0)[..., None]
    return labels, volume, ["foreground", "background"], 1, None, {}


def shell_radii(dims):
    half = min(dims) / 2.0
    return tuple(f * half for f in SHELL_FRACTIONS)


def _nested(dims):
    x, y, z = _grid(dims)
    c = np.asarray(dims, dtype=float) / 2.0
    dist = np.sqrt((x - c[0]) ** 2 + (y - c[1]) ** 2 + (z - c[2]) ** 2)
    r1, r2, r3 = shell_radii(dims)
    labels = np.full(dims, 3, dtype=np.int64)
    labels[dist <= r3] = 2
    labels[dist <= r2] = 1
    labels[dist <= r1] = 0
    means = np.array([[0.9, 0.1], [0.2, 0.8], [0.6, 0.5], [0.05, 0.05]])
    return labels, means[labels], ["core", "inner-shell", "outer-shell", "background"], 3, None, {
        "radii": [r1, r2, r3], "center": c.tolist()}


def sphere_tube_geometry(dims):
    m = min(dims)
    R = 0.28 * m
    rt = max(1.5, 0.08 * m)
    sphere_c = np.array([dims[0] / 2.0, dims[1] / 2.0, 0.4 * dims[2]])
    tube_c = np.array([dims[0] / 2.0, dims[1] / 2.0, sphere_c[2] + R + rt + 2.0])
    length = dims[0] - 4.0
    if tube_c[2] + rt + 1.0 > dims[2] or R < 3:
        raise InvalidInputError("sphere-tube phantom needs at least 24 voxels per axis")
    return R, rt, sphere_c, tube_c, length


def _sphere_tube(dims):
    R, rt, sc, tc, length = sphere_tube_geometry(dims)
    x, y, z = _grid(dims)
    ds = np.sqrt((x - sc[0]) ** 2 + (y - sc[1]) ** 2 + (z - sc[2]) ** 2)
    dt = np.sqrt((y - tc[1]) ** 2 + (z - tc[2]) ** 2)
    in_tube_span = np.abs(x - tc[0]) <= length / 2
    EPAT, PEAT, PVAT, BG = range(4)
    labels = np.full(dims, BG, dtype=np.int64)
    labels[(ds > R + 2.0) & (ds <= R + 3.5)] = PEAT
    labels[(ds > R) & (ds <= R + 2.0)] = EPAT
    labels[in_tube_span & (dt > rt) & (dt <= rt + 1.5)] = PVAT
    fat = np.where(labels == BG, 0.1, np.choose(np.minimum(labels, 2), [0.9, 0.8, 0.85]))
    water = np.full(dims, 0.1)
    water[ds <= R] = 0.9
    water[in_tube_span & (dt <= rt)] = 0.7
    volume = np.stack([fat, water], axis=-1)
    mesh = icosphere(3, R, sc).concatenate(cylinder_mesh(rt, length, 32, center=tc, axis=0))
    params = {"sphere_radius": R, "tube_radius": rt, "sphere_center": sc.tolist(),
              "tube_center": tc.tolist(), "tube_length": length}
    return labels, volume, ["EpAT", "PeAT", "PvAT", "background"], BG, mesh, params


def generate_phantom(kind: str, dims=(12, 12, 12), noise: float = 0.0, seed: int = 0,
                     weak_boundary: bool = False) -> Phantom:
    """Deterministic phantom for a given seed.

    ``weak_boundary`` blurs the intensities (Gaussian, one voxel) before the
    noise is added, so neighboring classes blend across their interface.
    """
    if kind not in KINDS:
        raise InvalidInputError(f"unknown phantom kind {kind!r}; expected one of {KINDS}")
    try:
        dims = tuple(int(d) for d in dims)
    except (TypeError, ValueError) as exc:
        raise InvalidInputError(f"bad dims {dims!r}") from exc
    if len(dims) != 3 or min(dims) < 3:
        raise InvalidInputError("phantom dims must be three integers >= 3")
    if noise < 0:
        raise InvalidInputError("noise must be nonnegative")
    build = {"step": _step, "nested-shells": _nested, "sphere-tube": _sphere_tube}[kind]
    labels, volume, names, bg, mesh, params = build(dims)
    volume = np.asarray(volume, dtype=float)
    if weak_boundary:
        volume = np.stack([ndimage.gaussian_filter(volume[..., c], 1.0, mode="nearest")
                           for c in range(volume.shape[3])], axis=-1)
    if noise > 0:
        rng = np.random.default_rng(seed)
        volume = volume + rng.normal(0.0, noise, volume.shape)
    params.update({"noise": noise, "seed": seed, "weak_boundary": weak_boundary})
    return Phantom(kind, volume, labels.astype(np.int64), names, bg, mesh, params)
