"""Explicit boundary detection and the constrained one-vs-all solve.

Samples are split per class into fixed sets (fore: ``a >= 0.8`` -> 1,
back: ``a <= 0.2`` -> 0, hard: Sobel boundary -> 0.5) and the remaining
samples, which are solved for. On overlap hard wins over fore, fore over back.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .errors import InvalidInputError
from .solver import assemble_matrix, laplacian, solve

log = logging.getLogger(__name__)

FORE_THRESHOLD = 0.8
BACK_THRESHOLD = 0.2
SOFT_RANGE = (0.4, 0.6)
FORE_VALUE, BACK_VALUE, HARD_VALUE = 1.0, 0.0, 0.5
DEFAULT_QUANTILE = 0.9


@dataclass
class BoundaryMask:
    mask: np.ndarray
    magnitude: np.ndarray
    threshold: float


def sobel3d(volume, quantile: float = DEFAULT_QUANTILE) -> BoundaryMask:
    """3x3x3 Sobel gradient magnitude, max over channels, quantile threshold.

    ``volume`` has shape ``(nx, ny, nz)`` or ``(nx, ny, nz, channels)``.
    Faces use replicate padding. The threshold is the ``quantile`` of the
    nonzero magnitudes; an all-zero field yields an empty mask.
    """
    v = np.asarray(volume, dtype=float)
    if v.ndim == 3:
        v = v[..., None]
    if v.ndim != 4 or min(v.shape[:3]) < 3:
        raise InvalidInputError("Sobel needs a 3D volume with >= 3 voxels per axis")
    if not 0 <= quantile <= 1:
        raise InvalidInputError("quantile must lie in [0, 1]")
    mag = np.zeros(v.shape[:3])
    for c in range(v.shape[3]):
        ch = v[..., c]
        g2 = sum(ndimage.sobel(ch, axis=ax, mode="nearest") ** 2 for ax in range(3))
        mag = np.maximum(mag, np.sqrt(g2))
    nz = mag[mag > 0]
    if nz.size == 0:
        return BoundaryMask(np.zeros(mag.shape, dtype=bool), mag, 0.0)
    thr = float(np.quantile(nz, quantile))
    return BoundaryMask((mag >= thr) & (mag > 0), mag, thr)


@dataclass
class SampleCategories:
    """Index sets of one foreground class at one resolution."""

    c: int
    fore: np.ndarray
    back: np.ndarray
    hard: np.ndarray
    soft: np.ndarray
    rest: np.ndarray
    n: int

    @property
    def fixed(self) -> np.ndarray:
        return np.sort(np.concatenate([self.fore, self.back, self.hard]))

    def fixed_values(self) -> np.ndarray:
        vals = np.empty(self.n)
        vals[self.fore] = FORE_VALUE
        vals[self.back] = BACK_VALUE
        vals[self.hard] = HARD_VALUE
        return vals[self.fixed]

    def hard_mask(self) -> np.ndarray:
        m = np.zeros(self.n, dtype=bool)
        m[self.hard] = True
        return m

    def summary(self) -> dict:
        return {
            "class": int(self.c),
            "fore": int(self.fore.size),
            "back": int(self.back.size),
            "hard": int(self.hard.size),
            "soft": int(self.soft.size),
            "rest": int(self.rest.size),
        }

    def to_json(self) -> str:
        return json.dumps(self.summary())


def categorize(priors, boundary, c: int) -> SampleCategories:
    """Split samples by the class-``c`` prior and the per-sample boundary flag.

    ``priors`` is ``(n, n_clas)`` (or the class column), ``boundary`` a
    boolean per sample.
    """
    a = np.asarray(priors, dtype=float)
    a_c = a[:, c] if a.ndim == 2 else a
    hard = np.asarray(boundary, dtype=bool).reshape(-1)
    if hard.size != a_c.size:
        raise InvalidInputError("boundary flags must match the sample count")
    fore = (a_c >= FORE_THRESHOLD) & ~hard
    back = (a_c <= BACK_THRESHOLD) & ~hard & ~fore
    rest = ~(fore | back | hard)
    soft = rest & (a_c >= SOFT_RANGE[0]) & (a_c <= SOFT_RANGE[1])
    idx = np.nonzero
    return SampleCategories(c, idx(fore)[0], idx(back)[0], idx(hard)[0], idx(soft)[0], idx(rest)[0], a_c.size)


def solve_constrained(weights, categories: SampleCategories, priors, lambda_prior: float,
                      gamma=None, method: str = "direct", tol: float = 1e-8) -> np.ndarray:
    """Class-``c`` posterior with the fixed sets clamped to 1 / 0 / 0.5.

    ``gamma`` overrides the symmetric Laplace-Beltrami matrix, e.g. with a
    guided (directed) one.
    """
    a = np.asarray(priors, dtype=float)
    a_c = a[:, categories.c] if a.ndim == 2 else a
    n = categories.n
    out = np.empty(n)
    fixed = categories.fixed
    out[fixed] = categories.fixed_values()
    if categories.rest.size == 0:
        log.info("class %d: every sample is constrained; nothing to solve", categories.c)
        return out
    symmetric = gamma is None
    if gamma is None:
        gamma = laplacian(weights, lambda_prior)
    system = assemble_matrix(gamma, a_c, lambda_prior, fixed, out[fixed], symmetric=symmetric)
    P, _ = solve(system, method=method, tol=tol)
    out[categories.rest] = P[categories.rest, 0]
    return out


def constrained_energy(p, weights, priors_c, lambda_prior, rest) -> float:
    """Dirichlet integral with the prior term restricted to ``rest`` samples."""
    p = np.asarray(p, dtype=float)
    e = weights.edges
    diff = p[e[:, 0]] - p[e[:, 1]]
    dev = p[rest] - np.asarray(priors_c, dtype=float)[rest]
    return 0.5 * (float(np.sum(weights.w * diff * diff)) + lambda_prior * float(np.sum(dev * dev)))
