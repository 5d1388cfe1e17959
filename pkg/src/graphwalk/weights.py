"""Tukey-robust spatial edge weights, reliabilities and prior-edge weights."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .errors import InvalidInputError

MAD_SCALE = 1.4826
SIGMA_FLOOR = 1e-6
LAMBDA_GRID = tuple(round(0.1 * i, 1) for i in range(1, 11))


@dataclass(frozen=True)
class TukeyParams:
    sigma_out: float
    sigma_floor: float = SIGMA_FLOOR

    def __post_init__(self):
        if not self.sigma_floor > 0:
            raise InvalidInputError("sigma_floor must be positive")
        if not self.sigma_out >= self.sigma_floor:
            raise InvalidInputError(
                f"sigma_out={self.sigma_out} below floor {self.sigma_floor}"
            )


def _sigma_value(sigma) -> float:
    s = sigma.sigma_out if isinstance(sigma, TukeyParams) else float(sigma)
    if not s > 0:
        raise InvalidInputError("Tukey tuning parameter must be positive")
    return s


def tukey(rho, sigma):
    """Tukey biweight loss for nonnegative residuals.

    Saturates at ``sigma**2 / 6`` for ``rho >= sigma``.
    """
    s = _sigma_value(sigma)
    rho = np.asarray(rho, dtype=float)
    if np.any(rho < 0) or np.any(np.isnan(rho)):
        raise InvalidInputError("Tukey residuals must be nonnegative")
    u = np.minimum(rho / s, 1.0)
    out = (s * s / 6.0) * (1.0 - (1.0 - u * u) ** 3)
    out = np.where(rho >= s, s * s / 6.0, out)
    return out if out.ndim else float(out)


def tukey_deriv(rho, sigma):
    """Derivative of :func:`tukey`; zero outside ``[-sigma, sigma]``."""
    s = _sigma_value(sigma)
    rho = np.asarray(rho, dtype=float)
    u = rho / s
    out = np.where(np.abs(rho) <= s, rho * (1.0 - u * u) ** 2, 0.0)
    return out if out.ndim else float(out)


def _median(x, axis=None):
    # numpy's median averages the two central order statistics for even counts
    return np.median(x, axis=axis)


def neighbor_difference_stack(features, topology):
    """Per-sample neighbor-difference matrices laid out by offset slot.

    Returns an array of shape ``(n, dim, 26)`` holding ``f_j - f_k`` in the
    slot of each in-bounds neighbor ``k`` and NaN elsewhere.
    """
    f = np.asarray(features, dtype=float)
    if f.ndim == 1:
        f = f[:, None]
    if f.shape[0] != topology.n:
        raise InvalidInputError("feature rows must match the topology size")
    slots = topology.neighbor_slots()
    diff = f[:, :, None] - f[np.where(slots >= 0, slots, 0)].transpose(0, 2, 1)
    diff[np.broadcast_to((slots < 0)[:, None, :], diff.shape)] = np.nan
    return diff


def mad_sigma(features, topology, sigma_floor: float = SIGMA_FLOOR) -> TukeyParams:
    """Tukey tuning parameter from the MAD of neighbor feature differences.

    ``sigma / sqrt(5) = 1.4826 * median_j || F_j - median_l F_l ||_1`` where
    the inner median is elementwise over the difference matrices and the L1
    norm is entrywise over the in-bounds slots of ``F_j``.
    """
    if topology.edges.shape[0] == 0:
        raise InvalidInputError("cannot estimate sigma without any edges")
    F = neighbor_difference_stack(features, topology)
    present = ~np.isnan(F)
    has_slot = present.any(axis=0)
    center = np.zeros(F.shape[1:])
    # slots absent at every sample stay NaN-free with a zero center
    center[has_slot] = np.nanmedian(F[:, has_slot], axis=0)
    dev = np.where(present, np.abs(F - center), 0.0).sum(axis=(1, 2))
    active = present.any(axis=(1, 2))
    mad = _median(dev[active])
    sigma = math.sqrt(5.0) * MAD_SCALE * float(mad)
    return TukeyParams(max(sigma, sigma_floor), sigma_floor)


def reliability_from_entropy(label_histograms, n_weak: int | None = None):
    """Classification reliability ``exp(-mean_w H_w)`` with entropies in bits.

    ``label_histograms`` has shape ``(..., n_weak, n_clas)`` of class counts.
    """
    hist = np.asarray(label_histograms, dtype=float)
    if hist.ndim < 2:
        raise InvalidInputError("histograms need a source axis and a class axis")
    if n_weak is not None and hist.shape[-2] != n_weak:
        raise InvalidInputError(f"expected {n_weak} sources, got {hist.shape[-2]}")
    if hist.shape[-2] < 1 or np.any(hist < 0):
        raise InvalidInputError("histograms must be nonnegative with >= 1 source")
    total = hist.sum(axis=-1, keepdims=True)
    if np.any(total <= 0):
        raise InvalidInputError("histogram with zero total count")
    p = hist / total
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(p > 0, p * np.log2(p), 0.0)
    h = -terms.sum(axis=-1)
    return np.exp(-h.mean(axis=-1))


@dataclass
class EdgeWeights:
    """Undirected weighted edges over ``n`` samples, each pair stored once."""

    n: int
    edges: np.ndarray
    w: np.ndarray

    def __post_init__(self):
        self.edges = np.asarray(self.edges, dtype=np.int64).reshape(-1, 2)
        self.w = np.asarray(self.w, dtype=float).reshape(-1)
        if self.edges.shape[0] != self.w.shape[0]:
            raise InvalidInputError("one weight per edge required")
        if not np.all(np.isfinite(self.w)) or np.any(self.w < 0):
            raise InvalidInputError("edge weights must be finite and nonnegative")
        if self.edges.size and (self.edges.min() < 0 or self.edges.max() >= self.n):
            raise InvalidInputError("edge endpoint out of range")
        if np.any(self.edges[:, 0] == self.edges[:, 1]):
            raise InvalidInputError("self-loops are not allowed")

    @property
    def degree(self) -> np.ndarray:
        d = np.zeros(self.n)
        np.add.at(d, self.edges[:, 0], self.w)
        np.add.at(d, self.edges[:, 1], self.w)
        return d

    def matrix(self) -> sp.csr_matrix:
        """Symmetric adjacency matrix ``W``."""
        j, k = self.edges[:, 0], self.edges[:, 1]
        W = sp.coo_matrix(
            (np.concatenate([self.w, self.w]), (np.concatenate([j, k]), np.concatenate([k, j]))),
            shape=(self.n, self.n),
        )
        return W.tocsr()

    def weight(self, j: int, k: int) -> float:
        a, b = min(j, k), max(j, k)
        hit = np.nonzero((self.edges[:, 0] == a) & (self.edges[:, 1] == b))[0]
        return float(self.w[hit[0]]) if hit.size else 0.0

    def to_text(self) -> str:
        return "".join(f"{j} {k} {w:.17g}\n" for (j, k), w in zip(self.edges.tolist(), self.w))

    @classmethod
    def from_text(cls, text: str, n: int) -> "EdgeWeights":
        rows = [line.split() for line in text.splitlines() if line.strip()]
        edges = [(int(a), int(b)) for a, b, _ in rows]
        return cls(n, np.array(edges, dtype=np.int64).reshape(-1, 2), [float(c) for *_, c in rows])


def feature_edge_weights(features, reliability, edges, n, sigma=None, mode="tukey"):
    """Edge weights from per-sample features on an explicit edge list."""
    f = np.asarray(features, dtype=float)
    if f.ndim == 1:
        f = f[:, None]
    edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
    if f.shape[0] != n:
        raise InvalidInputError("feature rows must match the sample count")
    diff = f[edges[:, 0]] - f[edges[:, 1]]
    if mode == "plain":
        w = np.exp(-np.sum(diff * diff, axis=1))
    elif mode == "tukey":
        if sigma is None:
            raise InvalidInputError("tukey mode needs a tuning parameter")
        h = np.ones(n) if reliability is None else np.asarray(reliability, dtype=float)
        t = np.exp(-np.asarray(tukey(np.abs(diff).sum(axis=1), sigma)))
        w = h[edges[:, 0]] * h[edges[:, 1]] * t
    else:
        raise InvalidInputError(f"unknown weighting mode {mode!r}")
    return EdgeWeights(n, edges, w)


def spatial_edge_weights(samples, topology, sigma=None, mode="tukey") -> EdgeWeights:
    """Weights of the 26-neighborhood feature graph of one layer.

    ``tukey``: ``h_j * h_k * exp(-tukey(||f_j - f_k||_1))``.
    ``plain``: ``exp(-||f_j - f_k||_2**2)``.
    When ``sigma`` is omitted in tukey mode it is estimated with
    :func:`mad_sigma`.
    """
    if samples.n != topology.n:
        raise InvalidInputError("sample count does not match topology")
    if mode == "tukey" and sigma is None:
        sigma = mad_sigma(samples.features, topology)
    return feature_edge_weights(
        samples.features, samples.reliability, topology.edges, topology.n, sigma, mode
    )


def prior_edge_weights(priors, lambda_prior: float) -> np.ndarray:
    """Weights ``lambda * a_{j,c}`` of the edges to the per-class prior vertices."""
    if not lambda_prior > 0:
        raise InvalidInputError("lambda_prior must be positive")
    return float(lambda_prior) * np.asarray(priors, dtype=float)
