"""Locally averaged SIR diffusion and the guided graph it induces.

For class ``c`` the modified (directed) weight from sample ``j`` to its
neighbor ``k`` is ``w'_jk = w_jk / sqrt(d_k) * s_kc / s_jc``. The guided
posteriors solve ``Gamma'_c p_c = lambda a_c`` with
``Gamma'_c = diag(d'_c + lambda) - W'_c``, row ``j`` holding sample ``j``'s
outgoing weights.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .errors import InvalidInputError
from .parallel import ordered_map
from .solver import DEFAULT_TOL, assemble_matrix, directed_laplacian, solve

log = logging.getLogger(__name__)


def check_susceptibilities(s, n=None) -> np.ndarray:
    s = np.asarray(s, dtype=float)
    if s.ndim != 2:
        raise InvalidInputError("susceptibilities must be a (samples, classes) matrix")
    if n is not None and s.shape[0] != n:
        raise InvalidInputError("susceptibilities must have one row per sample")
    if np.any(s <= 0) or not np.all(np.isfinite(s)):
        raise InvalidInputError("susceptibilities must be strictly positive")
    return s


def normalize_susceptibilities(s_raw) -> np.ndarray:
    s_raw = check_susceptibilities(s_raw)
    return s_raw / s_raw.sum(axis=1, keepdims=True)


@dataclass
class ModifiedWeights:
    c: int
    matrix: sp.csr_matrix  # row j, column k -> w'_jk
    degree: np.ndarray  # d'_j = sum_k w'_jk
    consistency_gap: np.ndarray  # |sqrt(d_j) - d'_j|

    def weight(self, j: int, k: int) -> float:
        return float(self.matrix[j, k])


def modified_weights(weights, s, c: int) -> ModifiedWeights:
    s = check_susceptibilities(s, weights.n)
    d = weights.degree
    W = weights.matrix().tocoo()
    j, k, w = W.row, W.col, W.data
    if np.any(d[k] <= 0):
        raise InvalidInputError("modified weights need positive degrees at every neighbor")
    wp = w / np.sqrt(d[k]) * s[k, c] / s[j, c]
    Wp = sp.csr_matrix((wp, (j, k)), shape=W.shape)
    dp = np.asarray(Wp.sum(axis=1)).ravel()
    gap = np.abs(np.sqrt(d) - dp)
    log.debug("class %d: max |sqrt(d) - d'| = %.3e", c, gap.max(initial=0.0))
    return ModifiedWeights(c, Wp, dp, gap)


def sir_step(p, weights, s, dt: float = 1.0) -> np.ndarray:
    """One explicit Euler step of the locally averaged SIR evolution.

    ``dp_j/dt = sum_k w_jk / sqrt(d_j) * (s_k p_k / sqrt(d_k) - s_j p_j / sqrt(d_j))``
    applied to every class column. Zero-degree samples are left unchanged.
    """
    if not dt > 0:
        raise InvalidInputError("dt must be positive")
    p = np.asarray(p, dtype=float)
    s = check_susceptibilities(s, weights.n)
    d = weights.degree
    live = d > 0
    if not live.all():
        log.info("%d zero-degree samples excluded from the SIR update", int((~live).sum()))
    inv_sqrt = np.zeros_like(d)
    inv_sqrt[live] = 1.0 / np.sqrt(d[live])
    q = s * p * inv_sqrt[:, None]
    W = weights.matrix()
    flux = W @ q - d[:, None] * q
    return p + dt * inv_sqrt[:, None] * flux


def sir_iterate(p0, weights, s, dt: float = 1.0, tol: float = 1e-13, max_steps: int = 1_000_000):
    """Run :func:`sir_step` until the update falls below ``tol`` (max-norm)."""
    p = np.asarray(p0, dtype=float).copy()
    for step in range(max_steps):
        nxt = sir_step(p, weights, s, dt)
        delta = np.abs(nxt - p).max()
        p = nxt
        if delta < tol:
            return p, step + 1
    log.warning("SIR iteration stopped after %d steps without reaching tol", max_steps)
    return p, max_steps


def sir_steady_state(p0, weights, s) -> np.ndarray:
    """Algebraic steady state of the lambda = 0 evolution for a connected graph.

    The steady state satisfies ``sqrt(d_j) p_j = sum_k w'_jk p_k`` for every
    class, i.e. ``s_j p_j / sqrt(d_j)`` is constant. The Euler iteration
    conserves ``sum_j sqrt(d_j) p_j``, which fixes the scale.
    """
    p0 = np.asarray(p0, dtype=float)
    s = check_susceptibilities(s, weights.n)
    d = weights.degree
    if np.any(d <= 0):
        raise InvalidInputError("steady state needs a graph without isolated samples")
    out = np.empty_like(p0)
    for c in range(p0.shape[1]):
        # null vector of sqrt(d) I - W'_c
        mw = modified_weights(weights, s, c)
        M = (sp.diags(np.sqrt(d)) - mw.matrix).toarray()
        _, _, vt = np.linalg.svd(M)
        v = vt[-1]
        scale = np.dot(np.sqrt(d), p0[:, c]) / np.dot(np.sqrt(d), v)
        out[:, c] = scale * v
    return out


def guided_laplacian(weights, s, c: int, lambda_prior: float) -> sp.csr_matrix:
    return directed_laplacian(modified_weights(weights, s, c).matrix, lambda_prior)


def solve_guided(weights, s, priors, lambda_prior: float, method: str = "iterative",
                 tol: float = DEFAULT_TOL, categories=None) -> np.ndarray:
    """Guided posteriors, one class-specific directed system per class.

    With ``categories`` (one per class, see :mod:`graphwalk.constrained`)
    the fixed sets are clamped and only the remaining samples are solved.
    """
    if not lambda_prior > 0:
        raise InvalidInputError("lambda_prior must be positive for the guided solve")
    a = np.asarray(priors, dtype=float)
    s = check_susceptibilities(s, weights.n)
    if s.shape[1] != a.shape[1]:
        raise InvalidInputError("one susceptibility column per class required")

    def one(c):
        gamma = guided_laplacian(weights, s, c, lambda_prior)
        if categories is not None:
            from .constrained import solve_constrained
            return solve_constrained(weights, categories[c], a, lambda_prior, gamma=gamma,
                                     method=method, tol=tol)
        system = assemble_matrix(gamma, a[:, c], lambda_prior, symmetric=False)
        P, _ = solve(system, method=method, tol=tol)
        return P[:, 0]

    return np.column_stack(ordered_map(one, range(a.shape[1])))


def guided_energy(p, mw: ModifiedWeights, priors_c, lambda_prior, rows=None) -> float:
    """Guided Dirichlet integral of one class.

    ``1/2 * [sum_{j, k in N(j)} w'_jk (p_j - p_k)^2 / 2 + lambda sum (p_j - a_j)^2]``:
    each undirected edge contributes the mean of its two directed weights,
    which reduces to the symmetric integral when ``w' = w``.
    """
    p = np.asarray(p, dtype=float)
    W = mw.matrix.tocoo()
    diff = p[W.row] - p[W.col]
    smooth = 0.5 * float(np.sum(W.data * diff * diff))
    dev = p - np.asarray(priors_c, dtype=float)
    if rows is not None:
        dev = dev[rows]
    return 0.5 * (smooth + lambda_prior * float(np.sum(dev * dev)))
