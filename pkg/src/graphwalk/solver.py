"""Combinatorial Laplace-Beltrami systems and their solvers.

The all-unlabeled system is ``Gamma @ P = lambda * A`` with
``Gamma = diag(d + lambda) - W``. With fixed (seeded or constrained) rows
the unknown block is solved against ``lambda * A_unl - Gamma_ul @ P_lab``.

Per-class solves share one factorization or one preconditioner. Threaded
BLAS may reorder floating-point reductions; results then differ below 1e-12.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.sparse.csgraph import connected_components

from .errors import ConvergenceError, InvalidInputError, SingularSystemError
from .parallel import ordered_map

log = logging.getLogger(__name__)

SEED_EPS = 1e-4
DEFAULT_TOL = 1e-8
DIRECT_FALLBACK_LIMIT = 20000
AUTO_DIRECT_LIMIT = 8000


def laplacian(weights, lambda_prior: float) -> sp.csr_matrix:
    """``diag(d + lambda) - W`` for symmetric edge weights."""
    W = weights.matrix()
    d = np.asarray(W.sum(axis=1)).ravel()
    return (sp.diags(d + lambda_prior) - W).tocsr()


def directed_laplacian(W, lambda_prior: float) -> sp.csr_matrix:
    """``diag(rowsum(W) + lambda) - W`` for a possibly nonsymmetric ``W``."""
    W = sp.csr_matrix(W)
    d = np.asarray(W.sum(axis=1)).ravel()
    return (sp.diags(d + lambda_prior) - W).tocsr()


def seed_posteriors(labels, n_clas: int, eps: float = SEED_EPS) -> np.ndarray:
    """Soft one-hot rows: ``1 - eps`` at the label, ``eps / (n_clas - 1)`` elsewhere."""
    labels = np.asarray(labels, dtype=np.int64)
    if np.any(labels < 0) or np.any(labels >= n_clas):
        raise InvalidInputError(f"seed label outside 0..{n_clas - 1}")
    out = np.full((labels.size, n_clas), eps / (n_clas - 1) if n_clas > 1 else 0.0)
    out[np.arange(labels.size), labels] = 1.0 - eps if n_clas > 1 else 1.0
    return out


@dataclass
class SparseSystem:
    """Reduced linear system over the unknown rows of one graph.

    ``matrix`` is ``Gamma_unl``, ``rhs`` the right-hand side for every class.
    ``gamma`` keeps the full matrix for diagnostics and export.
    """

    matrix: sp.csr_matrix
    rhs: np.ndarray
    unknown: np.ndarray
    fixed: np.ndarray
    fixed_values: np.ndarray
    gamma: sp.csr_matrix
    lambda_prior: float
    symmetric: bool = True
    n: int = field(init=False)

    def __post_init__(self):
        self.n = self.gamma.shape[0]

    @property
    def n_clas(self) -> int:
        return self.rhs.shape[1]

    def expand(self, X) -> np.ndarray:
        X = np.asarray(X).reshape(self.unknown.size, -1)
        P = np.empty((self.n, X.shape[1]))
        P[self.unknown] = X
        if self.fixed.size:
            P[self.fixed] = self.fixed_values
        return P

    def to_coo_text(self) -> str:
        m = self.gamma.tocoo()
        order = np.lexsort((m.col, m.row))
        return "".join(
            f"{i} {j} {v:.17g}\n" for i, j, v in zip(m.row[order], m.col[order], m.data[order])
        )


def assemble_matrix(gamma, priors, lambda_prior, fixed=None, fixed_values=None, symmetric=True):
    """Reduce a full Laplace-Beltrami matrix to its unknown block."""
    gamma = sp.csr_matrix(gamma)
    a = np.asarray(priors, dtype=float)
    if a.ndim == 1:
        a = a[:, None]
    n = gamma.shape[0]
    if a.shape[0] != n:
        raise InvalidInputError("priors must have one row per sample")
    if not np.all(np.isfinite(gamma.data)):
        raise InvalidInputError("matrix has non-finite entries")
    fixed = np.zeros(0, dtype=np.int64) if fixed is None else np.asarray(fixed, dtype=np.int64)
    is_fixed = np.zeros(n, dtype=bool)
    is_fixed[fixed] = True
    unknown = np.nonzero(~is_fixed)[0]
    fixed = np.nonzero(is_fixed)[0] if fixed.size else fixed
    if fixed.size:
        fv = np.asarray(fixed_values, dtype=float).reshape(fixed.size, -1)
    else:
        fv = np.zeros((0, a.shape[1]))
    A_unl = gamma[unknown][:, unknown].tocsr()
    rhs = lambda_prior * a[unknown]
    if fixed.size:
        rhs = rhs - gamma[unknown][:, fixed] @ fv
    return SparseSystem(A_unl, rhs, unknown, fixed, fv, gamma, float(lambda_prior), symmetric)


def assemble(weights, priors, lambda_prior: float, seeds=None) -> SparseSystem:
    """Build the (optionally seeded) system of the feature/prior graph.

    ``seeds`` is an integer label per sample with ``-1`` for unlabeled, or a
    ``{sample: label}`` mapping. Seed rows get soft one-hot posteriors.
    """
    a = np.asarray(priors, dtype=float)
    if lambda_prior < 0:
        raise InvalidInputError("lambda_prior must be nonnegative")
    gamma = laplacian(weights, lambda_prior)
    if seeds is None:
        return assemble_matrix(gamma, a, lambda_prior)
    if isinstance(seeds, dict):
        idx = np.array(sorted(seeds), dtype=np.int64)
        lab = np.array([seeds[i] for i in idx], dtype=np.int64)
    else:
        seeds = np.asarray(seeds, dtype=np.int64)
        idx = np.nonzero(seeds >= 0)[0]
        lab = seeds[idx]
    vals = seed_posteriors(lab, a.shape[1])
    return assemble_matrix(gamma, a, lambda_prior, idx, vals)


def _check_singular(system: SparseSystem):
    """Raise if some unknown component has neither a prior nor a fixed neighbor."""
    if system.lambda_prior > 0 or system.unknown.size == 0:
        return
    G = system.gamma.tocsr().copy()
    G.setdiag(0)
    G.eliminate_zeros()
    sub = G[system.unknown][:, system.unknown]
    ncomp, comp = connected_components(sub, directed=False)
    if system.fixed.size:
        coupling = np.asarray(abs(G[system.unknown][:, system.fixed]).sum(axis=1)).ravel()
    else:
        coupling = np.zeros(system.unknown.size)
    for c in range(ncomp):
        members = comp == c
        if not np.any(coupling[members] > 0):
            nodes = system.unknown[members]
            raise SingularSystemError(
                f"lambda_prior=0 and component of {nodes.size} samples has no seed "
                f"(samples {nodes[:10].tolist()}{'...' if nodes.size > 10 else ''})",
                component=nodes,
            )


def solve_direct(system: SparseSystem) -> np.ndarray:
    """Sparse LU solve of all classes, with one step of iterative refinement."""
    _check_singular(system)
    m = system.unknown.size
    if m == 0:
        return system.expand(np.zeros((0, system.n_clas)))
    A = system.matrix.tocsc()
    B = system.rhs
    try:
        lu = spla.splu(A)
    except RuntimeError as exc:
        raise SingularSystemError(f"factorization failed: {exc}") from exc
    X = lu.solve(B)
    X += lu.solve(B - A @ X)
    res = np.abs(A @ X - B).max()
    scale = max(np.abs(B).max(), np.finfo(float).tiny)
    if not np.isfinite(res):
        raise SingularSystemError("direct solve produced non-finite values")
    if res > 1e-10 * scale:
        log.warning("direct solve residual %.3e exceeds 1e-10 * ||B||", res)
    return system.expand(X)


@dataclass
class IterationReport:
    iterations: np.ndarray
    residuals: np.ndarray
    converged: bool
    method: str = "pcg-jacobi"

    def to_dict(self):
        return {
            "method": self.method,
            "iterations": [int(i) for i in self.iterations],
            "residuals": [float(r) for r in self.residuals],
            "converged": bool(self.converged),
        }


def solve_pcg(system: SparseSystem, tol: float = DEFAULT_TOL, max_iter: int | None = None):
    """Jacobi-preconditioned conjugate gradients, all classes at once.

    Each class column iterates until ``||A x - b|| / ||b|| <= tol``.
    Returns ``(P, IterationReport)``.
    """
    if not 0 < tol < 1:
        raise InvalidInputError("tol must lie in (0, 1)")
    if not system.symmetric:
        raise InvalidInputError("conjugate gradients need a symmetric system")
    _check_singular(system)
    A = system.matrix.tocsr()
    B = np.array(system.rhs, dtype=float)
    m, C = B.shape
    if max_iter is None:
        max_iter = max(4 * m, 1)
    if m == 0:
        return system.expand(np.zeros((0, C))), IterationReport(np.zeros(C, int), np.zeros(C), True)
    diag = A.diagonal()
    if np.any(diag <= 0):
        raise InvalidInputError("Jacobi preconditioner needs a positive diagonal")
    minv = (1.0 / diag)[:, None]

    bnorm = np.linalg.norm(B, axis=0)
    safe = np.where(bnorm > 0, bnorm, 1.0)
    X = np.zeros_like(B)
    R = B.copy()
    Z = minv * R
    D = Z.copy()
    rz = np.sum(R * Z, axis=0)
    iters = np.zeros(C, dtype=np.int64)
    res = np.linalg.norm(R, axis=0) / safe
    for _ in range(max_iter):
        active = res > tol
        if not active.any():
            break
        Da = D[:, active]
        AD = A @ Da
        alpha = rz[active] / np.sum(Da * AD, axis=0)
        X[:, active] += alpha * Da
        R[:, active] -= alpha * AD
        Za = minv * R[:, active]
        rz_new = np.sum(R[:, active] * Za, axis=0)
        beta = rz_new / rz[active]
        D[:, active] = Za + beta * Da
        rz[active] = rz_new
        iters[active] += 1
        res[active] = np.linalg.norm(R[:, active], axis=0) / safe[active]

    true_res = np.linalg.norm(B - A @ X, axis=0) / safe
    converged = bool(np.all(true_res <= tol))
    report = IterationReport(iters, true_res, converged)
    if not converged:
        raise ConvergenceError(
            f"PCG did not reach tol={tol} within {max_iter} iterations",
            best=system.expand(X),
            residual=true_res,
            iterations=iters,
        )
    return system.expand(X), report


def solve_nonsymmetric(system: SparseSystem, tol: float = DEFAULT_TOL, max_iter: int | None = None):
    """Jacobi-preconditioned restarted GMRES per class.

    Falls back to sparse LU on breakdown or stagnation when the system has at
    most 20000 unknowns. Returns ``(P, IterationReport)``.
    """
    if not 0 < tol < 1:
        raise InvalidInputError("tol must lie in (0, 1)")
    _check_singular(system)
    A = system.matrix.tocsr()
    B = np.asarray(system.rhs, dtype=float)
    m, C = B.shape
    if m == 0:
        return system.expand(np.zeros((0, C))), IterationReport(np.zeros(C, int), np.zeros(C), True, "gmres")
    if max_iter is None:
        max_iter = max(4 * m, 1)
    diag = A.diagonal()
    if np.any(diag == 0):
        raise InvalidInputError("Jacobi preconditioner needs a nonzero diagonal")
    M = spla.LinearOperator((m, m), matvec=lambda v: v / diag, dtype=float)
    restart = min(m, 50)

    def one(c):
        b = B[:, c]
        bn = np.linalg.norm(b)
        if bn == 0:
            return np.zeros(m), 0, 0.0, True
        count = [0]

        def cb(_):
            count[0] += 1

        x, info = spla.gmres(
            A, b, rtol=tol * 0.1, atol=0.0, restart=restart,
            maxiter=max(1, max_iter // restart + 1), M=M, callback=cb,
            callback_type="pr_norm",
        )
        r = np.linalg.norm(b - A @ x) / bn
        return x, count[0], r, info == 0 and r <= tol

    results = ordered_map(one, range(C))
    X = np.column_stack([r[0] for r in results])
    iters = np.array([r[1] for r in results])
    res = np.array([r[2] for r in results])
    ok = all(r[3] for r in results)
    if not ok:
        if m <= DIRECT_FALLBACK_LIMIT:
            log.info("GMRES did not converge (residuals %s); falling back to LU", res)
            P = solve_direct(system)
            Xd = P[system.unknown]
            res = np.linalg.norm(B - A @ Xd, axis=0) / np.where(
                np.linalg.norm(B, axis=0) > 0, np.linalg.norm(B, axis=0), 1.0
            )
            return P, IterationReport(iters, res, True, "gmres+lu-fallback")
        raise ConvergenceError(
            "GMRES did not converge and the system is too large for the LU fallback",
            best=system.expand(X), residual=res, iterations=iters,
        )
    return system.expand(X), IterationReport(iters, res, True, "gmres")


def solve(system: SparseSystem, method: str = "direct", tol: float = DEFAULT_TOL, max_iter=None):
    """Dispatch to the direct or the iterative path. Returns ``(P, report)``.

    ``auto`` factorizes systems up to ``AUTO_DIRECT_LIMIT`` unknowns and
    iterates on larger ones, where 26-neighbor fill-in makes LU slow.
    """
    if method == "auto":
        method = "direct" if system.unknown.size <= AUTO_DIRECT_LIMIT else "iterative"
    if method == "direct":
        return solve_direct(system), None
    if method in ("pcg", "iterative"):
        if system.symmetric:
            return solve_pcg(system, tol, max_iter)
        return solve_nonsymmetric(system, tol, max_iter)
    raise InvalidInputError(f"unknown solver {method!r}")


def stationarity_residual(P, W, priors, lambda_prior, rows=None) -> float:
    """Max pointwise gap ``|p_j - (lambda a_j + sum_k W_jk p_k) / (d_j + lambda)|``.

    ``W`` may be symmetric or directed (row ``j`` holds the weights used by
    sample ``j``); ``d`` is its row sum.
    """
    W = sp.csr_matrix(W)
    P = np.asarray(P, dtype=float)
    a = np.asarray(priors, dtype=float)
    if P.ndim == 1:
        P, a = P[:, None], a.reshape(-1, 1)
    d = np.asarray(W.sum(axis=1)).ravel()
    target = (lambda_prior * a + W @ P) / (d + lambda_prior)[:, None]
    gap = np.abs(P - target)
    if rows is not None:
        gap = gap[rows]
    return float(gap.max()) if gap.size else 0.0


def dirichlet_energy(P, weights, priors, lambda_prior, prior_rows=None) -> float:
    """Combinatorial Dirichlet integral summed over the given class columns.

    ``1/2 * [sum_edges w (p_j - p_k)^2 + sum_{prior_rows} lambda (p_j - a_j)^2]``;
    ``prior_rows`` defaults to every sample.
    """
    P = np.asarray(P, dtype=float)
    a = np.asarray(priors, dtype=float)
    if P.ndim == 1:
        P, a = P[:, None], a.reshape(-1, 1)
    e = weights.edges
    diff = P[e[:, 0]] - P[e[:, 1]]
    smooth = float(np.sum(weights.w[:, None] * diff * diff))
    dev = P - a
    if prior_rows is not None:
        dev = dev[prior_rows]
    return 0.5 * (smooth + lambda_prior * float(np.sum(dev * dev)))
