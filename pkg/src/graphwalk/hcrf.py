"""Hierarchical CRF over parent-child sample pairs and its exact minimizer.

The HCRF only links each sample to its parent one layer up, so the graph is
a forest and a bottom-up min-sum pass followed by a top-down backtrack gives
the global optimum.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass

import numpy as np

from .errors import InvalidInputError, StructureError
from .weights import tukey

log = logging.getLogger(__name__)

PROB_CLAMP = 1e-12


def unaries_from_posteriors(P) -> np.ndarray:
    P = np.asarray(P, dtype=float)
    if np.any(P < PROB_CLAMP):
        log.info("clamping %d posterior entries below %g before the log", int((P < PROB_CLAMP).sum()), PROB_CLAMP)
    return -np.log(np.maximum(P, PROB_CLAMP))


@dataclass
class HcrfGraph:
    """Forest given by parent pointers.

    ``parent[v] == -1`` marks a root; ``weight[v]`` is the weight of the
    edge from ``v`` to its parent (ignored for roots).
    """

    unary: np.ndarray
    parent: np.ndarray
    weight: np.ndarray
    lambda_hcrf: float = 0.0
    layer_offsets: tuple = ()

    def __post_init__(self):
        self.unary = np.asarray(self.unary, dtype=float)
        self.parent = np.asarray(self.parent, dtype=np.int64)
        self.weight = np.asarray(self.weight, dtype=float)
        n = self.unary.shape[0]
        if self.parent.shape != (n,) or self.weight.shape != (n,):
            raise InvalidInputError("parent and weight need one entry per vertex")
        if np.any((self.parent < -1) | (self.parent >= n)):
            raise StructureError("parent index out of range")
        if np.any(self.weight[self.parent >= 0] < 0):
            raise InvalidInputError("HCRF weights must be non-negative")
        if self.lambda_hcrf < 0:
            raise InvalidInputError("lambda_hcrf must be non-negative")

    @property
    def n(self) -> int:
        return self.unary.shape[0]

    @property
    def n_clas(self) -> int:
        return self.unary.shape[1]

    def with_lambda(self, lambda_hcrf: float) -> "HcrfGraph":
        return HcrfGraph(self.unary, self.parent, self.weight, lambda_hcrf, self.layer_offsets)

    def depths(self) -> np.ndarray:
        """Depth of every vertex below its root; raises on cycles."""
        depth = np.full(self.n, -1, dtype=np.int64)
        depth[self.parent == -1] = 0
        frontier = np.nonzero(self.parent == -1)[0]
        children = _children_lists(self.parent)
        level = 0
        while frontier.size:
            level += 1
            nxt = np.concatenate([children[v] for v in frontier]) if frontier.size else frontier
            depth[nxt] = level
            frontier = nxt
        if np.any(depth < 0):
            raise StructureError("HCRF graph has a cycle; input is not a valid hierarchy")
        return depth

    def split(self, labels) -> list:
        """Per-layer label arrays according to ``layer_offsets``."""
        labels = np.asarray(labels)
        bounds = list(self.layer_offsets) + [self.n]
        return [labels[bounds[i]:bounds[i + 1]] for i in range(len(self.layer_offsets))]


def _children_lists(parent):
    order = np.argsort(parent, kind="stable")
    sorted_par = parent[order]
    children = {}
    starts = np.searchsorted(sorted_par, np.arange(parent.size))
    ends = np.searchsorted(sorted_par, np.arange(parent.size), side="right")
    for v in range(parent.size):
        children[v] = order[starts[v]:ends[v]]
    return children


@dataclass
class EnergyReport:
    unary: float
    pairwise: float
    disagreements: int

    @property
    def total(self) -> float:
        return self.unary + self.pairwise

    def to_dict(self):
        return {"unary": self.unary, "pairwise": self.pairwise, "total": self.total,
                "disagreements": self.disagreements}

    def to_json(self) -> str:
        return json.dumps(self.to_dict())


def energy_report(labels, graph: HcrfGraph) -> EnergyReport:
    labels = np.asarray(labels, dtype=np.int64)
    if labels.shape != (graph.n,) or np.any((labels < 0) | (labels >= graph.n_clas)):
        raise InvalidInputError("labeling must assign a valid class to every vertex")
    unary = float(graph.unary[np.arange(graph.n), labels].sum())
    child = np.nonzero(graph.parent >= 0)[0]
    differ = labels[child] != labels[graph.parent[child]]
    pair = float(graph.lambda_hcrf * graph.weight[child][differ].sum())
    return EnergyReport(unary, pair, int(differ.sum()))


def hcrf_energy(labels, graph: HcrfGraph) -> float:
    return energy_report(labels, graph).total


def minimize(graph: HcrfGraph) -> np.ndarray:
    """Exact minimizer of the HCRF energy by min-sum dynamic programming.

    Ties go to the smallest class index: at the roots via ``argmin`` and,
    going down, each child prefers the lowest-index class among its
    cheapest options given the parent's label.
    """
    depth = graph.depths()
    lam_w = graph.lambda_hcrf * graph.weight
    cost = graph.unary.copy()
    levels = [np.nonzero(depth == d)[0] for d in range(int(depth.max(initial=0)) + 1)]
    for verts in reversed(levels[1:]):
        c = cost[verts]
        best = c.min(axis=1, keepdims=True)
        msg = np.minimum(c, best + lam_w[verts, None])
        np.add.at(cost, graph.parent[verts], msg)
    labels = np.empty(graph.n, dtype=np.int64)
    labels[levels[0]] = np.argmin(cost[levels[0]], axis=1)
    for verts in levels[1:]:
        lp = labels[graph.parent[verts]]
        cand = cost[verts] + lam_w[verts, None]
        rows = np.arange(verts.size)
        cand[rows, lp] = cost[verts, lp]
        labels[verts] = np.argmin(cand, axis=1)
    return labels


def brute_force_minimum(graph: HcrfGraph):
    """Exhaustive search; only for tiny graphs (testing oracle)."""
    import itertools

    best, best_lab = np.inf, None
    for lab in itertools.product(range(graph.n_clas), repeat=graph.n):
        e = hcrf_energy(np.array(lab), graph)
        if e < best:
            best, best_lab = e, np.array(lab)
    return best, best_lab


def consolidated_sigma(sigma_r, sigma_r1) -> float:
    s0 = getattr(sigma_r, "sigma_out", sigma_r)
    s1 = getattr(sigma_r1, "sigma_out", sigma_r1)
    return float(min(s0, s1))


def hcrf_edge_weights(pyramid, features_ind, reliability, sigmas) -> list:
    """Weight of every child-to-parent edge, one array per layer ``0..n_lay-1``.

    ``features_ind``, ``reliability`` and ``sigmas`` are per-layer lists.
    """
    out = []
    for r in range(pyramid.n_lay):
        fc = np.asarray(features_ind[r], dtype=float)
        fp = np.asarray(features_ind[r + 1], dtype=float)
        if fc.ndim == 1:
            fc = fc[:, None]
        if fp.ndim == 1:
            fp = fp[:, None]
        if fc.shape[1] != fp.shape[1]:
            raise InvalidInputError(f"feature dimension differs between layers {r} and {r + 1}")
        par = pyramid.parents(r)
        sig = consolidated_sigma(sigmas[r], sigmas[r + 1])
        rho = np.abs(fc - fp[par]).sum(axis=1)
        t = np.exp(-tukey(rho, sig))
        h0 = np.asarray(reliability[r], dtype=float)
        h1 = np.asarray(reliability[r + 1], dtype=float)
        out.append(h0 * h1[par] * t)
    return out


def build_hcrf(pyramid, posteriors, features_ind, reliability, sigmas, lambda_hcrf=0.0) -> HcrfGraph:
    """Stack all layers (finest first) into one forest rooted at the coarsest layer."""
    n_lay = pyramid.n_lay
    offsets = np.cumsum([0] + [pyramid.n_samples(r) for r in range(n_lay + 1)])
    unary = np.vstack([unaries_from_posteriors(posteriors[r]) for r in range(n_lay + 1)])
    parent = np.full(offsets[-1], -1, dtype=np.int64)
    weight = np.zeros(offsets[-1])
    w_layers = hcrf_edge_weights(pyramid, features_ind, reliability, sigmas)
    for r in range(n_lay):
        sl = slice(offsets[r], offsets[r + 1])
        parent[sl] = offsets[r + 1] + pyramid.parents(r)
        weight[sl] = w_layers[r]
    return HcrfGraph(unary, parent, weight, lambda_hcrf, tuple(int(o) for o in offsets[:-1]))


def fuse(graph: HcrfGraph):
    """Minimize and return ``(labels per layer, energy report)``."""
    labels = minimize(graph)
    return graph.split(labels), energy_report(labels, graph)
