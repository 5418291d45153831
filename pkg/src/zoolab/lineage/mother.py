"""Kurtosis-penalised distance matrix and minimum spanning arborescences."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import ClusterTooSmall


@dataclass(frozen=True, eq=False)
class MotherMatrix:
    """``cost[i, j]`` is the price of the directed edge parent ``i`` -> child ``j``."""

    d_c: np.ndarray
    lam: float
    d_bar: float
    comparison: np.ndarray
    cost: np.ndarray

    @property
    def n(self) -> int:
        return len(self.cost)


def kurtosis_comparison(kurtoses, flip: bool = False) -> np.ndarray:
    """Entry ``[i, j]`` is 1 iff kurtosis i > kurtosis j (strict); ``flip`` reverses it."""
    k = np.asarray(kurtoses, dtype=np.float64)
    t = k[:, None] < k[None, :] if flip else k[:, None] > k[None, :]
    return t.astype(np.int64)


def mother_matrix(d_c, kurtoses, lam: float = 1.0, flip: bool = False) -> MotherMatrix:
    d_c = np.asarray(d_c, dtype=np.float64)
    n = len(d_c)
    if n < 2:
        raise ClusterTooSmall(f"need at least 2 models, got {n}")
    if d_c.shape != (n, n) or len(kurtoses) != n:
        raise ValueError("distance matrix and kurtoses disagree in size")
    if not np.array_equal(d_c, d_c.T) or np.any(np.diag(d_c) != 0):
        raise ValueError("distance matrix must be symmetric with a zero diagonal")
    if lam < 0:
        raise ValueError("lam must be non-negative")
    off = ~np.eye(n, dtype=bool)
    d_bar = float(d_c[off].sum() / (n * n - n))
    comparison = kurtosis_comparison(kurtoses, flip)
    cost = d_c + lam * d_bar * comparison
    np.fill_diagonal(cost, np.inf)
    return MotherMatrix(d_c, float(lam), d_bar, comparison, cost)


@dataclass(frozen=True)
class Arborescence:
    root: int
    edges: tuple[tuple[int, int], ...]
    total_cost: float


def _find_cycle(parent: dict[int, int]):
    color = {}
    for start in sorted(parent):
        path = []
        v = start
        while v in parent and v not in color:
            color[v] = start
            path.append(v)
            v = parent[v]
        if v in color and color[v] == start:
            return path[path.index(v) :]
    return None


def _edmonds(weights: np.ndarray, nodes: list[int], root: int) -> dict[int, int]:
    """Chu-Liu/Edmonds on the sub-matrix restricted to ``nodes``; returns child -> parent.

    ``weights`` is indexed by node label; ties in the cheapest incoming edge go
    to the lowest parent label.
    """
    parent = {}
    for v in nodes:
        if v == root:
            continue
        best, best_u = np.inf, None
        for u in nodes:
            if u != v and weights[u, v] < best:
                best, best_u = weights[u, v], u
        if best_u is None:
            raise ValueError(f"node {v} is unreachable")
        parent[v] = best_u
    cycle = _find_cycle(parent)
    if cycle is None:
        return parent

    in_cycle = set(cycle)
    c = max(weights.shape[0], max(nodes) + 1)
    size = c + 1
    weights2 = np.full((size, size), np.inf)
    rest = [v for v in nodes if v not in in_cycle]
    weights2[np.ix_(rest, rest)] = weights[np.ix_(rest, rest)]
    enter, leave = {}, {}
    for u in rest:
        best, best_v = np.inf, None
        for v in cycle:
            w = weights[u, v] - weights[parent[v], v]
            if w < best or (w == best and best_v is not None and v < best_v):
                best, best_v = w, v
        weights2[u, c] = best
        enter[u] = best_v
    for v in rest:
        best, best_u = np.inf, None
        for u in cycle:
            if weights[u, v] < best or (weights[u, v] == best and best_u is not None and u < best_u):
                best, best_u = weights[u, v], u
        weights2[c, v] = best
        leave[v] = best_u
    sub = _edmonds(weights2, rest + [c], root)

    out = {}
    for v, u in sub.items():
        if v == c:
            entry = enter[u]
            for x in cycle:
                out[x] = parent[x]
            out[entry] = u
        elif u == c:
            out[v] = leave[v]
        else:
            out[v] = u
    return out


def arborescence_for_root(matrix, root: int) -> Arborescence:
    weights = np.array(matrix.cost if isinstance(matrix, MotherMatrix) else matrix, dtype=np.float64)
    n = len(weights)
    weights[:, root] = np.inf
    np.fill_diagonal(weights, np.inf)
    parent = _edmonds(weights, list(range(n)), root)
    edges = tuple(sorted((p, v) for v, p in parent.items()))
    cost = float(sum(weights[p, v] for p, v in edges))
    return Arborescence(root, edges, cost)


def min_arborescence(matrix) -> Arborescence:
    """Minimum-cost spanning arborescence over every choice of root.

    Equal costs keep the lowest root index.
    """
    weights = np.asarray(matrix.cost if isinstance(matrix, MotherMatrix) else matrix, dtype=np.float64)
    n = len(weights)
    if n == 0:
        raise ValueError("empty matrix")
    if n == 1:
        return Arborescence(0, (), 0.0)
    best = None
    for r in range(n):
        cand = arborescence_for_root(weights, r)
        if best is None or cand.total_cost < best.total_cost:
            best = cand
    return best
