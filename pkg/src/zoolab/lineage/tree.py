"""Model-tree recovery: cluster by weight distance, then one arborescence per cluster."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import ClusterTooSmall, DimensionMismatch
from ..metrics import moments, pairwise_distances
from ..tensor import WeightVector, flatten_weights, stack_vectors
from .kmeans import kmeans, select_k
from .mother import min_arborescence, mother_matrix


@dataclass(frozen=True)
class LineageTree:
    n: int
    edges: tuple[tuple[int, int], ...]
    roots: tuple[int, ...] = ()
    cluster_labels: tuple[int, ...] = ()

    def __post_init__(self):
        edges = tuple(sorted((int(p), int(c)) for p, c in self.edges))
        object.__setattr__(self, "edges", edges)
        object.__setattr__(self, "roots", tuple(sorted(int(r) for r in self.roots)))
        object.__setattr__(self, "cluster_labels", tuple(int(c) for c in self.cluster_labels))
        children = [c for _, c in edges]
        if len(set(children)) != len(children):
            raise ValueError("a node has more than one parent")
        parent = {c: p for p, c in edges}
        for v in range(self.n):
            seen = set()
            while v in parent:
                if v in seen:
                    raise ValueError("edges contain a cycle")
                seen.add(v)
                v = parent[v]

    def adjacency(self) -> np.ndarray:
        a = np.zeros((self.n, self.n), dtype=bool)
        for p, c in self.edges:
            a[p, c] = True
        return a

    def parent_of(self, node: int) -> int | None:
        for p, c in self.edges:
            if c == node:
                return p
        return None

    def to_json(self) -> dict:
        return {
            "n": self.n,
            "edges": [list(e) for e in self.edges],
            "roots": list(self.roots),
            "cluster_labels": list(self.cluster_labels),
        }


@dataclass(frozen=True)
class TreeEvalReport:
    accuracy: float
    f1: float
    precision: float
    recall: float
    true_positives: int
    n_predicted: int
    n_true: int


def evaluate_tree(pred: LineageTree, truth: LineageTree) -> TreeEvalReport:
    """Accuracy over all n*n adjacency entries and F1 over the edge class."""
    if pred.n != truth.n:
        raise DimensionMismatch(f"trees have {pred.n} and {truth.n} nodes")
    a, b = pred.adjacency(), truth.adjacency()
    tp = int(np.sum(a & b))
    n_pred, n_true = int(a.sum()), int(b.sum())
    acc = float(np.mean(a == b)) if pred.n else 1.0
    precision = tp / n_pred if n_pred else 0.0
    recall = tp / n_true if n_true else 0.0
    f1 = 2 * tp / (n_pred + n_true) if tp else 0.0
    if n_pred == n_true == 0:
        precision = recall = f1 = 1.0
    return TreeEvalReport(acc, f1, precision, recall, tp, n_pred, n_true)


def _vectors(models) -> list[WeightVector]:
    return [m if isinstance(m, WeightVector) else flatten_weights(m, "backbone_only") for m in models]


def _first_seen_labels(labels):
    mapping = {}
    return [mapping.setdefault(lab, len(mapping)) for lab in labels]


def recover_model_tree(
    models,
    k="auto",
    lam: float = 1.0,
    seed: int = 0,
    flip: bool = False,
    kurtosis_convention: str = "excess",
) -> LineageTree:
    """Recover a lineage forest from checkpoints (or backbone weight vectors).

    Models are put into a canonical order (lexicographic on their weights)
    before clustering, so the result does not depend on the input order.
    """
    vecs = _vectors(models)
    if not vecs:
        raise ValueError("no models given")
    x = stack_vectors(vecs)
    n = len(x)
    order = np.lexsort(x.T[::-1])
    xs = x[order]
    if k is None or k == "auto":
        k = select_k(xs, seed)
    labels = kmeans(xs, int(k), seed).labels

    edges, roots = [], []
    for c in range(int(labels.max()) + 1):
        members = np.flatnonzero(labels == c)
        if len(members) == 0:
            continue
        try:
            dist = pairwise_distances([vecs[order[i]] for i in members])
            kurt = [moments(vecs[order[i]].values, kurtosis_convention)[1] for i in members]
            arb = min_arborescence(mother_matrix(dist, kurt, lam, flip))
        except ClusterTooSmall:
            roots.append(int(order[members[0]]))
            continue
        roots.append(int(order[members[arb.root]]))
        edges += [(int(order[members[p]]), int(order[members[ch]])) for p, ch in arb.edges]

    canon_labels = np.empty(n, dtype=np.int64)
    canon_labels[order] = labels
    return LineageTree(n, tuple(edges), tuple(roots), tuple(_first_seen_labels(canon_labels.tolist())))
