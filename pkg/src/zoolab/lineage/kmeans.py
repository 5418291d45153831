"""Seeded k-means (k-means++ init, Lloyd iterations) and silhouette-based k selection."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ..errors import DimensionMismatch, InvalidK
from ..tensor import WeightVector, rng_for

N_RESTARTS = 10
MAX_ITER = 300


@dataclass(eq=False)
class KMeansResult:
    labels: np.ndarray
    centers: np.ndarray
    inertia: float
    n_iter: int
    history: list[float] = field(default_factory=list)


def _as_matrix(vectors) -> np.ndarray:
    if isinstance(vectors, np.ndarray):
        if vectors.ndim != 2:
            raise DimensionMismatch("expected a 2-d array of vectors")
        return vectors.astype(np.float64)
    rows = [v.values if isinstance(v, WeightVector) else np.asarray(v) for v in vectors]
    if len({len(r) for r in rows}) > 1:
        raise DimensionMismatch("vectors have different lengths")
    return np.stack(rows).astype(np.float64)


def _sq_dists(x, centers):
    # one center at a time keeps memory at n*d
    out = np.empty((len(x), len(centers)))
    for j, c in enumerate(centers):
        diff = x - c
        out[:, j] = np.einsum("id,id->i", diff, diff)
    return out


def _span_coords(x):
    """Coordinates in an orthonormal basis of the centered point span.

    An isometry on the affine hull of the points, which holds every cluster
    mean, so k-means sees the same distances at a fraction of the width.
    """
    n, d = x.shape
    if d <= n:
        return x
    xc = x - x.mean(axis=0)
    q, _ = np.linalg.qr(xc.T)
    return xc @ q


def _plus_plus(x, k, rng):
    n = len(x)
    chosen = [int(rng.integers(n))]
    d2 = _sq_dists(x, x[chosen])[:, 0]
    for _ in range(1, k):
        total = d2.sum()
        if total > 0:
            nxt = int(rng.choice(n, p=d2 / total))
        else:
            # every point coincides with a center already
            rest = np.setdiff1d(np.arange(n), chosen)
            nxt = int(rng.choice(rest))
        chosen.append(nxt)
        d2 = np.minimum(d2, _sq_dists(x, x[nxt : nxt + 1])[:, 0])
    return x[chosen].copy()


def _lloyd(x, centers, max_iter):
    k = len(centers)
    labels = None
    history = []
    it = 0
    for it in range(1, max_iter + 1):
        d2 = _sq_dists(x, centers)
        new = np.argmin(d2, axis=1)
        history.append(float(d2[np.arange(len(x)), new].sum()))
        if labels is not None and np.array_equal(new, labels):
            break
        labels = new
        for c in range(k):
            members = labels == c
            if members.any():
                centers[c] = x[members].mean(axis=0)
        empty = [c for c in range(k) if not np.any(labels == c)]
        for c in empty:
            # re-seed at the point farthest from its own center
            own = _sq_dists(x, centers)[np.arange(len(x)), labels]
            counts = np.bincount(labels, minlength=k)
            own[counts[labels] <= 1] = -1.0
            far = int(np.argmax(own))
            old = labels[far]
            labels[far] = c
            centers[c] = x[far]
            centers[old] = x[labels == old].mean(axis=0)
    d2 = _sq_dists(x, centers)
    inertia = float(d2[np.arange(len(x)), labels].sum())
    return labels, centers, inertia, it, history


def _canonical_labels(labels):
    """Relabel clusters by order of first appearance."""
    mapping = {}
    for lab in labels:
        mapping.setdefault(int(lab), len(mapping))
    return np.array([mapping[int(lab)] for lab in labels], dtype=np.int64)


def kmeans(vectors, k: int, seed: int = 0, n_init: int = N_RESTARTS, max_iter: int = MAX_ITER) -> KMeansResult:
    x = _as_matrix(vectors)
    n = len(x)
    if not 1 <= k <= n:
        raise InvalidK(f"k={k} is not in [1, {n}]")
    z = _span_coords(x)
    best = None
    for r in range(n_init):
        rng = rng_for(seed, "kmeans", str(r))
        labels, _, inertia, n_iter, history = _lloyd(z, _plus_plus(z, k, rng), max_iter)
        if best is None or inertia < best.inertia:
            best = KMeansResult(labels, None, inertia, n_iter, history)
    labels = _canonical_labels(best.labels)
    centers = np.stack([x[labels == c].mean(axis=0) for c in range(k)])
    return KMeansResult(labels, centers, best.inertia, best.n_iter, best.history)


def silhouette(dist: np.ndarray, labels) -> float:
    """Mean silhouette coefficient; points in singleton clusters score 0."""
    dist = np.asarray(dist, dtype=np.float64)
    labels = np.asarray(labels)
    ks = np.unique(labels)
    if len(ks) < 2:
        raise InvalidK("silhouette needs at least two clusters")
    scores = np.zeros(len(labels))
    for i in range(len(labels)):
        own = labels == labels[i]
        if own.sum() == 1:
            continue
        a = dist[i, own].sum() / (own.sum() - 1)
        b = min(dist[i, labels == c].mean() for c in ks if c != labels[i])
        denom = max(a, b)
        scores[i] = (b - a) / denom if denom > 0 else 0.0
    return float(scores.mean())


def candidate_ks(n: int) -> list[int]:
    return list(range(2, math.ceil(n / 4) + 1))


def select_k(vectors, seed: int = 0) -> int:
    """Best silhouette over k in [2, ceil(n/4)]; 1 when that range is empty."""
    x = _as_matrix(vectors)
    ks = candidate_ks(len(x))
    if not ks:
        return 1
    z = _span_coords(x)
    dist = np.sqrt(_sq_dists(z, z))
    scores = [silhouette(dist, kmeans(z, k, seed).labels) for k in ks]
    return ks[int(np.argmax(scores))]


def purity(labels, truth) -> float:
    """Fraction of points that carry the majority true label of their cluster."""
    labels = np.asarray(labels)
    truth = np.asarray(truth)
    hits = 0
    for c in np.unique(labels):
        _, counts = np.unique(truth[labels == c], return_counts=True)
        hits += counts.max()
    return hits / len(labels)
