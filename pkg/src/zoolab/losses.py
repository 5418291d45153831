"""Losses with analytic gradients: softmax cross-entropy and symmetric InfoNCE."""

from __future__ import annotations

import numpy as np

from .errors import DegenerateEmbedding, DimensionMismatch, InvalidLabel


def _log_softmax(z):
    z = z - z.max(axis=1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=1, keepdims=True))


def loss_cross_entropy(logits, labels):
    """Mean cross-entropy and its gradient with respect to ``logits``."""
    logits = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(labels)
    batch, n_classes = logits.shape
    if labels.shape != (batch,) or labels.min(initial=0) < 0 or labels.max(initial=0) >= n_classes:
        raise InvalidLabel(f"labels must be {batch} ints in [0, {n_classes})")
    logp = _log_softmax(logits)
    rows = np.arange(batch)
    loss = -logp[rows, labels].mean()
    grad = np.exp(logp)
    grad[rows, labels] -= 1.0
    return float(loss), grad / batch


def loss_infonce(embeddings_a, embeddings_b, temperature=0.5):
    """Symmetric InfoNCE (NT-Xent) over the ``2 * batch`` views.

    Row ``i`` of ``a`` and row ``i`` of ``b`` are the positive pair; every
    other view in the batch is a negative. Similarities are cosine.

    Returns ``(loss, (grad_a, grad_b))``.
    """
    a = np.asarray(embeddings_a, dtype=np.float64)
    b = np.asarray(embeddings_b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 2 or a.shape[0] < 1:
        raise DimensionMismatch(f"embedding shapes must match: {a.shape} vs {b.shape}")
    if temperature <= 0:
        raise ValueError("temperature must be positive")
    batch = a.shape[0]
    u = np.concatenate([a, b])
    norms = np.linalg.norm(u, axis=1, keepdims=True)
    if np.any(norms == 0):
        raise DegenerateEmbedding("zero-norm embedding row")
    z = u / norms
    n = 2 * batch
    s = (z @ z.T) / temperature
    np.fill_diagonal(s, -np.inf)
    pos = np.concatenate([np.arange(batch, n), np.arange(batch)])
    logp = s - s.max(axis=1, keepdims=True)
    logp = logp - np.log(np.exp(logp).sum(axis=1, keepdims=True))
    rows = np.arange(n)
    loss = -logp[rows, pos].mean()

    # dL/ds for each anchor row, then through s = z z^T / t
    g = np.exp(logp)
    g[rows, pos] -= 1.0
    g /= n * temperature
    gz = (g + g.T) @ z
    gu = (gz - z * np.sum(gz * z, axis=1, keepdims=True)) / norms
    return float(loss), (gu[:batch], gu[batch:])
