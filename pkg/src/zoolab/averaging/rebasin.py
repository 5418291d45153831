"""Hidden-unit permutations, data-free weight matching and aligned merging."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import ArchMismatch
from ..metrics import evaluate
from ..nn import layer_names
from ..tensor import HEAD_PREFIX, ModelCheckpoint, NamedTensor, rng_for
from .average import check_same_arch, uniform_average
from .hungarian import linear_sum_assignment

MAX_PASSES = 50
ALPHAS = (0.0, 0.25, 0.5, 0.75, 1.0)


@dataclass(frozen=True, eq=False)
class PermutationSet:
    """One permutation per backbone layer, in gather form: unit ``i`` of the
    permuted layer is unit ``perms[l][i]`` of the original."""

    layers: tuple[str, ...]
    perms: tuple[np.ndarray, ...]

    def __post_init__(self):
        perms = tuple(np.asarray(p, dtype=np.int64) for p in self.perms)
        if len(perms) != len(self.layers):
            raise ValueError("one permutation per layer is required")
        for p in perms:
            if not np.array_equal(np.sort(p), np.arange(len(p))):
                raise ValueError("not a permutation")
        object.__setattr__(self, "perms", perms)

    def __eq__(self, other):
        if not isinstance(other, PermutationSet):
            return NotImplemented
        return self.layers == other.layers and all(np.array_equal(a, b) for a, b in zip(self.perms, other.perms))

    def inverse(self) -> "PermutationSet":
        return PermutationSet(self.layers, tuple(np.argsort(p) for p in self.perms))

    def is_identity(self) -> bool:
        return all(np.array_equal(p, np.arange(len(p))) for p in self.perms)


def backbone_layers(ckpt: ModelCheckpoint) -> list[tuple[str, str]]:
    return [l for l in layer_names(ckpt.names) if not l[0].startswith(HEAD_PREFIX)]


def _next_weight(ckpt: ModelCheckpoint, layers, i):
    """Name of the weight that consumes the output of backbone layer ``i``."""
    all_layers = layer_names(ckpt.names)
    pos = all_layers.index(layers[i])
    return all_layers[pos + 1][0] if pos + 1 < len(all_layers) else None


def identity_perms(ckpt: ModelCheckpoint) -> PermutationSet:
    layers = backbone_layers(ckpt)
    return PermutationSet(tuple(w for w, _ in layers), tuple(np.arange(ckpt[w].shape[0]) for w, _ in layers))


def random_perms(ckpt: ModelCheckpoint, rng: np.random.Generator) -> PermutationSet:
    layers = backbone_layers(ckpt)
    return PermutationSet(tuple(w for w, _ in layers), tuple(rng.permutation(ckpt[w].shape[0]) for w, _ in layers))


def permute_model(ckpt: ModelCheckpoint, perms: PermutationSet) -> ModelCheckpoint:
    """Reorder hidden units; the network function is unchanged."""
    layers = backbone_layers(ckpt)
    if perms.layers != tuple(w for w, _ in layers):
        raise ArchMismatch("permutation set does not match the checkpoint layers")
    arrays = {t.name: t.data for t in ckpt.tensors}
    prev = None
    for i, (w, b) in enumerate(layers):
        p = perms.perms[i]
        if len(p) != arrays[w].shape[0]:
            raise ArchMismatch(f"permutation for {w} has the wrong size")
        mat = arrays[w][p]
        if prev is not None:
            mat = mat[:, prev]
        arrays[w] = mat
        arrays[b] = arrays[b][p]
        prev = p
    nxt = _next_weight(ckpt, layers, len(layers) - 1) if layers else None
    if nxt is not None:
        arrays[nxt] = arrays[nxt][:, prev]
    return ckpt.replace(tensors=tuple(NamedTensor(t.name, arrays[t.name]) for t in ckpt.tensors))


def weight_matching_align(
    ref: ModelCheckpoint, other: ModelCheckpoint, seed: int = 0, max_passes: int = MAX_PASSES
) -> PermutationSet:
    """Permutations that bring ``other`` as close as possible to ``ref``.

    Coordinate descent over layers (seeded random order per pass); each
    step solves one assignment problem on the incoming weights, the bias and
    the outgoing weights of that layer.  Stops after a pass without changes.
    The start point comes from one input-to-output sweep that matches each
    layer on its incoming weights and bias only.
    """
    check_same_arch([ref, other])
    layers = backbone_layers(ref)
    r = {t.name: t.data.astype(np.float64) for t in ref.tensors}
    o = {t.name: t.data.astype(np.float64) for t in other.tensors}
    nexts = [_next_weight(ref, layers, i) for i in range(len(layers))]
    perms = []
    for i, (w, b) in enumerate(layers):
        inc = o[w] if i == 0 else o[w][:, perms[i - 1]]
        perms.append(linear_sum_assignment(r[w] @ inc.T + np.outer(r[b], o[b]), maximize=True)[1])
    rng = rng_for(seed, "weight-matching")
    for _ in range(max_passes):
        changed = False
        for i in rng.permutation(len(layers)):
            w, b = layers[i]
            inc = o[w] if i == 0 else o[w][:, perms[i - 1]]
            sim = r[w] @ inc.T + np.outer(r[b], o[b])
            nxt = nexts[i]
            if nxt is not None:
                out = o[nxt] if i + 1 >= len(layers) else o[nxt][perms[i + 1]]
                sim += r[nxt].T @ out
            _, cols = linear_sum_assignment(sim, maximize=True)
            if not np.array_equal(cols, perms[i]):
                perms[i] = cols
                changed = True
        if not changed:
            break
    return PermutationSet(tuple(w for w, _ in layers), tuple(perms))


def align_to(ref: ModelCheckpoint, other: ModelCheckpoint, seed: int = 0) -> ModelCheckpoint:
    return permute_model(other, weight_matching_align(ref, other, seed))


def rebasin_merge(models, ref_index: int = 0, seed: int = 0) -> ModelCheckpoint:
    """Align every model to ``models[ref_index]`` and average uniformly."""
    models = list(models)
    if len(models) < 2:
        raise ValueError("need at least two models to merge")
    check_same_arch(models)
    ref = models[ref_index]
    aligned = [m if i == ref_index else align_to(ref, m, seed) for i, m in enumerate(models)]
    return uniform_average(aligned)


def interpolate(a: ModelCheckpoint, b: ModelCheckpoint, alpha: float) -> ModelCheckpoint:
    """``(1 - alpha) * a + alpha * b`` per tensor."""
    check_same_arch([a, b])
    tensors = tuple(
        NamedTensor(ta.name, (1.0 - alpha) * ta.data.astype(np.float64) + alpha * tb.data.astype(np.float64))
        for ta, tb in zip(a.tensors, b.tensors)
    )
    return a.replace(tensors=tensors)


def interpolation_curve(a, b, dataset, alphas=ALPHAS, align: bool = True, seed: int = 0) -> list[dict]:
    """Test accuracy along the straight line from ``a`` to (aligned) ``b``."""
    if align:
        b = align_to(a, b, seed)
    rows = []
    for alpha in alphas:
        res = evaluate(interpolate(a, b, alpha), dataset, "test")
        rows.append({"alpha": float(alpha), "accuracy": res["accuracy"], "mean_loss": res["mean_loss"]})
    return rows
