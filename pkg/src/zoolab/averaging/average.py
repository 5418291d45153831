"""Uniform weight averaging, epoch averaging and model soups."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import ArchMismatch, WindowTooLarge
from ..grid import GRID_FACTORS
from ..metrics import evaluate
from ..store import ModelEntry, ZooManifest
from ..tensor import HEAD_PREFIX, ModelCheckpoint, NamedTensor
from ..train import TrainTrajectory

#: soup vary keys -> grid factor they vary
SOUP_KEYS = {"lr": "lr", "optimizer": "optimizer", "head_seed": "head_seed", "head_arch": "head"}


def check_same_arch(ckpts) -> None:
    ckpts = list(ckpts)
    if not ckpts:
        raise ValueError("no checkpoints given")
    sig = [(t.name, t.shape) for t in ckpts[0].tensors]
    for c in ckpts[1:]:
        if [(t.name, t.shape) for t in c.tensors] != sig:
            raise ArchMismatch("checkpoints have different tensor names or shapes")


def mean_arrays(arrays) -> np.ndarray:
    """Elementwise mean with a reduction order that ignores argument order.

    Values are sorted along the model axis before the float64 sum, so any
    permutation of the inputs gives the same bits.
    """
    stack = np.sort(np.stack([np.asarray(a, dtype=np.float64) for a in arrays]), axis=0)
    total = stack[0].copy()
    for row in stack[1:]:
        total += row
    return (total / len(stack)).astype(np.float32)


def uniform_average(ckpts) -> ModelCheckpoint:
    ckpts = list(ckpts)
    check_same_arch(ckpts)
    tensors = tuple(
        NamedTensor(t.name, mean_arrays([c.tensors[i].data for c in ckpts])) for i, t in enumerate(ckpts[0].tensors)
    )
    stages = {c.stage for c in ckpts}
    return ModelCheckpoint(
        tensors,
        epoch=max(c.epoch for c in ckpts),
        stage=stages.pop() if len(stages) == 1 else "finetuning",
        arch_id=ckpts[0].arch_id,
    )


def _epoch_checkpoints(traj) -> list[ModelCheckpoint]:
    ckpts = traj.checkpoints if isinstance(traj, TrainTrajectory) else list(traj)
    return [c for c in ckpts if c.epoch >= 1]


def epoch_average(traj, window: int = 5) -> ModelCheckpoint:
    """Average of the last ``window`` epoch checkpoints (the initial state excluded)."""
    if window < 1:
        raise ValueError("window must be positive")
    ckpts = _epoch_checkpoints(traj)
    if len(ckpts) < window:
        raise WindowTooLarge(f"window {window} exceeds the {len(ckpts)} trained epochs")
    return uniform_average(ckpts[-window:])


def epoch_average_sweep(traj, window: int, dataset) -> list[dict]:
    """Per epoch ``e >= window``: accuracy of the epoch-average over ``e-window+1 .. e``
    next to the min/mean/max accuracy of the individual checkpoints."""
    if window < 1:
        raise ValueError("window must be positive")
    ckpts = _epoch_checkpoints(traj)
    if len(ckpts) < window:
        raise WindowTooLarge(f"window {window} exceeds the {len(ckpts)} trained epochs")
    accs = [evaluate(c, dataset, "test")["accuracy"] for c in ckpts]
    rows = []
    for end in range(window, len(ckpts) + 1):
        win = accs[end - window : end]
        merged = accs[end - 1] if window == 1 else evaluate(uniform_average(ckpts[end - window : end]), dataset, "test")["accuracy"]
        rows.append(
            {
                "epoch": ckpts[end - 1].epoch,
                "min_individual": min(win),
                "mean_individual": float(np.mean(win)),
                "max_individual": max(win),
                "averaged": merged,
            }
        )
    return rows


def load_trajectory(manifest: ZooManifest, entry: ModelEntry | str) -> TrainTrajectory:
    if isinstance(entry, str):
        entry = manifest.get(entry)
    ckpts = [manifest.load(entry, ep) for ep in manifest.epochs_on_disk(entry)]
    return TrainTrajectory(ckpts, list(entry.results))


def is_converged(entry: ModelEntry, window: int = 5, tol: float = 0.01) -> bool:
    """The run finished and its test accuracy moved by at most ``tol``
    between the first and the last epoch of the final window."""
    if entry.status != "ok" or len(entry.results) < window:
        return False
    accs = [r["test_acc"] for r in entry.results]
    if any(a is None for a in accs):
        return False
    return abs(accs[-1] - accs[-window]) <= tol


# -- soups ------------------------------------------------------------------------


@dataclass(frozen=True)
class SoupSpec:
    vary_key: str
    group_key: tuple


@dataclass(frozen=True, eq=False)
class Soup:
    spec: SoupSpec
    merged: ModelCheckpoint
    member_ids: tuple[str, ...]
    member_accs: tuple[float, ...]
    merged_acc: float

    @property
    def group_id(self) -> str:
        return "|".join(f"{k}={v}" for k, v in self.spec.group_key)


def backbone_soup(members, best: int) -> ModelCheckpoint:
    """Average the backbone tensors; keep the head of ``members[best]``."""
    backbones = [
        ModelCheckpoint(tuple(t for t in m.tensors if not t.name.startswith(HEAD_PREFIX)), arch_id=m.arch_id)
        for m in members
    ]
    avg = uniform_average(backbones)
    head = [t for t in members[best].tensors if t.name.startswith(HEAD_PREFIX)]
    return members[best].replace(tensors=avg.tensors + tuple(head))


def soup_groups(manifest: ZooManifest, vary_key: str) -> list[tuple[SoupSpec, list[ModelEntry]]]:
    """Fine-tuned models that agree on everything except ``vary_key``."""
    if vary_key not in SOUP_KEYS:
        raise ValueError(f"unknown vary key {vary_key!r}; choose from {sorted(SOUP_KEYS)}")
    factor = SOUP_KEYS[vary_key]
    groups: dict[tuple, list[ModelEntry]] = {}
    for e in manifest.finetuned:
        if e.status != "ok":
            continue
        key = (("pretrained", e.parent_id),) + tuple(
            (f, e.factors.fine.factor(f)) for f in GRID_FACTORS if f != factor
        )
        groups.setdefault(key, []).append(e)
    return [(SoupSpec(vary_key, k), v) for k, v in groups.items() if len(v) >= 2]


def make_soups(manifest: ZooManifest, vary_key: str, dataset_cache=None) -> list[Soup]:
    from ..data import make_dataset

    cache = {} if dataset_cache is None else dataset_cache
    soups = []
    for spec, entries in soup_groups(manifest, vary_key):
        ds_spec = entries[0].factors.dataset
        if ds_spec not in cache:
            cache[ds_spec] = make_dataset(ds_spec)
        ds = cache[ds_spec]
        members = [manifest.load(e) for e in entries]
        accs = [evaluate(m, ds, "test")["accuracy"] for m in members]
        if vary_key == "head_arch":
            merged = backbone_soup(members, int(np.argmax(accs)))
        else:
            merged = uniform_average(members)
        soups.append(
            Soup(spec, merged, tuple(e.id for e in entries), tuple(accs), evaluate(merged, ds, "test")["accuracy"])
        )
    return soups
