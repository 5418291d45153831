"""Lineage-recovery experiments on a generated zoo.

For every pretrained model the *base run* is its first fine-tuning cell
in grid order.  The ``epochs`` variation uses that run's first
``n_children`` epoch checkpoints as children; a factor variation uses the
runs that match the base run on every grid factor except that one, and
splits the ``n_children`` budget over their early epochs.  Ground truth
links the pretrained model to epoch 1 of each run and every epoch to the
next one.
"""

from __future__ import annotations

from dataclasses import dataclass

from ..grid import GRID_FACTORS
from ..store import ModelEntry, ZooManifest
from .tree import LineageTree, TreeEvalReport, evaluate_tree, recover_model_tree

#: variation name -> fine-tuning factor it varies (None: epochs only)
VARIATIONS = {
    "epochs": None,
    "seed": "head_seed",
    "lr": "lr",
    "head": "head",
    "optimizer": "optimizer",
}
DEFAULT_CHILDREN = 6


@dataclass(frozen=True)
class LineageExperiment:
    variation: str
    nodes: tuple[tuple[str, int | None], ...]  # (model id, epoch or None for final)
    truth: LineageTree
    k: int


@dataclass(frozen=True)
class ExperimentResult:
    experiment: LineageExperiment
    tree: LineageTree
    report: TreeEvalReport
    flip: bool
    lam: float


def _same_except(a: ModelEntry, b: ModelEntry, factor: str) -> bool:
    return all(a.factors.fine.factor(f) == b.factors.fine.factor(f) for f in GRID_FACTORS if f != factor)


def _split(total: int, parts: int) -> list[int]:
    base, extra = divmod(total, parts)
    return [base + (i < extra) for i in range(parts)]


def build_experiment(manifest: ZooManifest, variation: str, n_children: int = DEFAULT_CHILDREN) -> LineageExperiment:
    if variation not in VARIATIONS:
        raise ValueError(f"unknown variation {variation!r}; choose from {sorted(VARIATIONS)}")
    factor = VARIATIONS[variation]
    nodes, edges = [], []
    n_clusters = 0
    for pre in manifest.pretrained:
        kids = [e for e in manifest.children(pre.id) if e.status == "ok"]
        if pre.status != "ok" or not kids:
            continue
        base = kids[0]
        runs = [base] if factor is None else [e for e in kids if _same_except(e, base, factor)]
        n_clusters += 1
        root = len(nodes)
        nodes.append((pre.id, None))
        for run, m in zip(runs, _split(n_children, len(runs))):
            prev = root
            for epoch in range(1, min(m, run.last_epoch) + 1):
                edges.append((prev, len(nodes)))
                prev = len(nodes)
                nodes.append((run.id, epoch))
    if not nodes:
        raise ValueError("zoo has no usable pretrained models")
    truth = LineageTree(len(nodes), tuple(edges))
    return LineageExperiment(variation, tuple(nodes), truth, n_clusters)


def load_nodes(manifest: ZooManifest, nodes) -> list:
    return [manifest.load(mid, epoch) for mid, epoch in nodes]


def run_experiment(
    manifest: ZooManifest,
    variation: str,
    n_children: int = DEFAULT_CHILDREN,
    lam: float = 1.0,
    seed: int = 0,
    flip: bool = False,
    k=None,
    models=None,
) -> ExperimentResult:
    exp = build_experiment(manifest, variation, n_children)
    models = load_nodes(manifest, exp.nodes) if models is None else models
    tree = recover_model_tree(models, exp.k if k is None else k, lam=lam, seed=seed, flip=flip)
    return ExperimentResult(exp, tree, evaluate_tree(tree, exp.truth), flip, lam)


def zoo_truth(manifest: ZooManifest) -> tuple[list[str], LineageTree]:
    """Ground-truth forest over all final checkpoints (pretrained first)."""
    ok = [e for e in manifest.entries if e.status == "ok"]
    index = {e.id: i for i, e in enumerate(ok)}
    edges = [(index[e.parent_id], index[e.id]) for e in ok if e.parent_id in index]
    roots = [index[e.id] for e in ok if e.parent_id is None]
    return [e.id for e in ok], LineageTree(len(ok), tuple(edges), tuple(roots))


def result_row(res: ExperimentResult) -> dict:
    r = res.report
    return {
        "variation": res.experiment.variation,
        "flip_kurtosis_penalty": res.flip,
        "lambda": res.lam,
        "n_models": res.experiment.truth.n,
        "k": res.experiment.k,
        "accuracy": r.accuracy,
        "f1": r.f1,
        "precision": r.precision,
        "recall": r.recall,
    }
