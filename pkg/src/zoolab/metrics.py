"""Behavioural and weight-space diversity metrics and the zoo reports."""

from __future__ import annotations

import csv
import io
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .data import Dataset, make_dataset
from .errors import DegenerateDistribution, DimensionMismatch
from .nn import logits
from .store import ModelEntry, ZooManifest
from .tensor import ModelCheckpoint, WeightVector, flatten_weights, l2_distance, stack_vectors

log = logging.getLogger(__name__)

KURTOSIS_CONVENTIONS = ("excess", "pearson")


@dataclass(frozen=True)
class WeightStats:
    skewness: float
    kurtosis: float
    l2_norm: float


@dataclass(frozen=True)
class MetricsRecord:
    model_id: str
    train_acc: float | None
    test_acc: float | None
    ggap: float | None
    skewness: float
    kurtosis: float
    l2_norm: float
    l2_dist_to_ancestor: float | None = None


@dataclass(frozen=True, eq=False)
class AgreementMatrix:
    values: np.ndarray
    model_ids: list[str]


@dataclass(frozen=True)
class ClusterStats:
    within_mean: float | None
    within_std: float | None
    between_mean: float | None
    between_std: float | None
    n_within: int = 0
    n_between: int = 0
    skipped: tuple[str, ...] = ()


# -- behaviour -----------------------------------------------------------------


def _outputs(ckpt: ModelCheckpoint, x: np.ndarray, n_classes: int | None = None) -> np.ndarray:
    first = ckpt.tensors[0].data
    if first.shape[1] != x.shape[1]:
        raise DimensionMismatch(f"model expects {first.shape[1]} inputs, data has {x.shape[1]}")
    out = logits(ckpt, x)
    if n_classes is not None and out.shape[1] != n_classes:
        raise DimensionMismatch(f"model has {out.shape[1]} outputs, dataset has {n_classes} classes")
    return out


def predictions(ckpt: ModelCheckpoint, dataset: Dataset, split: str = "test") -> np.ndarray:
    x, _ = dataset.split(split)
    # np.argmax returns the first maximum, i.e. ties go to the lowest class
    return np.argmax(_outputs(ckpt, x, dataset.n_classes), axis=1)


def evaluate(ckpt: ModelCheckpoint, dataset: Dataset, split: str = "test") -> dict:
    x, y = dataset.split(split)
    out = _outputs(ckpt, x, dataset.n_classes)
    z = out - out.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    return {
        "accuracy": float(np.mean(np.argmax(out, axis=1) == y)),
        "mean_loss": float(-logp[np.arange(len(y)), y].mean()),
    }


def agreement(a: ModelCheckpoint, b: ModelCheckpoint, dataset: Dataset) -> float:
    """Fraction of test samples on which both models predict the same class."""
    return float(np.mean(predictions(a, dataset) == predictions(b, dataset)))


def agreement_from_predictions(preds: np.ndarray) -> np.ndarray:
    preds = np.asarray(preds)
    n = len(preds)
    out = np.ones((n, n))
    for i in range(n):
        out[i, i + 1 :] = np.mean(preds[i + 1 :] == preds[i], axis=1)
        out[i + 1 :, i] = out[i, i + 1 :]
    return out


def agreement_matrix(models, dataset: Dataset, model_ids=None) -> AgreementMatrix:
    preds = np.stack([predictions(m, dataset) for m in models])
    ids = list(model_ids) if model_ids is not None else [str(i) for i in range(len(models))]
    return AgreementMatrix(agreement_from_predictions(preds), ids)


# -- weight statistics -----------------------------------------------------------


def moments(values, kurtosis_convention: str = "excess") -> tuple[float, float]:
    """Sample skewness m3/m2^1.5 and kurtosis m4/m2^2 (minus 3 for excess)."""
    if kurtosis_convention not in KURTOSIS_CONVENTIONS:
        raise ValueError(f"unknown kurtosis convention {kurtosis_convention!r}")
    v = np.asarray(values, dtype=np.float64).ravel()
    c = v - v.mean()
    m2 = np.mean(c * c)
    if not m2 > 0:
        raise DegenerateDistribution("weights have zero variance")
    m3 = np.mean(c**3)
    m4 = np.mean(c**4)
    kurt = m4 / m2**2
    if kurtosis_convention == "excess":
        kurt -= 3.0
    return float(m3 / m2**1.5), float(kurt)


def weight_stats(ckpt, selector: str = "all", kurtosis_convention: str = "excess") -> WeightStats:
    vec = ckpt if isinstance(ckpt, WeightVector) else flatten_weights(ckpt, selector)
    v = vec.values.astype(np.float64)
    skew, kurt = moments(v, kurtosis_convention)
    return WeightStats(skew, kurt, float(np.sqrt(np.dot(v, v))))


def pairwise_distances(models, selector: str = "backbone_only") -> np.ndarray:
    """Symmetric matrix of L2 distances between the selected weights."""
    vecs = [m if isinstance(m, WeightVector) else flatten_weights(m, selector) for m in models]
    x = stack_vectors(vecs)
    n = len(x)
    out = np.zeros((n, n))
    for i in range(n):
        diff = x[i + 1 :] - x[i]
        out[i, i + 1 :] = np.sqrt(np.einsum("ij,ij->i", diff, diff))
        out[i + 1 :, i] = out[i, i + 1 :]
    return out


def _mean_std(values):
    if len(values) == 0:
        return None, None
    a = np.asarray(values, dtype=np.float64)
    if np.all(a == a[0]):
        # exact for constant groups, np.mean can be off by an ulp
        return float(a[0]), 0.0
    return float(a.mean()), float(a.std())


# -- zoo level -------------------------------------------------------------------


class ZooEvaluator:
    """Loads final checkpoints once and caches per-model metrics."""

    def __init__(self, manifest: ZooManifest, kurtosis_convention: str = "excess"):
        self.manifest = manifest
        self.kurtosis_convention = kurtosis_convention
        self._ckpts: dict[str, ModelCheckpoint] = {}
        self._datasets: dict = {}
        self._records: dict[str, MetricsRecord] = {}
        self._preds: dict[str, np.ndarray] = {}

    def checkpoint(self, model_id: str) -> ModelCheckpoint:
        if model_id not in self._ckpts:
            self._ckpts[model_id] = self.manifest.load(model_id)
        return self._ckpts[model_id]

    def dataset(self, entry: ModelEntry) -> Dataset:
        spec = entry.factors.dataset
        if spec not in self._datasets:
            self._datasets[spec] = make_dataset(spec)
        return self._datasets[spec]

    def is_supervised(self, entry: ModelEntry) -> bool:
        return entry.factors.fine is not None or entry.factors.pre.task == "supervised"

    def test_predictions(self, model_id: str) -> np.ndarray:
        if model_id not in self._preds:
            entry = self.manifest.get(model_id)
            self._preds[model_id] = predictions(self.checkpoint(model_id), self.dataset(entry))
        return self._preds[model_id]

    def record(self, model_id: str) -> MetricsRecord:
        if model_id in self._records:
            return self._records[model_id]
        entry = self.manifest.get(model_id)
        ckpt = self.checkpoint(model_id)
        stats = weight_stats(ckpt, "all", self.kurtosis_convention)
        train_acc = test_acc = ggap = None
        if self.is_supervised(entry):
            ds = self.dataset(entry)
            train_acc = evaluate(ckpt, ds, "train")["accuracy"]
            test_acc = evaluate(ckpt, ds, "test")["accuracy"]
            ggap = train_acc - test_acc
        dist = None
        if entry.parent_id is not None:
            dist = l2_distance(
                flatten_weights(ckpt, "backbone_only"),
                flatten_weights(self.checkpoint(entry.parent_id), "backbone_only"),
            )
        rec = MetricsRecord(model_id, train_acc, test_acc, ggap, stats.skewness, stats.kurtosis, stats.l2_norm, dist)
        self._records[model_id] = rec
        return rec

    def records(self) -> list[MetricsRecord]:
        return [self.record(e.id) for e in self.manifest.entries]


def cluster_distances(manifest: ZooManifest, selector: str = "backbone_only", evaluator=None) -> dict[str, ClusterStats]:
    """Ancestor-to-descendant (within) and pretrained-to-pretrained (between)
    distances, per pretraining task and over the whole zoo (key ``"all"``)."""
    ev = evaluator or ZooEvaluator(manifest)
    vec = {e.id: flatten_weights(ev.checkpoint(e.id), selector) for e in manifest.entries if e.status == "ok"}
    tasks = []
    for e in manifest.pretrained:
        if e.factors.pre.task not in tasks:
            tasks.append(e.factors.pre.task)
    out = {}
    for task in [*tasks, "all"]:
        pres = [e for e in manifest.pretrained if task == "all" or e.factors.pre.task == task]
        pres = [e for e in pres if e.id in vec]
        within, skipped = [], []
        for p in pres:
            kids = [c for c in manifest.children(p.id) if c.id in vec]
            if not kids:
                log.warning("pretrained model %s has no descendants; skipped", p.id)
                skipped.append(p.id)
            within += [l2_distance(vec[p.id], vec[c.id]) for c in kids]
        between = [
            l2_distance(vec[a.id], vec[b.id]) for i, a in enumerate(pres) for b in pres[i + 1 :]
        ]
        wm, ws = _mean_std(within)
        bm, bs = _mean_std(between)
        out[task] = ClusterStats(wm, ws, bm, bs, len(within), len(between), tuple(skipped))
    return out


# -- reports -----------------------------------------------------------------------

REPORT_FACTORS = (
    ("Pre-tr.", lambda e: e.factors.pre.task),
    ("Head", lambda e: e.factors.fine.head.kind),
    ("Optim.", lambda e: e.factors.fine.optimizer),
    ("LR", lambda e: e.factors.fine.lr),
)
REPORT_METRICS = ("accuracy", "ggap", "agreement", "skewness", "kurtosis", "l2_norm", "l2_distance")


def _group_row(factor, config, entries, ev: ZooEvaluator):
    row = {"factor": factor, "config": config, "n": len(entries)}
    if not entries:
        for m in REPORT_METRICS:
            row[f"{m}_mean"] = row[f"{m}_std"] = None
        return row
    recs = [ev.record(e.id) for e in entries]
    cols = {
        "accuracy": [r.test_acc for r in recs],
        "ggap": [r.ggap for r in recs],
        "skewness": [r.skewness for r in recs],
        "kurtosis": [r.kurtosis for r in recs],
        "l2_norm": [r.l2_norm for r in recs],
        "l2_distance": [r.l2_dist_to_ancestor for r in recs],
    }
    if len(entries) >= 2:
        agr = agreement_from_predictions(np.stack([ev.test_predictions(e.id) for e in entries]))
        cols["agreement"] = agr[np.triu_indices(len(entries), 1)]
    else:
        cols["agreement"] = []
    for m in REPORT_METRICS:
        row[f"{m}_mean"], row[f"{m}_std"] = _mean_std(cols[m])
    return row


def diversity_report(manifest: ZooManifest, threshold: float | None = None, evaluator=None) -> list[dict]:
    """Fine-tuned models grouped by one isolated generating factor at a time.

    ``threshold`` keeps only models whose test accuracy is strictly above it.
    """
    ev = evaluator or ZooEvaluator(manifest)
    models = [e for e in manifest.finetuned if e.status == "ok"]
    if threshold is not None:
        models = [e for e in models if ev.record(e.id).test_acc > threshold]
    rows = []
    for factor, key in REPORT_FACTORS:
        values = []
        for e in manifest.finetuned:
            if key(e) not in values:
                values.append(key(e))
        for v in values:
            rows.append(_group_row(factor, v, [e for e in models if key(e) == v], ev))
    rows.append(_group_row("All", "-", models, ev))
    return rows


def pretrained_report(manifest: ZooManifest, evaluator=None) -> list[dict]:
    """Per pretraining task: accuracy, weight statistics and cluster distances."""
    ev = evaluator or ZooEvaluator(manifest)
    dists = cluster_distances(manifest, evaluator=ev)
    rows = []
    for task, cs in dists.items():
        pres = [e for e in manifest.pretrained if task == "all" or e.factors.pre.task == task]
        recs = [ev.record(e.id) for e in pres if e.status == "ok"]
        accs = [r.test_acc for r in recs if r.test_acc is not None]
        row = {"task": task, "n": len(recs)}
        row["accuracy_mean"], row["accuracy_std"] = _mean_std(accs) if len(accs) == len(recs) else (None, None)
        for m in ("skewness", "kurtosis", "l2_norm"):
            row[f"{m}_mean"], row[f"{m}_std"] = _mean_std([getattr(r, m) for r in recs])
        row.update(
            within_mean=cs.within_mean,
            within_std=cs.within_std,
            between_mean=cs.between_mean,
            between_std=cs.between_std,
            skipped=";".join(cs.skipped),
        )
        rows.append(row)
    return rows


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def write_csv(rows: list[dict], path=None) -> str:
    """Write rows with a stable column order (first row's keys); returns the text."""
    buf = io.StringIO()
    if rows:
        w = csv.writer(buf, lineterminator="\n")
        cols = list(rows[0])
        w.writerow(cols)
        for r in rows:
            w.writerow([_fmt(r.get(c)) for c in cols])
    text = buf.getvalue()
    if path is not None:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        Path(path).write_text(text)
    return text


def records_table(records: list[MetricsRecord]) -> list[dict]:
    return [dict(vars(r)) for r in records]
