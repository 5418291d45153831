"""On-disk zoo layout and the manifest scanned from it.

::

    <root>/
      zoo_config.json
      pretraining/<model>/checkpoint_000000/weights.bin ... config.json result.json
      finetuning/<pretrained model>/<model>/checkpoint_XXXXXX/ ... config.json result.json
"""

from __future__ import annotations

import json
import logging
import re
from dataclasses import dataclass, field
from pathlib import Path

from .errors import MalformedZoo
from .grid import GeneratingFactors, config_dump
from .tensor import ModelCheckpoint, checkpoint_dir, load_checkpoint, save_checkpoint

log = logging.getLogger(__name__)

CHECKPOINT_RE = re.compile(r"^checkpoint_(\d{6})$")
#: files and folders the CLI may add next to the layout
ROOT_FILES = {"zoo_config.json", "zoolab.log", "analysis", "report", "tree.json"}
MODEL_FILES = {"config.json", "result.json"}
WEIGHTS_FILE = "weights.bin"
STATUSES = ("ok", "diverged")


def parse_checkpoint_name(name: str) -> int | None:
    m = CHECKPOINT_RE.match(name)
    return int(m.group(1)) if m else None


@dataclass
class ModelEntry:
    id: str
    path: str
    factors: GeneratingFactors
    index: int
    parent_id: str | None = None
    status: str = "ok"
    results: list[dict] = field(default_factory=list)

    @property
    def final(self) -> dict:
        return self.results[-1] if self.results else {}

    @property
    def last_epoch(self) -> int:
        return self.results[-1]["epoch"] if self.results else 0

    def config_json(self) -> dict:
        return {"x_id": self.id, "x_parent_id": self.parent_id, "x_index": self.index, **self.factors.to_config()}

    def result_json(self) -> dict:
        return {"status": self.status, "epochs": self.results}


@dataclass
class ZooManifest:
    root_dir: Path
    pretrained: list[ModelEntry] = field(default_factory=list)
    finetuned: list[ModelEntry] = field(default_factory=list)

    def __post_init__(self):
        self.root_dir = Path(self.root_dir)

    @property
    def entries(self) -> list[ModelEntry]:
        return self.pretrained + self.finetuned

    def get(self, model_id: str) -> ModelEntry:
        for e in self.entries:
            if e.id == model_id:
                return e
        raise KeyError(model_id)

    def children(self, parent_id: str) -> list[ModelEntry]:
        return [e for e in self.finetuned if e.parent_id == parent_id]

    def model_dir(self, entry: ModelEntry) -> Path:
        return self.root_dir / entry.path

    def checkpoint_path(self, entry: ModelEntry, epoch: int | None = None) -> Path:
        epoch = entry.last_epoch if epoch is None else epoch
        return checkpoint_dir(self.model_dir(entry), epoch) / WEIGHTS_FILE

    def load(self, entry: ModelEntry | str, epoch: int | None = None) -> ModelCheckpoint:
        if isinstance(entry, str):
            entry = self.get(entry)
        return load_checkpoint(self.checkpoint_path(entry, epoch))

    def epochs_on_disk(self, entry: ModelEntry) -> list[int]:
        found = []
        for p in self.model_dir(entry).iterdir():
            ep = parse_checkpoint_name(p.name)
            if ep is not None and (p / WEIGHTS_FILE).exists():
                found.append(ep)
        return sorted(found)

    def validate(self):
        ids = [e.id for e in self.entries]
        if len(set(ids)) != len(ids):
            raise MalformedZoo("duplicate model ids", self.root_dir)
        pre_ids = {e.id for e in self.pretrained}
        for e in self.finetuned:
            if e.parent_id not in pre_ids:
                raise MalformedZoo(f"parent {e.parent_id!r} of {e.id!r} not found", self.model_dir(e))


def save_model_files(root: Path, entry: ModelEntry) -> None:
    d = Path(root) / entry.path
    d.mkdir(parents=True, exist_ok=True)
    (d / "config.json").write_text(config_dump(entry.config_json()))
    (d / "result.json").write_text(config_dump(entry.result_json()))


def save_trajectory_checkpoints(model_dir: Path, checkpoints) -> None:
    for ckpt in checkpoints:
        save_checkpoint(ckpt, checkpoint_dir(model_dir, ckpt.epoch) / WEIGHTS_FILE)


def write_layout(manifest: ZooManifest) -> None:
    """Write config.json/result.json for every entry; weights are written
    by the trainer and left untouched here."""
    manifest.validate()
    for e in manifest.entries:
        save_model_files(manifest.root_dir, e)


def _read_json(path: Path):
    try:
        return json.loads(path.read_text())
    except FileNotFoundError:
        raise MalformedZoo("missing file", path) from None
    except json.JSONDecodeError as exc:
        raise MalformedZoo(f"invalid JSON ({exc})", path) from None


def _read_entry(model_dir: Path, rel: str) -> ModelEntry:
    cfg = _read_json(model_dir / "config.json")
    res = _read_json(model_dir / "result.json")
    for p in model_dir.iterdir():
        if p.name not in MODEL_FILES and parse_checkpoint_name(p.name) is None:
            log.warning("ignoring unknown file %s", p)
    try:
        factors = GeneratingFactors.from_config(cfg)
        entry = ModelEntry(
            id=cfg["x_id"],
            path=rel,
            factors=factors,
            index=cfg["x_index"],
            parent_id=cfg["x_parent_id"],
            status=res["status"],
            results=res["epochs"],
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise MalformedZoo(f"bad model metadata ({exc!r})", model_dir) from None
    if entry.status not in STATUSES:
        raise MalformedZoo(f"unknown status {entry.status!r}", model_dir)
    epochs = [r["epoch"] for r in entry.results]
    if any(b <= a for a, b in zip(epochs, epochs[1:])) or (epochs and epochs[0] != 1):
        raise MalformedZoo("result epochs must increase strictly from 1", model_dir)
    return entry


def _subdirs(path: Path) -> list[Path]:
    out = []
    for p in sorted(path.iterdir()):
        if p.is_dir():
            out.append(p)
        else:
            log.warning("ignoring unknown file %s", p)
    return out


def scan_layout(root_dir) -> ZooManifest:
    root = Path(root_dir)
    if not (root / "pretraining").is_dir():
        raise MalformedZoo("no pretraining folder", root)
    for p in root.iterdir():
        if p.name not in ROOT_FILES | {"pretraining", "finetuning"} and not p.name.startswith("average_"):
            log.warning("ignoring unknown file %s", p)
    pretrained = [_read_entry(d, f"pretraining/{d.name}") for d in _subdirs(root / "pretraining")]
    known = {e.id for e in pretrained}
    finetuned = []
    if (root / "finetuning").is_dir():
        for group in _subdirs(root / "finetuning"):
            if group.name not in known:
                raise MalformedZoo("fine-tuned models reference a missing pretrained model", group)
            for d in _subdirs(group):
                entry = _read_entry(d, f"finetuning/{group.name}/{d.name}")
                if entry.parent_id != group.name:
                    raise MalformedZoo(f"parent id {entry.parent_id!r} disagrees with folder", d)
                finetuned.append(entry)
    pretrained.sort(key=lambda e: e.index)
    finetuned.sort(key=lambda e: e.index)
    manifest = ZooManifest(root, pretrained, finetuned)
    manifest.validate()
    return manifest
