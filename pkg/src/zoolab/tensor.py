"""Named weight tensors, checkpoints, flattening and the on-disk blob format.

A checkpoint file is laid out as::

    b"ZLCKPT01"                 8-byte magic
    <uint64 little-endian>      length of the JSON header in bytes
    <JSON header>               {"epoch", "stage", "arch_id", "tensors": [...]}
    <raw float32 LE blobs>      offsets in the header are relative to here

Each header tensor entry carries ``name``, ``shape``, ``offset`` and
``nbytes``.
"""

from __future__ import annotations

import hashlib
import json
import os
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import (
    CorruptHeader,
    DimensionMismatch,
    SelectorEmpty,
    ShapeSizeMismatch,
    TruncatedBlob,
)

HEAD_PREFIX = "head."
STAGES = ("pretraining", "finetuning")
SELECTORS = ("all", "backbone_only", "head_only")

_MAGIC = b"ZLCKPT01"
_LEN = struct.Struct("<Q")
_LE_F32 = np.dtype("<f4")


def rng_for(seed: int, *names: str) -> np.random.Generator:
    """Counter-based generator keyed by an integer seed and a name path.

    The stream depends only on its key, never on how many other streams
    were drawn before it, so results do not depend on job scheduling.
    """
    digest = hashlib.sha256("/".join(names).encode()).digest()
    words = [int.from_bytes(digest[i : i + 4], "little") for i in range(0, 32, 4)]
    ss = np.random.SeedSequence([int(seed) & 0xFFFFFFFF, int(seed) >> 32 & 0xFFFFFFFF, *words])
    return np.random.Generator(np.random.Philox(ss))


@dataclass(frozen=True, eq=False)
class NamedTensor:
    name: str
    data: np.ndarray

    def __post_init__(self):
        arr = np.ascontiguousarray(self.data, dtype=np.float32)
        if arr.ndim == 0 or min(arr.shape) < 1:
            raise ShapeSizeMismatch(f"tensor {self.name!r} has invalid shape {arr.shape}")
        if arr is self.data or np.shares_memory(arr, self.data):
            arr = arr.copy()
        arr.flags.writeable = False
        object.__setattr__(self, "data", arr)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def __eq__(self, other):
        if not isinstance(other, NamedTensor):
            return NotImplemented
        return (
            self.name == other.name
            and self.shape == other.shape
            and self.data.tobytes() == other.data.tobytes()
        )

    def __hash__(self):
        return hash((self.name, self.shape, self.data.tobytes()))


@dataclass(frozen=True, eq=False)
class ModelCheckpoint:
    tensors: tuple[NamedTensor, ...]
    epoch: int = 0
    stage: str = "pretraining"
    arch_id: str = ""

    def __post_init__(self):
        tensors = tuple(self.tensors)
        names = [t.name for t in tensors]
        if len(set(names)) != len(names):
            raise ValueError(f"duplicate tensor names in checkpoint: {names}")
        if self.stage not in STAGES:
            raise ValueError(f"unknown stage {self.stage!r}")
        if self.epoch < 0:
            raise ValueError("epoch must be non-negative")
        object.__setattr__(self, "tensors", tensors)

    @classmethod
    def from_arrays(cls, arrays: Iterable[tuple[str, np.ndarray]], **meta) -> "ModelCheckpoint":
        return cls(tuple(NamedTensor(n, a) for n, a in arrays), **meta)

    def __getitem__(self, name: str) -> np.ndarray:
        for t in self.tensors:
            if t.name == name:
                return t.data
        raise KeyError(name)

    @property
    def names(self) -> list[str]:
        return [t.name for t in self.tensors]

    def arrays(self) -> dict[str, np.ndarray]:
        return {t.name: t.data for t in self.tensors}

    def replace(self, **changes) -> "ModelCheckpoint":
        fields = dict(tensors=self.tensors, epoch=self.epoch, stage=self.stage, arch_id=self.arch_id)
        fields.update(changes)
        return ModelCheckpoint(**fields)

    def __eq__(self, other):
        if not isinstance(other, ModelCheckpoint):
            return NotImplemented
        return (
            self.epoch == other.epoch
            and self.stage == other.stage
            and self.arch_id == other.arch_id
            and self.tensors == other.tensors
        )

    def __hash__(self):
        return hash((self.epoch, self.stage, self.arch_id, self.tensors))


@dataclass(frozen=True, eq=False)
class WeightVector:
    values: np.ndarray
    selector_id: str

    def __len__(self):
        return self.values.size


def _selected(ckpt: ModelCheckpoint, selector: str) -> list[NamedTensor]:
    if selector == "all":
        return list(ckpt.tensors)
    if selector == "backbone_only":
        return [t for t in ckpt.tensors if not t.name.startswith(HEAD_PREFIX)]
    if selector == "head_only":
        return [t for t in ckpt.tensors if t.name.startswith(HEAD_PREFIX)]
    raise ValueError(f"unknown selector {selector!r}; expected one of {SELECTORS}")


def flatten_weights(ckpt: ModelCheckpoint, selector: str = "all") -> WeightVector:
    """Concatenate the selected tensors, in checkpoint order, row-major."""
    chosen = _selected(ckpt, selector)
    if not chosen:
        raise SelectorEmpty(f"selector {selector!r} matched no tensors")
    values = np.concatenate([t.data.ravel() for t in chosen])
    values.flags.writeable = False
    return WeightVector(values, selector)


def l2_distance(a: WeightVector, b: WeightVector) -> float:
    if a.selector_id != b.selector_id:
        raise DimensionMismatch(f"selectors differ: {a.selector_id} vs {b.selector_id}")
    if len(a) != len(b):
        raise DimensionMismatch(f"vector lengths differ: {len(a)} vs {len(b)}")
    diff = a.values.astype(np.float64) - b.values.astype(np.float64)
    return float(np.sqrt(np.dot(diff, diff)))


def checkpoint_dir(model_dir: str | os.PathLike, epoch: int) -> Path:
    return Path(model_dir) / f"checkpoint_{epoch:06d}"


def save_checkpoint(ckpt: ModelCheckpoint, path: str | os.PathLike) -> None:
    """Write ``ckpt`` to ``path`` (the ``weights.bin`` file itself)."""
    entries = []
    offset = 0
    for t in ckpt.tensors:
        nbytes = t.data.size * 4
        entries.append({"name": t.name, "shape": list(t.shape), "offset": offset, "nbytes": nbytes})
        offset += nbytes
    header = json.dumps(
        {"epoch": ckpt.epoch, "stage": ckpt.stage, "arch_id": ckpt.arch_id, "tensors": entries},
        sort_keys=True,
    ).encode()
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(_LEN.pack(len(header)))
        fh.write(header)
        for t in ckpt.tensors:
            fh.write(t.data.astype(_LE_F32, copy=False).tobytes())
    os.replace(tmp, path)


def load_checkpoint(path: str | os.PathLike) -> ModelCheckpoint:
    raw = Path(path).read_bytes()
    if len(raw) < len(_MAGIC) + _LEN.size or raw[: len(_MAGIC)] != _MAGIC:
        raise CorruptHeader(f"{path}: bad magic")
    (hlen,) = _LEN.unpack_from(raw, len(_MAGIC))
    start = len(_MAGIC) + _LEN.size
    if start + hlen > len(raw):
        raise CorruptHeader(f"{path}: header length {hlen} exceeds file size")
    try:
        header = json.loads(raw[start : start + hlen].decode())
        epoch, stage, arch_id = header["epoch"], header["stage"], header["arch_id"]
        entries = header["tensors"]
    except (UnicodeDecodeError, json.JSONDecodeError, KeyError, TypeError) as exc:
        raise CorruptHeader(f"{path}: unreadable header ({exc})") from exc
    blob = memoryview(raw)[start + hlen :]
    tensors = []
    for e in entries:
        try:
            name, shape, offset, nbytes = e["name"], tuple(e["shape"]), e["offset"], e["nbytes"]
        except (KeyError, TypeError) as exc:
            raise CorruptHeader(f"{path}: malformed tensor entry {e!r}") from exc
        if nbytes != 4 * int(np.prod(shape)):
            raise ShapeSizeMismatch(f"{path}: {name} declares shape {shape} but {nbytes} bytes")
        if offset + nbytes > len(blob):
            raise TruncatedBlob(
                f"{path}: {name} needs bytes [{offset}, {offset + nbytes}) but blob has {len(blob)}"
            )
        arr = np.frombuffer(blob[offset : offset + nbytes], dtype=_LE_F32).reshape(shape)
        tensors.append(NamedTensor(name, arr.astype(np.float32)))
    return ModelCheckpoint(tuple(tensors), epoch=epoch, stage=stage, arch_id=arch_id)


def stack_vectors(vectors: Sequence[WeightVector]) -> np.ndarray:
    """Stack equal-length weight vectors into a float64 matrix."""
    if not vectors:
        raise SelectorEmpty("no vectors to stack")
    n = len(vectors[0])
    sel = vectors[0].selector_id
    for v in vectors:
        if len(v) != n or v.selector_id != sel:
            raise DimensionMismatch("weight vectors must share length and selector")
    return np.stack([v.values for v in vectors]).astype(np.float64)
