"""Generating factors, the zoo configuration file and grid expansion.

Per-model ``config.json`` files use the row names of the published zoo's
generating-factor table (``Task``, ``Learning Rates``, ``Weight Decay``,
``Optimiser``, ``Epochs``, ``Architecture``, ``Dataset``); fields that only
exist in this toy setting carry an ``x_`` prefix.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import asdict, dataclass
from importlib import resources
from pathlib import Path

from .data import DatasetSpec
from .errors import InvalidGrid
from .nn import ArchSpec, HeadSpec
from .train import StageHParams

#: fine-tuning factors that are varied on the grid, in expansion order
GRID_FACTORS = ("head", "head_seed", "lr", "optimizer")


@dataclass(frozen=True)
class PretrainFactors:
    arch: ArchSpec
    dataset: DatasetSpec
    task: str
    lr: float
    weight_decay: float
    optimizer: str
    epochs: int
    batch_size: int
    seed: int
    temperature: float = 0.5
    noise_sigma: float = 0.1
    dropout_p: float = 0.1

    @property
    def model_id(self) -> str:
        return f"{self.task}_seed{self.seed}"

    def hparams(self) -> StageHParams:
        return StageHParams(
            task=self.task,
            lr=self.lr,
            weight_decay=self.weight_decay,
            optimizer=self.optimizer,
            epochs=self.epochs,
            batch_size=self.batch_size,
            temperature=self.temperature,
            noise_sigma=self.noise_sigma,
            dropout_p=self.dropout_p,
        )

    def to_config(self) -> dict:
        return {
            "Architecture": _arch_to_dict(self.arch),
            "Dataset": asdict(self.dataset),
            "Task": self.task,
            "Learning Rates": self.lr,
            "Weight Decay": self.weight_decay,
            "Optimiser": self.optimizer,
            "Epochs": self.epochs,
            "x_batch_size": self.batch_size,
            "x_seed": self.seed,
            "x_temperature": self.temperature,
            "x_noise_sigma": self.noise_sigma,
            "x_dropout_p": self.dropout_p,
        }

    @classmethod
    def from_config(cls, d: dict) -> "PretrainFactors":
        return cls(
            arch=_arch_from_dict(d["Architecture"]),
            dataset=DatasetSpec(**d["Dataset"]),
            task=d["Task"],
            lr=d["Learning Rates"],
            weight_decay=d["Weight Decay"],
            optimizer=d["Optimiser"],
            epochs=d["Epochs"],
            batch_size=d["x_batch_size"],
            seed=d["x_seed"],
            temperature=d["x_temperature"],
            noise_sigma=d["x_noise_sigma"],
            dropout_p=d["x_dropout_p"],
        )


@dataclass(frozen=True)
class FinetuneFactors:
    head: HeadSpec
    dataset: DatasetSpec
    lr: float
    optimizer: str
    epochs: int
    batch_size: int
    head_seed: int
    weight_decay: float = 0.0
    momentum: float = 0.99

    @property
    def name(self) -> str:
        return f"{self.head.kind}_hs{self.head_seed}_lr{self.lr:g}_{self.optimizer}"

    def factor(self, key: str):
        if key == "head":
            return self.head.kind
        return getattr(self, key)

    def hparams(self) -> StageHParams:
        return StageHParams(
            task="supervised",
            lr=self.lr,
            weight_decay=self.weight_decay,
            optimizer=self.optimizer,
            epochs=self.epochs,
            batch_size=self.batch_size,
            momentum=self.momentum,
        )

    def to_config(self) -> dict:
        return {
            "Architecture": {
                "Classification Head": self.head.kind,
                "x_out_dim": self.head.out_dim,
                "x_hidden": self.head.hidden,
            },
            "Dataset": asdict(self.dataset),
            "Task": "supervised",
            "Learning Rates": self.lr,
            "Weight Decay": self.weight_decay,
            "Optimiser": self.optimizer,
            "Epochs": self.epochs,
            "x_batch_size": self.batch_size,
            "x_head_seed": self.head_seed,
            "x_momentum": self.momentum,
        }

    @classmethod
    def from_config(cls, d: dict) -> "FinetuneFactors":
        a = d["Architecture"]
        return cls(
            head=HeadSpec(a["Classification Head"], a["x_out_dim"], a["x_hidden"]),
            dataset=DatasetSpec(**d["Dataset"]),
            lr=d["Learning Rates"],
            optimizer=d["Optimiser"],
            epochs=d["Epochs"],
            batch_size=d["x_batch_size"],
            head_seed=d["x_head_seed"],
            weight_decay=d["Weight Decay"],
            momentum=d["x_momentum"],
        )


@dataclass(frozen=True)
class GeneratingFactors:
    """Recipe of one model: pretraining factors, plus fine-tuning ones if any."""

    pre: PretrainFactors
    fine: FinetuneFactors | None = None

    @property
    def stage(self) -> str:
        return "pretraining" if self.fine is None else "finetuning"

    @property
    def pre_id(self) -> str:
        return self.pre.model_id

    @property
    def model_id(self) -> str:
        if self.fine is None:
            return self.pre.model_id
        return f"{self.pre.model_id}__{self.fine.name}"

    @property
    def rel_path(self) -> str:
        if self.fine is None:
            return f"pretraining/{self.pre.model_id}"
        return f"finetuning/{self.pre.model_id}/{self.fine.name}"

    @property
    def arch(self) -> ArchSpec:
        if self.fine is None:
            return self.pre.arch
        return self.pre.arch.with_head(self.fine.head)

    @property
    def dataset(self) -> DatasetSpec:
        return self.pre.dataset if self.fine is None else self.fine.dataset

    def to_config(self) -> dict:
        out = {"pretraining": self.pre.to_config()}
        if self.fine is not None:
            out["finetuning"] = self.fine.to_config()
        return out

    @classmethod
    def from_config(cls, d: dict) -> "GeneratingFactors":
        pre = PretrainFactors.from_config(d["pretraining"])
        fine = FinetuneFactors.from_config(d["finetuning"]) if "finetuning" in d else None
        return cls(pre, fine)


def _arch_to_dict(arch: ArchSpec) -> dict:
    return {
        "input_dim": arch.input_dim,
        "hidden_dims": list(arch.hidden_dims),
        "activation": arch.activation,
        "head": asdict(arch.head),
    }


def _arch_from_dict(d: dict) -> ArchSpec:
    return ArchSpec(d["input_dim"], tuple(d["hidden_dims"]), d["activation"], HeadSpec(**d["head"]))


# -- zoo configuration ---------------------------------------------------------


def load_zoo_config(path) -> dict:
    """Read a zoo config; ``"demo"`` selects the bundled demo config."""
    if str(path) == "demo":
        text = resources.files("zoolab").joinpath("configs/demo.json").read_text()
    else:
        text = Path(path).read_text()
    return json.loads(text)


def _as_list(value, what):
    values = value if isinstance(value, list) else [value]
    if not values:
        raise InvalidGrid(f"factor {what!r} has no values")
    return values


def pretrained_factors(zoo_config: dict) -> list[PretrainFactors]:
    """Pretrained models in task order, then seed order."""
    p = zoo_config["pretraining"]
    ds = DatasetSpec(**p["Dataset"])
    a = p["Architecture"]
    seeds = p["x_seeds"]
    out = []
    for task in _as_list(p["Task"], "Task"):
        if task == "supervised":
            head = HeadSpec("linear", ds.n_classes)
        elif task == "contrastive":
            head = HeadSpec("projection", p.get("x_projection_dim", 16))
        else:
            raise InvalidGrid(f"unknown pretraining task {task!r}")
        arch = ArchSpec(a["input_dim"], tuple(a["hidden_dims"]), a.get("activation", "relu"), head)
        for seed in _as_list(seeds.get(task, []), f"x_seeds.{task}"):
            out.append(
                PretrainFactors(
                    arch=arch,
                    dataset=ds,
                    task=task,
                    lr=p["Learning Rates"],
                    weight_decay=p["Weight Decay"],
                    optimizer=p["Optimiser"],
                    epochs=p["Epochs"],
                    batch_size=p.get("x_batch_size", 64),
                    seed=seed,
                    temperature=p.get("x_temperature", 0.5),
                    noise_sigma=p.get("x_noise_sigma", 0.1),
                    dropout_p=p.get("x_dropout_p", 0.1),
                )
            )
    ids = [f.model_id for f in out]
    if len(set(ids)) != len(ids):
        raise InvalidGrid(f"duplicate pretrained models: {ids}")
    return out


def expand_grid(zoo_config: dict) -> list[GeneratingFactors]:
    """All fine-tuning cells: pretrained index first, then the Cartesian
    product over ``GRID_FACTORS`` (sorted by name) in listed value order."""
    f = zoo_config["finetuning"]
    ds = DatasetSpec(**f["Dataset"])
    a = f["Architecture"]
    values = {
        "head": _as_list(a["Classification Head"], "Classification Head"),
        "head_seed": _as_list(f["x_head_seeds"], "x_head_seeds"),
        "lr": _as_list(f["Learning Rates"], "Learning Rates"),
        "optimizer": _as_list(f["Optimiser"], "Optimiser"),
    }
    pres = pretrained_factors(zoo_config)
    if not pres:
        raise InvalidGrid("no pretrained models configured")
    cells = []
    for pre in pres:
        for combo in itertools.product(*(values[k] for k in GRID_FACTORS)):
            c = dict(zip(GRID_FACTORS, combo))
            fine = FinetuneFactors(
                head=HeadSpec(c["head"], ds.n_classes, a.get("x_hidden", 16)),
                dataset=ds,
                lr=c["lr"],
                optimizer=c["optimizer"],
                epochs=f["Epochs"],
                batch_size=f.get("x_batch_size", 64),
                head_seed=c["head_seed"],
                weight_decay=f.get("Weight Decay", 0.0),
                momentum=f.get("x_momentum", 0.99),
            )
            cells.append(GeneratingFactors(pre, fine))
    return cells


def with_seed(zoo_config: dict, seed: int) -> dict:
    return {**zoo_config, "x_global_seed": seed}


def config_dump(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"

