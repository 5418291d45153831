"""Plain-numpy MLPs with hand-written backpropagation.

A network is an ordered stack of dense layers stored in a checkpoint as
``<prefix>.<i>.weight`` (``[out, in]``) and ``<prefix>.<i>.bias``. Every
layer except the very last one is followed by a ReLU. Backbone layers use
the ``backbone`` prefix, the task head uses ``head``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .tensor import HEAD_PREFIX, ModelCheckpoint, NamedTensor, rng_for

HEAD_KINDS = ("linear", "mlp", "projection")


@dataclass(frozen=True)
class HeadSpec:
    kind: str = "linear"
    out_dim: int = 10
    hidden: int = 16

    def __post_init__(self):
        if self.kind not in HEAD_KINDS:
            raise ValueError(f"unknown head kind {self.kind!r}")
        if self.out_dim < 1 or self.hidden < 1:
            raise ValueError("head dims must be >= 1")

    @property
    def dims(self) -> list[int]:
        return [self.hidden, self.out_dim] if self.kind == "mlp" else [self.out_dim]

    @property
    def arch_id(self) -> str:
        if self.kind == "mlp":
            return f"mlp{self.hidden}-{self.out_dim}"
        return f"{self.kind}{self.out_dim}"


@dataclass(frozen=True)
class ArchSpec:
    input_dim: int = 32
    hidden_dims: tuple[int, ...] = (64, 32)
    activation: str = "relu"
    head: HeadSpec = field(default_factory=HeadSpec)

    def __post_init__(self):
        object.__setattr__(self, "hidden_dims", tuple(self.hidden_dims))
        if self.input_dim < 1 or not self.hidden_dims or min(self.hidden_dims) < 1:
            raise ValueError("all dims must be >= 1 and at least one hidden layer is required")
        if self.activation != "relu":
            raise ValueError("only relu activations are supported")

    @property
    def feature_dim(self) -> int:
        return self.hidden_dims[-1]

    @property
    def backbone_id(self) -> str:
        return "mlp" + "-".join(str(d) for d in (self.input_dim, *self.hidden_dims))

    @property
    def arch_id(self) -> str:
        return f"{self.backbone_id}+{self.head.arch_id}"

    def with_head(self, head: HeadSpec) -> "ArchSpec":
        return ArchSpec(self.input_dim, self.hidden_dims, self.activation, head)

    def n_params(self) -> int:
        dims = [self.input_dim, *self.hidden_dims]
        total = sum((a + 1) * b for a, b in zip(dims, dims[1:]))
        hdims = [self.feature_dim, *self.head.dims]
        return total + sum((a + 1) * b for a, b in zip(hdims, hdims[1:]))


def _kaiming_layers(rng, prefix, dims):
    out = []
    for i, (fan_in, fan_out) in enumerate(zip(dims, dims[1:])):
        bound = np.sqrt(6.0 / fan_in)
        w = rng.uniform(-bound, bound, size=(fan_out, fan_in)).astype(np.float32)
        out.append(NamedTensor(f"{prefix}.{i}.weight", w))
        out.append(NamedTensor(f"{prefix}.{i}.bias", np.zeros(fan_out, np.float32)))
    return out


def init_head(head: HeadSpec, feature_dim: int, seed: int) -> list[NamedTensor]:
    rng = rng_for(seed, "init-head", head.arch_id, str(feature_dim))
    return _kaiming_layers(rng, "head", [feature_dim, *head.dims])


def init_model(arch: ArchSpec, seed: int, stage: str = "pretraining") -> ModelCheckpoint:
    """Kaiming-uniform weights and zero biases, fixed by ``(arch, seed)``."""
    rng = rng_for(seed, "init", arch.arch_id)
    tensors = _kaiming_layers(rng, "backbone", [arch.input_dim, *arch.hidden_dims])
    tensors += init_head(arch.head, arch.feature_dim, seed)
    return ModelCheckpoint(tuple(tensors), epoch=0, stage=stage, arch_id=arch.arch_id)


def replace_head(ckpt: ModelCheckpoint, arch: ArchSpec, head_seed: int) -> ModelCheckpoint:
    """Keep the backbone of ``ckpt`` and attach a freshly initialised head."""
    backbone = [t for t in ckpt.tensors if not t.name.startswith(HEAD_PREFIX)]
    head = init_head(arch.head, arch.feature_dim, head_seed)
    return ModelCheckpoint(
        tuple(backbone + head), epoch=0, stage="finetuning", arch_id=arch.arch_id
    )


def layer_names(names) -> list[tuple[str, str]]:
    """Group ordered tensor names into (weight, bias) pairs."""
    layers = []
    for n in names:
        if n.endswith(".weight"):
            base = n[: -len(".weight")]
            layers.append((n, base + ".bias"))
    return layers


def params_of(ckpt: ModelCheckpoint) -> dict[str, np.ndarray]:
    return {t.name: t.data.astype(np.float64) for t in ckpt.tensors}


def snapshot(params: dict[str, np.ndarray], like: ModelCheckpoint, epoch: int) -> ModelCheckpoint:
    return ModelCheckpoint(
        tuple(NamedTensor(t.name, params[t.name]) for t in like.tensors),
        epoch=epoch,
        stage=like.stage,
        arch_id=like.arch_id,
    )


def forward(params, layers, x, stop_after=None):
    """Run the stack; returns the output and a cache for :func:`backward`.

    ``stop_after`` truncates the stack after that many layers and keeps the
    ReLU on the last computed layer (used to read backbone features).
    """
    n = len(layers) if stop_after is None else stop_after
    acts = [x]
    h = x
    for i in range(n):
        wname, bname = layers[i]
        z = h @ params[wname].T + params[bname]
        last = i == len(layers) - 1
        h = z if last else np.maximum(z, 0.0)
        acts.append(h)
    return h, acts


def backward(params, layers, acts, grad_out, need_input_grad=False):
    grads = {}
    g = grad_out
    for i in range(len(acts) - 2, -1, -1):
        wname, bname = layers[i]
        if i != len(layers) - 1:
            g = g * (acts[i + 1] > 0)
        grads[wname] = g.T @ acts[i]
        grads[bname] = g.sum(axis=0)
        if i > 0 or need_input_grad:
            g = g @ params[wname]
    return grads, (g if need_input_grad else None)


def logits(ckpt: ModelCheckpoint, x: np.ndarray) -> np.ndarray:
    params = params_of(ckpt)
    out, _ = forward(params, layer_names(ckpt.names), np.asarray(x, np.float64))
    return out
