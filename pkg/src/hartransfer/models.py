"""Declarative model graphs and their torch instantiation.

Every architecture is described as a ModelGraphSpec (an ordered list of
layer records) that is validated by shape propagation at construction
time and can be serialized/fingerprinted. The training code only
consumes specs, so encoders are interchangeable.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
from torch import nn

from .errors import ConfigurationError, ShapeError

LAYER_KINDS = (
    "conv1d",
    "dense",
    "recurrent-gru",
    "activation-relu",
    "dropout",
    "batch-norm",
    "global-max-pool",
)


@dataclass
class LayerSpec:
    kind: str
    units: int | None = None  # filters for conv1d, width for dense/gru
    kernel: int | None = None
    rate: float | None = None  # dropout probability
    layers: int | None = None  # stacked recurrent layers

    def to_dict(self) -> dict:
        return {k: v for k, v in self.__dict__.items() if v is not None}


@dataclass
class ModelGraphSpec:
    layers: list[LayerSpec]
    input_shape: tuple[int, ...]  # (T, C) for sequence input, (D,) for vectors
    output_dim: int
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        out = propagate_shapes(self.layers, self.input_shape)
        if out != (self.output_dim,):
            raise ShapeError(f"graph produces shape {out}, declared output_dim {self.output_dim}")

    def to_dict(self) -> dict:
        return {
            "layers": [l.to_dict() for l in self.layers],
            "input_shape": list(self.input_shape),
            "output_dim": self.output_dim,
            "meta": dict(self.meta),
        }

    @classmethod
    def from_dict(cls, blob: dict) -> "ModelGraphSpec":
        return cls(
            layers=[LayerSpec(**l) for l in blob["layers"]],
            input_shape=tuple(blob["input_shape"]),
            output_dim=blob["output_dim"],
            meta=dict(blob.get("meta", {})),
        )

    def fingerprint(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()


def propagate_shapes(layers: list[LayerSpec], input_shape: tuple[int, ...]) -> tuple[int, ...]:
    """Walk the layer list, checking each shape transition. Raises ShapeError."""
    shape = tuple(input_shape)
    for layer in layers:
        if layer.kind == "conv1d":
            if len(shape) != 2:
                raise ShapeError(f"conv1d needs (T, C) input, got {shape}")
            t, _ = shape
            out_t = t - layer.kernel + 1  # valid padding
            if out_t <= 0:
                raise ShapeError(f"kernel {layer.kernel} too large for length {t}")
            shape = (out_t, layer.units)
        elif layer.kind == "dense":
            if len(shape) != 1:
                raise ShapeError(f"dense needs flat input, got {shape}")
            shape = (layer.units,)
        elif layer.kind == "recurrent-gru":
            if len(shape) != 2:
                raise ShapeError(f"recurrent-gru needs (T, C) input, got {shape}")
            shape = (shape[0], layer.units)
        elif layer.kind == "global-max-pool":
            if len(shape) != 2:
                raise ShapeError(f"global-max-pool needs (T, C) input, got {shape}")
            shape = (shape[1],)
        elif layer.kind in ("activation-relu", "dropout", "batch-norm"):
            pass
        else:
            raise ConfigurationError(f"unknown layer kind {layer.kind!r}")
    if len(shape) == 2:
        raise ShapeError(f"graph output is still a sequence of shape {shape}")
    return shape


# ---------------------------------------------------------------------------
# Architecture definitions
# ---------------------------------------------------------------------------

ENCODER_EMBED_DIM = 128


def conv_encoder_spec(input_shape: tuple[int, int] = (50, 3)) -> ModelGraphSpec:
    """Three conv blocks (32/64/128 filters, kernels 24/16/8), each with
    ReLU and dropout p=0.1, then global max pooling to a 128-d embedding."""
    layers = []
    for filters, kernel in ((32, 24), (64, 16), (128, 8)):
        layers += [
            LayerSpec("conv1d", units=filters, kernel=kernel),
            LayerSpec("activation-relu"),
            LayerSpec("dropout", rate=0.1),
        ]
    layers.append(LayerSpec("global-max-pool"))
    return ModelGraphSpec(layers=layers, input_shape=input_shape, output_dim=ENCODER_EMBED_DIM,
                          meta={"role": "encoder", "arch": "conv"})


def mlp_head_spec(in_dim: int, n_classes: int) -> ModelGraphSpec:
    """Three dense layers with ReLU, batch-norm and dropout p=0.2 between them.

    Hidden widths 256 and 128; the final layer emits raw logits."""
    layers = [
        LayerSpec("dense", units=256),
        LayerSpec("activation-relu"),
        LayerSpec("batch-norm"),
        LayerSpec("dropout", rate=0.2),
        LayerSpec("dense", units=128),
        LayerSpec("activation-relu"),
        LayerSpec("batch-norm"),
        LayerSpec("dropout", rate=0.2),
        LayerSpec("dense", units=n_classes),
    ]
    return ModelGraphSpec(layers=layers, input_shape=(in_dim,), output_dim=n_classes,
                          meta={"role": "classifier"})


def projection_head_spec(in_dim: int = ENCODER_EMBED_DIM) -> ModelGraphSpec:
    """Contrastive projection head: 256 -> 128 -> 50 with ReLU between layers."""
    layers = [
        LayerSpec("dense", units=256),
        LayerSpec("activation-relu"),
        LayerSpec("dense", units=128),
        LayerSpec("activation-relu"),
        LayerSpec("dense", units=50),
    ]
    return ModelGraphSpec(layers=layers, input_shape=(in_dim,), output_dim=50,
                          meta={"role": "projection"})


def deepconvlstm_spec(input_shape: tuple[int, int] = (50, 3)) -> ModelGraphSpec:
    """Conv-recurrent encoder: 4 conv layers (64 filters, kernel 5) followed
    by 2 recurrent layers of 128 units; exposes the same (T, C) -> 128
    embedding contract as conv_encoder_spec."""
    layers = []
    for _ in range(4):
        layers += [LayerSpec("conv1d", units=64, kernel=5), LayerSpec("activation-relu")]
    layers.append(LayerSpec("recurrent-gru", units=ENCODER_EMBED_DIM, layers=2))
    layers.append(LayerSpec("global-max-pool"))
    return ModelGraphSpec(layers=layers, input_shape=input_shape, output_dim=ENCODER_EMBED_DIM,
                          meta={"role": "encoder", "arch": "deepconvlstm"})


def cpc_stack_spec(input_shape: tuple[int, int] = (50, 3), n_prediction_steps: int = 28) -> ModelGraphSpec:
    """Future-prediction contrastive stack: conv blocks (kernel 3, dropout
    p=0.2), a 2-layer GRU autoregressor, and one linear prediction head per
    future step (see meta['prediction_steps'])."""
    if n_prediction_steps < 1:
        raise ConfigurationError("need at least one prediction step")
    layers = []
    for filters in (32, 64, 128):
        layers += [
            LayerSpec("conv1d", units=filters, kernel=3),
            LayerSpec("activation-relu"),
            LayerSpec("dropout", rate=0.2),
        ]
    layers.append(LayerSpec("recurrent-gru", units=256, layers=2))
    layers.append(LayerSpec("global-max-pool"))
    return ModelGraphSpec(
        layers=layers,
        input_shape=input_shape,
        output_dim=256,
        meta={"role": "cpc", "prediction_steps": n_prediction_steps, "z_dim": 128},
    )


def encoder_spec(arch: str, input_shape: tuple[int, int] = (50, 3)) -> ModelGraphSpec:
    if arch == "conv":
        return conv_encoder_spec(input_shape)
    if arch == "deepconvlstm":
        return deepconvlstm_spec(input_shape)
    raise ConfigurationError(f"unknown encoder architecture {arch!r}")


# ---------------------------------------------------------------------------
# Torch instantiation
# ---------------------------------------------------------------------------


class GraphModule(nn.Module):
    """Sequential interpreter for a ModelGraphSpec.

    Sequence inputs are (B, T, C); vector inputs are (B, D). The module
    stores the spec fingerprint so checkpoints can be matched to graphs.
    """

    def __init__(self, spec: ModelGraphSpec):
        super().__init__()
        self.spec = spec
        self.fingerprint = spec.fingerprint()
        mods = []
        shape = tuple(spec.input_shape)
        for layer in spec.layers:
            if layer.kind == "conv1d":
                mods.append(_Conv1dTC(shape[1], layer.units, layer.kernel))
                shape = (shape[0] - layer.kernel + 1, layer.units)
            elif layer.kind == "dense":
                mods.append(nn.Linear(shape[0], layer.units))
                shape = (layer.units,)
            elif layer.kind == "recurrent-gru":
                mods.append(_GRUSeq(shape[1], layer.units, layer.layers or 1))
                shape = (shape[0], layer.units)
            elif layer.kind == "activation-relu":
                mods.append(nn.ReLU())
            elif layer.kind == "dropout":
                mods.append(nn.Dropout(layer.rate))
            elif layer.kind == "batch-norm":
                mods.append(nn.BatchNorm1d(shape[0]) if len(shape) == 1 else nn.BatchNorm1d(shape[1]))
            elif layer.kind == "global-max-pool":
                mods.append(_GlobalMaxPool())
                shape = (shape[1],)
        self.body = nn.Sequential(*mods)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.body(x)


class _Conv1dTC(nn.Module):
    """Conv1d over (B, T, C) input, keeping the time-major layout."""

    def __init__(self, in_channels: int, out_channels: int, kernel: int):
        super().__init__()
        self.conv = nn.Conv1d(in_channels, out_channels, kernel)

    def forward(self, x):
        return self.conv(x.transpose(1, 2)).transpose(1, 2)


class _GRUSeq(nn.Module):
    def __init__(self, in_dim: int, hidden: int, num_layers: int):
        super().__init__()
        self.gru = nn.GRU(in_dim, hidden, num_layers=num_layers, batch_first=True)

    def forward(self, x):
        out, _ = self.gru(x)
        return out


class _GlobalMaxPool(nn.Module):
    def forward(self, x):
        return x.max(dim=1).values


class CPCModule(nn.Module):
    """Encoder + autoregressor + per-step linear prediction heads."""

    def __init__(self, spec: ModelGraphSpec):
        super().__init__()
        if spec.meta.get("role") != "cpc":
            raise ConfigurationError("spec is not a CPC stack")
        self.spec = spec
        self.fingerprint = spec.fingerprint()
        z_dim = spec.meta["z_dim"]
        conv_layers = [l for l in spec.layers if l.kind != "recurrent-gru" and l.kind != "global-max-pool"]
        mods = []
        shape = tuple(spec.input_shape)
        for layer in conv_layers:
            if layer.kind == "conv1d":
                mods.append(_Conv1dTC(shape[1], layer.units, layer.kernel))
                shape = (shape[0] - layer.kernel + 1, layer.units)
            elif layer.kind == "activation-relu":
                mods.append(nn.ReLU())
            elif layer.kind == "dropout":
                mods.append(nn.Dropout(layer.rate))
        assert shape[1] == z_dim
        self.encoder = nn.Sequential(*mods)
        gru_spec = next(l for l in spec.layers if l.kind == "recurrent-gru")
        self.autoregressor = _GRUSeq(z_dim, gru_spec.units, gru_spec.layers or 1)
        self.prediction_heads = nn.ModuleList(
            [nn.Linear(gru_spec.units, z_dim) for _ in range(spec.meta["prediction_steps"])]
        )

    def forward(self, x: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        z = self.encoder(x)  # (B, T', z_dim)
        c = self.autoregressor(z)  # (B, T', context)
        return z, c

    def embed(self, x: torch.Tensor) -> torch.Tensor:
        """Fixed-length embedding for downstream classification."""
        _, c = self.forward(x)
        return c[:, -1]


def build_module(spec: ModelGraphSpec) -> nn.Module:
    if spec.meta.get("role") == "cpc":
        return CPCModule(spec)
    return GraphModule(spec)


def parameter_count(spec: ModelGraphSpec) -> int:
    return sum(p.numel() for p in build_module(spec).parameters())


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------


@dataclass
class Checkpoint:
    """Named-tensor container with the graph fingerprint it belongs to."""

    weights: dict[str, np.ndarray]
    graph_fingerprint: str
    stage: str
    seed: int
    config_hash: str = ""
    extra: dict = field(default_factory=dict)

    @classmethod
    def from_module(cls, module: nn.Module, stage: str, seed: int, config_hash: str = "",
                    extra: dict | None = None) -> "Checkpoint":
        weights = {k: v.detach().cpu().numpy().copy() for k, v in module.state_dict().items()}
        return cls(weights=weights, graph_fingerprint=module.fingerprint, stage=stage,
                   seed=seed, config_hash=config_hash, extra=dict(extra or {}))

    def load_into(self, module: nn.Module) -> None:
        if module.fingerprint != self.graph_fingerprint:
            raise ConfigurationError(
                f"checkpoint fingerprint {self.graph_fingerprint[:12]} does not match "
                f"module graph {module.fingerprint[:12]}"
            )
        state = {k: torch.as_tensor(v) for k, v in self.weights.items()}
        module.load_state_dict(state)

    def save(self, path: Path) -> None:
        torch.save(
            {
                "weights": self.weights,
                "graph_fingerprint": self.graph_fingerprint,
                "stage": self.stage,
                "seed": self.seed,
                "config_hash": self.config_hash,
                "extra": self.extra,
            },
            path,
        )

    @classmethod
    def load(cls, path: Path) -> "Checkpoint":
        blob = torch.load(path, weights_only=False)
        return cls(**blob)


def weight_hash(module: nn.Module, prefix: str = "") -> str:
    """Digest of all parameters (optionally restricted to a name prefix)."""
    h = hashlib.sha256()
    for name, tensor in sorted(module.state_dict().items()):
        if name.startswith(prefix):
            h.update(name.encode())
            h.update(tensor.detach().cpu().numpy().tobytes())
    return h.hexdigest()
