"""Desk-scale DDAMFN: MobileFaceNet-style backbone, dual-direction attention,
global depthwise convolution and three task heads."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from . import tensor as T
from .errors import ShapeError
from .layers import ConvBNAct, DepthwiseBlock, GDConv, Linear, Module
from .tensor import Tensor

PARAM_GROUPS = ("backbone", "dda", "gdconv", "heads")


@dataclass
class ModelConfig:
    image_size: int = 112
    # stem width followed by one stride-2 depthwise block per further entry
    channels: tuple[int, ...] = (16, 32, 64)
    n_heads: int = 2
    n_va: int = 2
    n_expr: int = 8
    n_au: int = 12

    def __post_init__(self):
        self.channels = tuple(int(c) for c in self.channels)
        if len(self.channels) < 1 or self.n_heads < 1:
            raise ValueError("need at least a stem and one attention head")

    @property
    def feature_size(self) -> int:
        size = self.image_size
        for _ in self.channels:
            size = (size - 1) // 2 + 1  # 3x3 kernel, stride 2, padding 1
        return size

    def to_dict(self) -> dict:
        d = asdict(self)
        d["channels"] = list(self.channels)
        return d


@dataclass
class ModelOutput:
    va: Tensor
    expr_logits: Tensor
    au_logits: Tensor
    attention_maps: list[Tensor] = field(default_factory=list)


class Backbone(Module):
    def __init__(self, channels: tuple[int, ...]):
        super().__init__()
        self.stem = ConvBNAct(3, channels[0], 3, stride=2, padding=1)
        self.n_blocks = len(channels) - 1
        for i in range(self.n_blocks):
            setattr(self, f"block{i}", DepthwiseBlock(channels[i], channels[i + 1], stride=2))

    def forward(self, x: Tensor) -> Tensor:
        x = self.stem(x)
        for i in range(self.n_blocks):
            x = getattr(self, f"block{i}")(x)
        return x


class AttentionHead(Module):
    """One direction-pair of 1-D convolutions producing a sigmoid gate."""

    def __init__(self, channels: int):
        super().__init__()
        self.channels = channels
        self.h_weight = Tensor(np.zeros((channels, channels, 3, 1)), requires_grad=True)
        self.h_bias = Tensor(np.zeros(channels), requires_grad=True)
        self.w_weight = Tensor(np.zeros((channels, channels, 1, 3)), requires_grad=True)
        self.w_bias = Tensor(np.zeros(channels), requires_grad=True)

    def reset_parameters(self, rng):
        bound = np.sqrt(1.0 / (3 * self.channels))
        self.h_weight.data = rng.uniform(-bound, bound, self.h_weight.shape)
        self.w_weight.data = rng.uniform(-bound, bound, self.w_weight.shape)
        self.h_bias.data = np.zeros(self.channels)
        self.w_bias.data = np.zeros(self.channels)

    def forward(self, x: Tensor) -> Tensor:
        view = (1, self.channels, 1, 1)
        # profile along height: average out width, convolve down the columns
        col = T.conv2d(T.mean(x, 3, keepdims=True), self.h_weight, 1, (1, 0))
        col = T.add(col, T.reshape(self.h_bias, view))
        # profile along width: average out height, convolve across the rows
        row = T.conv2d(T.mean(x, 2, keepdims=True), self.w_weight, 1, (0, 1))
        row = T.add(row, T.reshape(self.w_bias, view))
        return T.sigmoid(T.add(col, row))


class DdaModule(Module):
    def __init__(self, channels: int, n_heads: int = 2):
        super().__init__()
        self.n_heads = n_heads
        for i in range(n_heads):
            setattr(self, f"head{i}", AttentionHead(channels))

    def forward(self, features: Tensor) -> tuple[Tensor, list[Tensor]]:
        if features.ndim != 4:
            raise ShapeError(f"attention expects [B,C,h,w], got {features.shape}")
        maps = [getattr(self, f"head{i}")(features) for i in range(self.n_heads)]
        combined = maps[0]
        for m in maps[1:]:
            combined = T.maximum(combined, m)
        return T.mul(features, combined), maps


def dda_forward(dda: DdaModule, features: Tensor) -> tuple[Tensor, list[Tensor]]:
    return dda(features)


class Heads(Module):
    def __init__(self, d: int, n_va: int, n_expr: int, n_au: int):
        super().__init__()
        self.va = Linear(d, n_va)
        self.expr = Linear(d, n_expr)
        self.au = Linear(d, n_au)


class DdamfnModel(Module):
    def __init__(self, config: ModelConfig | None = None, seed: int | None = 0):
        super().__init__()
        self.config = cfg = config or ModelConfig()
        c = cfg.channels[-1]
        fs = cfg.feature_size
        self.backbone = Backbone(cfg.channels)
        self.dda = DdaModule(c, cfg.n_heads)
        self.gdconv = GDConv(c, fs, fs)
        self.heads = Heads(c, cfg.n_va, cfg.n_expr, cfg.n_au)
        if seed is not None:
            self.init_params(seed)

    def forward(self, images: Tensor) -> ModelOutput:
        s = self.config.image_size
        if images.ndim != 4 or images.shape[1:] != (3, s, s):
            raise ShapeError(f"expected images [B,3,{s},{s}], got {images.shape}")
        feats = self.backbone(images)
        attended, maps = self.dda(feats)
        pooled = self.gdconv(attended)
        vec = T.reshape(pooled, (pooled.shape[0], pooled.shape[1]))
        return ModelOutput(
            va=T.tanh(self.heads.va(vec)),
            expr_logits=self.heads.expr(vec),
            au_logits=self.heads.au(vec),
            attention_maps=maps,
        )

    def param_groups(self) -> dict[str, list[tuple[str, Tensor]]]:
        return param_groups(self)


def group_of(name: str) -> str:
    head = name.split(".", 1)[0]
    if head not in PARAM_GROUPS:
        raise KeyError(f"{name} belongs to no parameter group")
    return head


def param_groups(model: DdamfnModel) -> dict[str, list[tuple[str, Tensor]]]:
    """Disjoint, exhaustive partition; ``heads`` is the classifier."""
    groups: dict[str, list[tuple[str, Tensor]]] = {g: [] for g in PARAM_GROUPS}
    for name, p in model.named_parameters():
        groups[group_of(name)].append((name, p))
    return groups
