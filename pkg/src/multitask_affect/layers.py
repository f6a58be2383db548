"""Parameterized layers built on the tensor core, plus the checkpoint format.

Checkpoint file layout (JSON, UTF-8)::

    {
      "format": "multitask-affect-checkpoint",
      "version": 1,
      "meta": {...},                        # free-form, e.g. model config
      "tensors": [
        {"name": "backbone.stem.conv.weight", "kind": "param" | "buffer",
         "group": "backbone", "shape": [16, 3, 3, 3],
         "data": "<base64 of little-endian float64, row-major>"},
        ...
      ]
    }

Decoding the base64 payload with dtype ``<f8`` restores every value
bit-for-bit.
"""

from __future__ import annotations

import base64
import json
import math
from pathlib import Path
from typing import Callable, Iterator

import numpy as np

from . import tensor as T
from .errors import DataError, ShapeError
from .tensor import Tensor

CHECKPOINT_FORMAT = "multitask-affect-checkpoint"


class Module:
    """Minimal container tracking parameters, buffers and sub-modules."""

    def __init__(self) -> None:
        object.__setattr__(self, "_params", {})
        object.__setattr__(self, "_buffers", {})
        object.__setattr__(self, "_children", {})
        object.__setattr__(self, "training", True)

    def __setattr__(self, name, value):
        if isinstance(value, Tensor):
            self._params[name] = value
        elif isinstance(value, Module):
            self._children[name] = value
        object.__setattr__(self, name, value)

    def register_buffer(self, name: str, value: np.ndarray) -> None:
        self._buffers[name] = np.asarray(value, dtype=np.float64)

    def buffer(self, name: str) -> np.ndarray:
        return self._buffers[name]

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for name, p in self._params.items():
            yield prefix + name, p
        for cname, child in self._children.items():
            yield from child.named_parameters(f"{prefix}{cname}.")

    def named_buffers(self, prefix: str = "") -> Iterator[tuple[str, np.ndarray]]:
        for name, b in self._buffers.items():
            yield prefix + name, b
        for cname, child in self._children.items():
            yield from child.named_buffers(f"{prefix}{cname}.")

    def modules(self) -> Iterator[Module]:
        yield self
        for child in self._children.values():
            yield from child.modules()

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def train(self) -> Module:
        for m in self.modules():
            object.__setattr__(m, "training", True)
        return self

    def eval(self) -> Module:
        for m in self.modules():
            object.__setattr__(m, "training", False)
        return self

    def freeze(self) -> Module:
        for p in self.parameters():
            p.frozen = True
        return self

    def unfreeze(self) -> Module:
        for p in self.parameters():
            p.frozen = False
        return self

    @property
    def frozen(self) -> bool:
        params = self.parameters()
        return bool(params) and all(p.frozen for p in params)

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def reset_parameters(self, rng: np.random.Generator) -> None:
        """Initialize this module's own tensors; children handle theirs."""

    def init_params(self, seed: int) -> Module:
        rng = np.random.default_rng(seed)
        for m in self.modules():
            m.reset_parameters(rng)
        return self

    def state_dict(self) -> dict[str, np.ndarray]:
        state = {name: p.data.copy() for name, p in self.named_parameters()}
        state.update({name: b.copy() for name, b in self.named_buffers()})
        return state

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        expected = self.state_dict()
        missing = set(expected) - set(state)
        extra = set(state) - set(expected)
        if missing or extra:
            raise DataError(f"state mismatch: missing {sorted(missing)}, unexpected {sorted(extra)}")
        for name, p in self.named_parameters():
            _check_shape(name, expected[name], state[name])
            p.data = np.array(state[name], dtype=np.float64)
        for m_prefix, m in _prefixed_modules(self):
            for bname in list(m._buffers):
                key = m_prefix + bname
                _check_shape(key, expected[key], state[key])
                m._buffers[bname] = np.array(state[key], dtype=np.float64)

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)

    def forward(self, *args, **kwargs):
        raise NotImplementedError


def _prefixed_modules(module: Module, prefix: str = "") -> Iterator[tuple[str, Module]]:
    yield prefix, module
    for name, child in module._children.items():
        yield from _prefixed_modules(child, f"{prefix}{name}.")


def _check_shape(name, want: np.ndarray, got) -> None:
    if tuple(np.shape(got)) != want.shape:
        raise ShapeError(f"{name}: expected shape {want.shape}, got {np.shape(got)}")


def _uniform_fan_in(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    bound = math.sqrt(1.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape)


class Linear(Module):
    """``y = x @ W + b`` with ``W`` stored as [d_in, d_out]."""

    def __init__(self, d_in: int, d_out: int):
        super().__init__()
        self.d_in, self.d_out = d_in, d_out
        self.weight = Tensor(np.zeros((d_in, d_out)), requires_grad=True)
        self.bias = Tensor(np.zeros(d_out), requires_grad=True)

    def reset_parameters(self, rng):
        self.weight.data = _uniform_fan_in(rng, (self.d_in, self.d_out), self.d_in)
        self.bias.data = np.zeros(self.d_out)

    def forward(self, x: Tensor) -> Tensor:
        if x.ndim != 2 or x.shape[1] != self.d_in:
            raise ShapeError(f"Linear({self.d_in}->{self.d_out}) got input {x.shape}")
        return T.add(T.matmul(x, self.weight), T.reshape(self.bias, (1, self.d_out)))


class BatchNorm2d(Module):
    def __init__(self, channels: int, momentum: float = 0.1, eps: float = 1e-5):
        super().__init__()
        self.channels, self.momentum, self.eps = channels, momentum, eps
        self.gamma = Tensor(np.ones(channels), requires_grad=True)
        self.beta = Tensor(np.zeros(channels), requires_grad=True)
        self.register_buffer("running_mean", np.zeros(channels))
        self.register_buffer("running_var", np.ones(channels))

    def reset_parameters(self, rng):
        self.gamma.data = np.ones(self.channels)
        self.beta.data = np.zeros(self.channels)
        self.register_buffer("running_mean", np.zeros(self.channels))
        self.register_buffer("running_var", np.ones(self.channels))

    def forward(self, x: Tensor) -> Tensor:
        if x.ndim != 4 or x.shape[1] != self.channels:
            raise ShapeError(f"BatchNorm2d({self.channels}) got input {x.shape}")
        view = (1, self.channels, 1, 1)
        if self.training:
            mu = T.mean(x, (0, 2, 3), keepdims=True)
            centered = T.sub(x, mu)
            var = T.mean(T.square(centered), (0, 2, 3), keepdims=True)
            m = self.momentum
            self._buffers["running_mean"] = (1 - m) * self._buffers["running_mean"] + m * mu.data.reshape(-1)
            self._buffers["running_var"] = (1 - m) * self._buffers["running_var"] + m * var.data.reshape(-1)
            xhat = T.div(centered, T.sqrt(T.add(var, self.eps)))
        else:
            mu = self._buffers["running_mean"].reshape(view)
            inv = 1.0 / np.sqrt(self._buffers["running_var"].reshape(view) + self.eps)
            xhat = T.mul(T.sub(x, Tensor(mu)), Tensor(inv))
        return T.add(T.mul(xhat, T.reshape(self.gamma, view)), T.reshape(self.beta, view))


class PReLU(Module):
    def __init__(self, channels: int, init: float = 0.25):
        super().__init__()
        self.channels, self.init = channels, init
        self.alpha = Tensor(np.full(channels, init), requires_grad=True)

    def reset_parameters(self, rng):
        self.alpha.data = np.full(self.channels, self.init)

    def forward(self, x: Tensor) -> Tensor:
        return T.prelu(x, self.alpha)


class Conv2d(Module):
    """Bias-free convolution; ``depthwise`` switches to one kernel slice per channel."""

    def __init__(self, c_in: int, c_out: int, kernel: int, stride: int = 1, padding: int = 0, depthwise: bool = False):
        super().__init__()
        if depthwise and c_in != c_out:
            raise ShapeError("depthwise convolution keeps the channel count")
        self.stride, self.padding, self.depthwise = stride, padding, depthwise
        shape = (c_out, 1, kernel, kernel) if depthwise else (c_out, c_in, kernel, kernel)
        self.fan_in = kernel * kernel * (1 if depthwise else c_in)
        self.weight = Tensor(np.zeros(shape), requires_grad=True)

    def reset_parameters(self, rng):
        self.weight.data = _uniform_fan_in(rng, self.weight.shape, self.fan_in)

    def forward(self, x: Tensor) -> Tensor:
        op = T.depthwise_conv2d if self.depthwise else T.conv2d
        return op(x, self.weight, self.stride, self.padding)


class ConvBNAct(Module):
    def __init__(self, c_in, c_out, kernel, stride=1, padding=0, depthwise=False, act=True):
        super().__init__()
        self.conv = Conv2d(c_in, c_out, kernel, stride, padding, depthwise)
        self.bn = BatchNorm2d(c_out)
        if act:
            self.act = PReLU(c_out)
        self.has_act = act

    def forward(self, x: Tensor) -> Tensor:
        y = self.bn(self.conv(x))
        return self.act(y) if self.has_act else y


class DepthwiseBlock(Module):
    """Depthwise 3x3 (strided) then pointwise 1x1, each followed by BN + PReLU."""

    def __init__(self, c_in: int, c_out: int, stride: int = 2):
        super().__init__()
        self.dw = ConvBNAct(c_in, c_in, 3, stride, 1, depthwise=True)
        self.pw = ConvBNAct(c_in, c_out, 1)

    def forward(self, x: Tensor) -> Tensor:
        return self.pw(self.dw(x))


class GDConv(Module):
    """Global depthwise convolution: the kernel covers the whole feature map."""

    def __init__(self, channels: int, height: int, width: int):
        super().__init__()
        self.channels, self.height, self.width = channels, height, width
        self.weight = Tensor(np.zeros((channels, 1, height, width)), requires_grad=True)

    def reset_parameters(self, rng):
        self.weight.data = _uniform_fan_in(rng, self.weight.shape, self.height * self.width)

    def forward(self, x: Tensor) -> Tensor:
        if x.ndim != 4 or x.shape[1:] != (self.channels, self.height, self.width):
            raise ShapeError(
                f"GDConv expects [B,{self.channels},{self.height},{self.width}], got {x.shape}"
            )
        return T.depthwise_conv2d(x, self.weight)


# functional spellings of the layer ops


def linear(layer: Linear, x: Tensor) -> Tensor:
    return layer(x)


def batchnorm(layer: BatchNorm2d, x: Tensor) -> Tensor:
    return layer(x)


def gdconv(layer: GDConv, x: Tensor) -> Tensor:
    return layer(x)


def init_params(layer: Module, seed: int) -> Module:
    return layer.init_params(seed)


# ---------------------------------------------------------------- checkpoints


def encode_array(arr: np.ndarray) -> str:
    return base64.b64encode(np.ascontiguousarray(arr, dtype="<f8").tobytes()).decode("ascii")


def decode_array(payload: str, shape) -> np.ndarray:
    flat = np.frombuffer(base64.b64decode(payload), dtype="<f8")
    if flat.size != int(np.prod(shape, dtype=np.int64)):
        raise DataError(f"payload holds {flat.size} values, shape {shape} needs {int(np.prod(shape))}")
    return flat.reshape(shape).astype(np.float64)


def save_checkpoint(
    path,
    module: Module,
    meta: dict | None = None,
    group_of: Callable[[str], str] | None = None,
) -> None:
    entries = []
    for kind, items in (("param", module.named_parameters()), ("buffer", module.named_buffers())):
        for name, value in items:
            arr = value.data if isinstance(value, Tensor) else value
            entries.append(
                {
                    "name": name,
                    "kind": kind,
                    "group": group_of(name) if group_of else None,
                    "shape": list(arr.shape),
                    "data": encode_array(arr),
                }
            )
    doc = {"format": CHECKPOINT_FORMAT, "version": 1, "meta": meta or {}, "tensors": entries}
    Path(path).write_text(json.dumps(doc, indent=1), encoding="utf-8")


def read_checkpoint(path) -> tuple[dict, dict[str, np.ndarray], dict[str, str | None]]:
    """Return ``(meta, state, groups)`` from a checkpoint file."""
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise DataError(f"cannot read checkpoint {path}: {exc}") from exc
    if doc.get("format") != CHECKPOINT_FORMAT:
        raise DataError(f"{path} is not a {CHECKPOINT_FORMAT} file")
    state, groups = {}, {}
    for entry in doc["tensors"]:
        state[entry["name"]] = decode_array(entry["data"], tuple(entry["shape"]))
        groups[entry["name"]] = entry.get("group")
    return doc.get("meta", {}), state, groups
