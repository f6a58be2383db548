"""Sampled grad-check problems shared by the unit suites and the acceptance run.

Each ``*_case(name)`` returns ``make(rng) -> (fn, params)`` for ``smooth_point``.
"""

import numpy as np

from multitask_affect import tensor as T
from multitask_affect.layers import BatchNorm2d, Conv2d, ConvBNAct, DepthwiseBlock, GDConv, Linear, PReLU
from multitask_affect.losses import attention_consistency, bce, ccc_loss, cross_entropy
from multitask_affect.tensor import Tensor, grad_check

from conftest import projection_loss, randomize, smooth_point, tiny_model_case


def worst_grad_error(make, seeds):
    worst = 0.0
    for seed in seeds:
        fn, params = smooth_point(make, np.random.default_rng(seed))
        worst = max(worst, grad_check(fn, params))
    return worst


# ------------------------------------------------------------ primitives

def _param(rng, shape, low=None):
    data = rng.normal(size=shape) if low is None else rng.uniform(low, low + 2.0, size=shape)
    return Tensor(data, requires_grad=True)


def op_case(name):
    """Factory returning ``make(rng) -> (fn, params)`` for one primitive."""

    def make(rng):
        if name in ("add", "sub", "mul", "maximum"):
            a, b = _param(rng, (3, 4)), _param(rng, (1, 4))
            op = getattr(T, name)
            f = lambda: op(a, b)  # noqa: E731
            ps = [a, b]
        elif name == "div":
            a, b = _param(rng, (3, 4)), _param(rng, (3, 1), low=0.5)
            f, ps = (lambda: T.div(a, b)), [a, b]
        elif name in ("neg", "square", "exp", "sigmoid", "tanh", "relu", "softplus"):
            a = _param(rng, (2, 3, 2))
            op = getattr(T, name)
            f, ps = (lambda: op(a)), [a]
        elif name in ("sqrt", "log"):
            a = _param(rng, (5,), low=0.5)
            op = getattr(T, name)
            f, ps = (lambda: op(a)), [a]
        elif name == "prelu":
            a, al = _param(rng, (2, 3, 2, 2)), _param(rng, (3,))
            f, ps = (lambda: T.prelu(a, al)), [a, al]
        elif name == "logsumexp":
            a = _param(rng, (3, 5))
            f, ps = (lambda: T.logsumexp(a, axis=1)), [a]
        elif name in ("sum", "mean", "var"):
            a = _param(rng, (3, 4, 2))
            op = getattr(T, name)
            f, ps = (lambda: op(a, (0, 2), keepdims=True)), [a]
        elif name == "reshape":
            a = _param(rng, (2, 6))
            f, ps = (lambda: T.reshape(a, (3, 4))), [a]
        elif name == "getitem":
            a = _param(rng, (4, 3))
            idx = (np.array([0, 2, 2, 3]), np.array([1, 0, 0, 2]))
            f, ps = (lambda: T.getitem(a, idx)), [a]
        elif name == "concat":
            a, b = _param(rng, (2, 3)), _param(rng, (4, 3))
            f, ps = (lambda: T.concat([a, b], 0)), [a, b]
        elif name == "matmul":
            a, b = _param(rng, (3, 4)), _param(rng, (4, 2))
            f, ps = (lambda: T.matmul(a, b)), [a, b]
        elif name == "conv2d":
            x, k = _param(rng, (2, 2, 5, 4)), _param(rng, (3, 2, 3, 3))
            f, ps = (lambda: T.conv2d(x, k, 2, 1)), [x, k]
        elif name == "depthwise_conv2d":
            x, k = _param(rng, (2, 3, 5, 5)), _param(rng, (3, 1, 3, 3))
            f, ps = (lambda: T.depthwise_conv2d(x, k, 2, 1)), [x, k]
        else:
            raise KeyError(name)
        with T.no_grad():
            w = rng.normal(size=f().shape)
        return (lambda: projection_loss([f()], [w])), ps

    return make


PRIMITIVES = [
    "add", "sub", "mul", "div", "maximum", "neg", "square", "sqrt", "exp", "log",
    "sigmoid", "tanh", "relu", "prelu", "softplus", "logsumexp", "sum", "mean", "var",
    "reshape", "getitem", "concat", "matmul", "conv2d", "depthwise_conv2d",
]  # fmt: skip


# ------------------------------------------------------------ layers

LAYER_CASES = {
    "linear": (lambda: Linear(5, 3), (4, 5)),
    "batchnorm": (lambda: BatchNorm2d(3), (3, 3, 2, 2)),
    "prelu": (lambda: PReLU(3), (2, 3, 2, 2)),
    "conv": (lambda: Conv2d(2, 3, 3, stride=2, padding=1), (2, 2, 5, 5)),
    "depthwise_conv": (lambda: Conv2d(3, 3, 3, stride=2, padding=1, depthwise=True), (2, 3, 5, 5)),
    "conv_bn_act": (lambda: ConvBNAct(2, 3, 3, stride=2, padding=1), (2, 2, 5, 5)),
    "depthwise_block": (lambda: DepthwiseBlock(3, 4), (2, 3, 6, 6)),
    "gdconv": (lambda: GDConv(3, 3, 4), (2, 3, 3, 4)),
}


def layer_case(name):
    build, in_shape = LAYER_CASES[name]

    def make(r):
        layer = build().init_params(int(r.integers(1 << 31)))
        randomize(layer, r)
        layer.train()
        x = Tensor(r.normal(size=in_shape))
        with T.no_grad():
            w = r.normal(size=layer(x).shape)
        # the layer input stays untracked: its gradients are covered per primitive
        return (lambda: projection_loss([layer(x)], [w])), layer.parameters()

    return make


# ------------------------------------------------------------ losses

LOSSES = ["ccc_loss", "cross_entropy", "bce", "attention_consistency"]


def loss_case(name, b=8):
    def make(r):
        if name == "ccc_loss":
            x, t = Tensor(r.normal(size=(b, 2)), requires_grad=True), r.normal(size=(b, 2))
            return (lambda: ccc_loss(x, t)), [x]
        if name == "cross_entropy":
            x, t = Tensor(r.normal(size=(b, 8)), requires_grad=True), r.integers(0, 8, b)
            return (lambda: cross_entropy(x, t)), [x]
        if name == "bce":
            x, t = Tensor(r.normal(0, 2, size=(b, 12)), requires_grad=True), r.integers(0, 2, (b, 12))
            return (lambda: bce(x, t)), [x]
        maps = [Tensor(r.random((b, 3, 3, 3)), requires_grad=True) for _ in range(3)]
        return (lambda: attention_consistency(maps)), maps

    return make


# ------------------------------------------------------------ tiny model


def tiny_model_worst(seeds, full_sweep=False):
    """Max error over seeds; 3 random coordinates per tensor unless ``full_sweep``."""
    worst = 0.0
    for seed in seeds:
        fn, params = tiny_model_case(seed)
        coords = None
        if not full_sweep:
            r = np.random.default_rng(10_000 + seed)
            coords = {k: r.choice(p.size, size=min(3, p.size), replace=False) for k, p in enumerate(params)}
        worst = max(worst, grad_check(fn, params, coords=coords))
    return worst
