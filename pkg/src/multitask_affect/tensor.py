"""Dense float64 tensors with tape-based reverse-mode differentiation.

Every differentiable op builds an output ``Tensor`` that remembers its
parents and a closure mapping the output gradient to parent gradients.
``backward`` orders the recorded graph topologically (the tape) and walks
it once in reverse.
"""

from __future__ import annotations

import contextlib
import threading
from typing import Callable, Iterable, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ContractError, DomainError, ShapeError

_state = threading.local()


def is_grad_enabled() -> bool:
    return getattr(_state, "enabled", True)


@contextlib.contextmanager
def no_grad():
    """Disable graph recording in the current thread."""
    prev = is_grad_enabled()
    _state.enabled = False
    try:
        yield
    finally:
        _state.enabled = prev


BackwardFn = Callable[[np.ndarray], Sequence["np.ndarray | None"]]


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "frozen", "_parents", "_backward")
    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        # Only meaningful for parameters; the optimizer skips frozen tensors.
        self.frozen = False
        self._parents: tuple[Tensor, ...] = ()
        self._backward: BackwardFn | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.size == 1 else _not_scalar(self)

    def numpy(self) -> np.ndarray:
        return self.data.copy()

    def detach(self) -> Tensor:
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def backward(self) -> None:
        backward(self)


def _not_scalar(t: Tensor):
    raise ContractError(f"expected a single-element tensor, got shape {t.shape}")


def tensor_new(shape: Sequence[int], data: Iterable[float], grad_tracked: bool = False) -> Tensor:
    """Build a tensor from an explicit shape and a flat row-major value list."""
    shape = tuple(int(s) for s in shape)
    if any(s <= 0 for s in shape):
        raise ShapeError(f"extents must be positive, got {shape}")
    flat = np.asarray(list(data), dtype=np.float64)
    if flat.size != int(np.prod(shape)):
        raise ShapeError(f"shape {shape} needs {int(np.prod(shape))} values, got {flat.size}")
    return Tensor(flat.reshape(shape), requires_grad=grad_tracked)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data: np.ndarray, parents: tuple[Tensor, ...], backward_fn: BackwardFn) -> Tensor:
    track = is_grad_enabled() and any(p.requires_grad for p in parents)
    out = Tensor(data, requires_grad=track)
    if track:
        out._parents = parents
        out._backward = backward_fn
    return out


# ---------------------------------------------------------------- broadcasting


def _coerce_pair(a, b) -> tuple[Tensor, Tensor]:
    a_is, b_is = isinstance(a, Tensor), isinstance(b, Tensor)
    if not a_is and not b_is:
        return Tensor(a), Tensor(b)
    if not a_is:
        a = _lift(a, b.ndim)
    if not b_is:
        b = _lift(b, a.ndim)
    return a, b


def _lift(x, ndim: int) -> Tensor:
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim == 0:
        arr = arr.reshape((1,) * ndim)
    return Tensor(arr)


def broadcast_shape(sa: tuple[int, ...], sb: tuple[int, ...]) -> tuple[int, ...]:
    """Singleton-dimension expansion only; ranks must agree."""
    if len(sa) != len(sb):
        raise ShapeError(f"rank mismatch: {sa} vs {sb}")
    out = []
    for x, y in zip(sa, sb):
        if x == y or y == 1:
            out.append(x)
        elif x == 1:
            out.append(y)
        else:
            raise ShapeError(f"cannot broadcast {sa} with {sb}")
    return tuple(out)


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if grad.shape == shape:
        return grad
    axes = tuple(i for i, (g, s) in enumerate(zip(grad.shape, shape)) if s == 1 and g != 1)
    return grad.sum(axis=axes, keepdims=True)


# ---------------------------------------------------------------- elementwise


def add(a, b) -> Tensor:
    a, b = _coerce_pair(a, b)
    broadcast_shape(a.shape, b.shape)
    sa, sb = a.shape, b.shape
    return _make(a.data + b.data, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b) -> Tensor:
    a, b = _coerce_pair(a, b)
    broadcast_shape(a.shape, b.shape)
    sa, sb = a.shape, b.shape
    return _make(a.data - b.data, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)))


def mul(a, b) -> Tensor:
    a, b = _coerce_pair(a, b)
    broadcast_shape(a.shape, b.shape)
    ad, bd = a.data, b.data
    return _make(
        ad * bd,
        (a, b),
        lambda g: (_unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)),
    )


def div(a, b) -> Tensor:
    a, b = _coerce_pair(a, b)
    broadcast_shape(a.shape, b.shape)
    ad, bd = a.data, b.data
    out = ad / bd
    return _make(
        out,
        (a, b),
        lambda g: (_unbroadcast(g / bd, ad.shape), _unbroadcast(-g * out / bd, bd.shape)),
    )


def maximum(a, b) -> Tensor:
    """Elementwise max; ties send the gradient to ``a``."""
    a, b = _coerce_pair(a, b)
    broadcast_shape(a.shape, b.shape)
    pick_a = a.data >= b.data
    sa, sb = a.shape, b.shape
    return _make(
        np.where(pick_a, a.data, b.data),
        (a, b),
        lambda g: (_unbroadcast(g * pick_a, sa), _unbroadcast(g * ~pick_a, sb)),
    )


def neg(x: Tensor) -> Tensor:
    return _make(-x.data, (x,), lambda g: (-g,))


def square(x: Tensor) -> Tensor:
    xd = x.data
    return _make(xd * xd, (x,), lambda g: (2.0 * xd * g,))


def sqrt(x: Tensor) -> Tensor:
    if np.any(x.data < 0):
        raise DomainError("sqrt of a negative value")
    out = np.sqrt(x.data)
    return _make(out, (x,), lambda g: (g * 0.5 / out,))


def exp(x: Tensor) -> Tensor:
    out = np.exp(x.data)
    return _make(out, (x,), lambda g: (g * out,))


def log(x: Tensor) -> Tensor:
    if np.any(x.data <= 0):
        raise DomainError("log of a non-positive value")
    xd = x.data
    return _make(np.log(xd), (x,), lambda g: (g / xd,))


def _sigmoid(z: np.ndarray) -> np.ndarray:
    # Split by sign so neither branch overflows.
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def sigmoid(x: Tensor) -> Tensor:
    s = _sigmoid(x.data)
    return _make(s, (x,), lambda g: (g * s * (1.0 - s),))


def tanh(x: Tensor) -> Tensor:
    t = np.tanh(x.data)
    return _make(t, (x,), lambda g: (g * (1.0 - t * t),))


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return _make(x.data * mask, (x,), lambda g: (g * mask,))


def prelu(x: Tensor, alpha: Tensor) -> Tensor:
    """max(0, x) + alpha * min(0, x) with one slope per channel (axis 1)."""
    if alpha.ndim != 1 or x.ndim < 2 or alpha.shape[0] != x.shape[1]:
        raise ShapeError(f"prelu slope {alpha.shape} does not match channels of {x.shape}")
    view = (1, -1) + (1,) * (x.ndim - 2)
    a = alpha.data.reshape(view)
    xd = x.data
    neg_part = np.minimum(xd, 0.0)
    out = np.maximum(xd, 0.0) + a * neg_part

    def back(g):
        gx = np.where(xd > 0, g, g * a)
        red = (0,) + tuple(range(2, xd.ndim))
        return gx, (g * neg_part).sum(axis=red)

    return _make(out, (x, alpha), back)


def softplus(x: Tensor) -> Tensor:
    """log(1 + e^x) in overflow-safe form."""
    xd = x.data
    out = np.maximum(xd, 0.0) + np.log1p(np.exp(-np.abs(xd)))
    return _make(out, (x,), lambda g: (g * _sigmoid(xd),))


def logsumexp(x: Tensor, axis: int = -1, keepdims: bool = False) -> Tensor:
    xd = x.data
    m = xd.max(axis=axis, keepdims=True)
    s = np.log(np.exp(xd - m).sum(axis=axis, keepdims=True)) + m
    soft = np.exp(xd - s)
    out = s if keepdims else np.squeeze(s, axis=axis)

    def back(g):
        if not keepdims:
            g = np.expand_dims(g, axis)
        return (g * soft,)

    return _make(out, (x,), back)


# ---------------------------------------------------------------- reductions


def _norm_axes(x: Tensor, axes) -> tuple[int, ...]:
    if axes is None:
        return tuple(range(x.ndim))
    if isinstance(axes, int):
        axes = (axes,)
    norm = []
    for ax in axes:
        if not -x.ndim <= ax < x.ndim:
            raise ShapeError(f"axis {ax} out of range for shape {x.shape}")
        norm.append(ax % x.ndim)
    return tuple(sorted(set(norm)))


def sum(x: Tensor, axes=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    ax = _norm_axes(x, axes)
    if x.size == 0:
        raise DomainError("reduction over an empty extent")
    shape = x.shape

    def back(g):
        if not keepdims:
            g = np.expand_dims(g, ax)
        return (np.broadcast_to(g, shape).copy(),)

    return _make(x.data.sum(axis=ax, keepdims=keepdims), (x,), back)


def mean(x: Tensor, axes=None, keepdims: bool = False) -> Tensor:
    ax = _norm_axes(x, axes)
    count = int(np.prod([x.shape[a] for a in ax])) if x.size else 0
    if count == 0:
        raise DomainError("mean over an empty extent")
    return mul(sum(x, ax, keepdims), 1.0 / count)


def var(x: Tensor, axes=None, keepdims: bool = False) -> Tensor:
    """Population variance (divides by n)."""
    ax = _norm_axes(x, axes)
    centered = sub(x, mean(x, ax, keepdims=True))
    return mean(square(centered), ax, keepdims)


def reduce(op: str, x: Tensor, axes=None, keepdims: bool = False) -> Tensor:
    fns = {"sum": sum, "mean": mean, "var": var}
    if op not in fns:
        raise ContractError(f"unknown reduction {op!r}")
    return fns[op](x, axes, keepdims)


# ---------------------------------------------------------------- structural


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    src = x.shape
    return _make(x.data.reshape(shape), (x,), lambda g: (g.reshape(src),))


def getitem(x: Tensor, idx) -> Tensor:
    src = x.shape

    def back(g):
        full = np.zeros(src)
        np.add.at(full, idx, g)
        return (full,)

    return _make(x.data[idx], (x,), back)


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = tuple(tensors)
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]
    return _make(
        np.concatenate([t.data for t in tensors], axis=axis),
        tensors,
        lambda g: tuple(np.split(g, splits, axis=axis)),
    )


# ---------------------------------------------------------------- linear algebra


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul needs [M,K] x [K,N], got {a.shape} x {b.shape}")
    ad, bd = a.data, b.data
    return _make(ad @ bd, (a, b), lambda g: (g @ bd.T, ad.T @ g))


def _pair(v) -> tuple[int, int]:
    if isinstance(v, (tuple, list)):
        a, b = v
        return int(a), int(b)
    return int(v), int(v)


def _out_extent(size: int, k: int, stride: int, pad: int) -> int:
    if k > size + 2 * pad:
        raise ShapeError(f"kernel extent {k} exceeds padded input {size + 2 * pad}")
    return (size + 2 * pad - k) // stride + 1


def _windows(xd: np.ndarray, kh: int, kw: int, stride, pad):
    (sh, sw), (ph, pw) = stride, pad
    xp = np.pad(xd, ((0, 0), (0, 0), (ph, ph), (pw, pw))) if ph or pw else xd
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::sh, ::sw]
    return xp.shape, win


def _scatter_windows(cols: np.ndarray, padded_shape, stride, pad, out_hw) -> np.ndarray:
    # cols: [N, C, Ho, Wo, kh, kw] -> gradient wrt the unpadded input
    (sh, sw), (ph, pw) = stride, pad
    ho, wo = out_hw
    kh, kw = cols.shape[-2:]
    gp = np.zeros(padded_shape)
    for i in range(kh):
        for j in range(kw):
            gp[:, :, i : i + sh * ho : sh, j : j + sw * wo : sw] += cols[..., i, j]
    h, w = padded_shape[2] - 2 * ph, padded_shape[3] - 2 * pw
    return gp[:, :, ph : ph + h, pw : pw + w]


def conv2d(x: Tensor, kernel: Tensor, stride=1, padding=0) -> Tensor:
    """2-D cross-correlation, NCHW input, [F, C, kh, kw] kernel.

    ``stride`` and ``padding`` take an int or an (along-height, along-width) pair.
    """
    if x.ndim != 4 or kernel.ndim != 4:
        raise ShapeError(f"conv2d needs 4-D input and kernel, got {x.shape}, {kernel.shape}")
    n, c, h, w = x.shape
    f, kc, kh, kw = kernel.shape
    if kc != c:
        raise ShapeError(f"kernel expects {kc} channels, input has {c}")
    stride, padding = _pair(stride), _pair(padding)
    ho = _out_extent(h, kh, stride[0], padding[0])
    wo = _out_extent(w, kw, stride[1], padding[1])
    padded_shape, win = _windows(x.data, kh, kw, stride, padding)
    kd = kernel.data
    out = np.tensordot(win, kd, axes=([1, 4, 5], [1, 2, 3])).transpose(0, 3, 1, 2)

    def back(g):
        gk = np.tensordot(g, win, axes=([0, 2, 3], [0, 2, 3]))
        cols = np.tensordot(g, kd, axes=([1], [0])).transpose(0, 3, 1, 2, 4, 5)
        return _scatter_windows(cols, padded_shape, stride, padding, (ho, wo)), gk

    return _make(np.ascontiguousarray(out), (x, kernel), back)


def depthwise_conv2d(x: Tensor, kernel: Tensor, stride=1, padding=0) -> Tensor:
    """Per-channel cross-correlation with a [C, 1, kh, kw] kernel."""
    if x.ndim != 4 or kernel.ndim != 4 or kernel.shape[1] != 1:
        raise ShapeError(
            f"depthwise conv needs NCHW input and [C,1,kh,kw] kernel, got {x.shape}, {kernel.shape}"
        )
    n, c, h, w = x.shape
    kc, _, kh, kw = kernel.shape
    if kc != c:
        raise ShapeError(f"kernel has {kc} channel slices, input has {c}")
    stride, padding = _pair(stride), _pair(padding)
    ho = _out_extent(h, kh, stride[0], padding[0])
    wo = _out_extent(w, kw, stride[1], padding[1])
    padded_shape, win = _windows(x.data, kh, kw, stride, padding)
    kd = kernel.data[:, 0]
    out = np.einsum("nchwij,cij->nchw", win, kd)

    def back(g):
        gk = np.einsum("nchw,nchwij->cij", g, win)[:, None]
        cols = g[..., None, None] * kd[None, :, None, None]
        return _scatter_windows(cols, padded_shape, stride, padding, (ho, wo)), gk

    return _make(out, (x, kernel), back)


# ---------------------------------------------------------------- elementwise dispatch

_UNARY = {
    "sigmoid": sigmoid,
    "tanh": tanh,
    "relu": relu,
    "exp": exp,
    "log": log,
    "neg": neg,
    "sqrt": sqrt,
    "softplus": softplus,
}
_BINARY = {"add": add, "sub": sub, "mul": mul, "div": div, "prelu": prelu, "maximum": maximum}


def elementwise(op: str, *operands) -> Tensor:
    if op in _UNARY and len(operands) == 1:
        return _UNARY[op](as_tensor(operands[0]))
    if op in _BINARY and len(operands) == 2:
        return _BINARY[op](*operands)
    raise ContractError(f"unknown elementwise op {op!r} with {len(operands)} operands")


# ---------------------------------------------------------------- backward


def tape(root: Tensor) -> list[Tensor]:
    """Tracked tensors reachable from ``root`` in topological order."""
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(t) into ``t.grad`` for every tracked tensor."""
    if loss.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return
    order = tape(loss)
    grads: dict[int, np.ndarray] = {id(loss): np.ones(loss.shape)}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        node.grad = g if node.grad is None else node.grad + g
        if node._backward is None:
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            grads[key] = pg if key not in grads else grads[key] + pg
        # the tape is consumed: release saved context
        node._parents = ()
        node._backward = None


# ---------------------------------------------------------------- gradient check


def grad_check(
    fn: Callable[[], Tensor],
    params: Sequence[Tensor],
    eps: float = 1e-5,
    coords: dict[int, np.ndarray] | None = None,
) -> float:
    """Max relative error between autodiff and central finite differences.

    ``fn`` recomputes a scalar from the current contents of ``params``.
    ``coords`` optionally restricts, per parameter index, which flat
    coordinates are probed; by default every coordinate is.
    """
    if eps <= 0:
        raise ContractError("eps must be positive")
    for p in params:
        p.grad = None
    loss = fn()
    backward(loss)
    analytic = [np.zeros(p.shape) if p.grad is None else p.grad.copy() for p in params]

    worst = 0.0
    with no_grad():
        for k, p in enumerate(params):
            p.data = np.ascontiguousarray(p.data)
            flat = p.data.reshape(-1)
            idxs = range(flat.size) if coords is None or k not in coords else coords[k]
            g_ad = analytic[k].reshape(-1)
            for i in idxs:
                orig = flat[i]
                flat[i] = orig + eps
                f_plus = fn().item()
                flat[i] = orig - eps
                f_minus = fn().item()
                flat[i] = orig
                g_fd = (f_plus - f_minus) / (2.0 * eps)
                err = abs(g_ad[i] - g_fd) / max(1e-8, abs(g_ad[i]) + abs(g_fd))
                worst = max(worst, err)
    return worst
