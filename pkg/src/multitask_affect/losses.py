"""Training criteria: CCC for valence/arousal, cross-entropy for expressions,
binary cross-entropy for action units, and pairwise attention consistency."""

from __future__ import annotations

from dataclasses import dataclass
from itertools import combinations
from typing import Sequence

import numpy as np

from . import tensor as T
from .errors import ContractError
from .tensor import Tensor

CCC_EPS = 1e-8
PAIR_EPS = 1e-8


@dataclass
class LossWeights:
    w_va: float = 1.0
    w_expr: float = 1.0
    w_au: float = 1.0
    w_att: float = 0.1

    def __post_init__(self):
        for name in ("w_va", "w_expr", "w_au", "w_att"):
            if getattr(self, name) < 0:
                raise ContractError(f"{name} must be nonnegative")


@dataclass
class Targets:
    """Batch labels: va [B,2], expression indices [B], au flags [B,12]."""

    va: np.ndarray
    expr: np.ndarray
    au: np.ndarray

    def __len__(self) -> int:
        return len(self.expr)


def ccc(x: Sequence[float], y: Sequence[float]) -> float:
    """Lin's concordance correlation coefficient with population moments."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1 or x.size < 1:
        raise ContractError(f"ccc needs equal-length nonempty sequences, got {x.shape}, {y.shape}")
    mx, my = x.mean(), y.mean()
    cov = np.mean((x - mx) * (y - my))
    vx, vy = np.mean((x - mx) ** 2), np.mean((y - my) ** 2)
    return float(2.0 * cov / (vx + vy + (mx - my) ** 2 + CCC_EPS))


def _ccc_tensor(x: Tensor, y: Tensor) -> Tensor:
    mx, my = T.mean(x), T.mean(y)
    dx, dy = T.sub(x, T.reshape(mx, (1,))), T.sub(y, T.reshape(my, (1,)))
    cov = T.mean(T.mul(dx, dy))
    den = T.add(T.add(T.mean(T.square(dx)), T.mean(T.square(dy))), T.square(T.sub(mx, my)))
    return T.div(T.mul(cov, 2.0), T.add(den, CCC_EPS))


def ccc_loss(pred_va: Tensor, target_va) -> Tensor:
    """Mean of (1 - CCC) over the valence and arousal columns."""
    target = T.as_tensor(target_va)
    if pred_va.ndim != 2 or pred_va.shape != target.shape:
        raise ContractError(f"ccc_loss shapes differ: {pred_va.shape} vs {target.shape}")
    if pred_va.shape[0] < 2:
        raise ContractError("ccc_loss needs at least two samples")
    total = None
    for d in range(pred_va.shape[1]):
        term = T.sub(1.0, _ccc_tensor(pred_va[:, d], target[:, d]))
        total = term if total is None else T.add(total, term)
    return T.mul(total, 1.0 / pred_va.shape[1])


def cross_entropy(logits: Tensor, target_class) -> Tensor:
    target = np.asarray(target_class)
    n, k = logits.shape
    if target.shape != (n,) or not np.issubdtype(target.dtype, np.integer):
        raise ContractError(f"need {n} integer class targets, got {target.shape} {target.dtype}")
    if np.any((target < 0) | (target >= k)):
        raise ContractError(f"class targets must lie in 0..{k - 1}")
    log_probs = T.sub(logits, T.logsumexp(logits, axis=1, keepdims=True))
    picked = log_probs[np.arange(n), target]
    return T.neg(T.mean(picked))


def bce(logits: Tensor, targets) -> Tensor:
    """Binary cross-entropy on logits: softplus(z) - y*z, averaged over entries."""
    y = np.asarray(targets, dtype=np.float64)
    if y.shape != logits.shape:
        raise ContractError(f"bce shapes differ: {logits.shape} vs {y.shape}")
    if not np.all((y == 0) | (y == 1)):
        raise ContractError("bce targets must be 0 or 1")
    return T.mean(T.sub(T.softplus(logits), T.mul(logits, y)))


def attention_consistency(maps: Sequence[Tensor]) -> Tensor:
    """Sum of pairwise MSEs normalized by (number of pairs + eps)."""
    maps = list(maps)
    if not maps:
        raise ContractError("need at least one attention map")
    shape = maps[0].shape
    if any(m.shape != shape for m in maps):
        raise ContractError("attention maps must share one shape")
    pairs = list(combinations(range(len(maps)), 2))
    if not pairs:
        return T.Tensor(0.0)
    total = None
    for i, j in pairs:
        mse = T.mean(T.square(T.sub(maps[i], maps[j])))
        total = mse if total is None else T.add(total, mse)
    return T.div(total, len(pairs) + PAIR_EPS)


def multitask_loss(output, targets: Targets, weights: LossWeights, stage: int = 1) -> tuple[Tensor, dict]:
    """Weighted sum of task losses; the attention term only joins in stage 2.

    Returns the total and a dict of the unweighted component values.
    Components with zero weight are not evaluated.
    """
    if stage not in (1, 2):
        raise ContractError(f"stage must be 1 or 2, got {stage}")
    total: Tensor | None = None
    parts: dict[str, float] = {}
    terms = [
        ("va", weights.w_va, lambda: ccc_loss(output.va, targets.va)),
        ("expr", weights.w_expr, lambda: cross_entropy(output.expr_logits, targets.expr)),
        ("au", weights.w_au, lambda: bce(output.au_logits, targets.au)),
    ]
    if stage == 2:
        terms.append(("att", weights.w_att, lambda: attention_consistency(output.attention_maps)))
    for name, w, fn in terms:
        if w == 0:
            continue
        value = fn()
        parts[name] = value.item()
        weighted = T.mul(value, float(w))
        total = weighted if total is None else T.add(total, weighted)
    if total is None:
        total = T.Tensor(0.0)
    return total, parts
