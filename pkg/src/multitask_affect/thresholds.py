"""Per-AU decision thresholds chosen by grid search on held-out predictions."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import ContractError, DataError
from .metrics import AU_NAMES

DEFAULT_GRID = tuple(round(0.05 * k, 2) for k in range(1, 20))


@dataclass
class ThresholdSet:
    values: tuple[float, ...] = (0.5,) * len(AU_NAMES)

    def __post_init__(self):
        self.values = tuple(float(v) for v in self.values)
        if not all(0.0 < v < 1.0 for v in self.values):
            raise ContractError("thresholds must lie strictly between 0 and 1")

    def to_dict(self, names: Sequence[str] = AU_NAMES) -> dict[str, float]:
        return dict(zip(names, self.values))

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2), encoding="utf-8")

    @classmethod
    def load(cls, path, names: Sequence[str] = AU_NAMES) -> ThresholdSet:
        try:
            doc = json.loads(Path(path).read_text(encoding="utf-8"))
            return cls(tuple(doc[n] for n in names))
        except (OSError, json.JSONDecodeError, KeyError) as exc:
            raise DataError(f"cannot read thresholds from {path}: {exc}") from exc


def _f1_per_threshold(probs: np.ndarray, truth: np.ndarray, grid: np.ndarray) -> np.ndarray:
    """F1 for every (grid value, column) pair -> array [len(grid), n_cols]."""
    pred = probs[None, :, :] >= grid[:, None, None]
    pos = truth.astype(bool)[None]
    tp = np.sum(pred & pos, axis=1)
    fp = np.sum(pred & ~pos, axis=1)
    fn = np.sum(~pred & pos, axis=1)
    den = 2 * tp + fp + fn
    return np.divide(2 * tp, den, out=np.zeros(den.shape), where=den > 0)


def optimize_thresholds(au_probs, truth, grid: Sequence[float] = DEFAULT_GRID):
    """Pick, per AU, the grid value with the best F1 (lowest value on ties).

    Returns ``(ThresholdSet, per_au_f1_before, per_au_f1_after)`` where
    "before" is F1 at the uniform 0.5 threshold.
    """
    probs = np.asarray(au_probs, dtype=np.float64)
    y = np.asarray(truth)
    if probs.ndim != 2 or probs.shape != y.shape:
        raise ContractError(f"probs {probs.shape} and truth {y.shape} must match and be 2-D")
    if probs.shape[0] == 0:
        raise ContractError("need at least one row to tune thresholds")
    g = np.asarray(sorted(set(float(v) for v in grid)))
    if g.size == 0 or g[0] <= 0.0 or g[-1] >= 1.0:
        raise ContractError("grid must be nonempty with values in (0, 1)")
    scores = _f1_per_threshold(probs, y, g)
    # argmax returns the first maximum, i.e. the lowest threshold on ties
    best = np.argmax(scores, axis=0)
    after = scores[best, np.arange(probs.shape[1])]
    before = _f1_per_threshold(probs, y, np.array([0.5]))[0]
    return ThresholdSet(tuple(g[best])), before, after
