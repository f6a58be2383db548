"""Challenge metrics: CCC for valence/arousal, macro F1 for expressions and
action units, and the combined P score."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from .errors import ContractError
from .losses import ccc

AU_NAMES = ("AU1", "AU2", "AU4", "AU6", "AU7", "AU10", "AU12", "AU15", "AU23", "AU24", "AU25", "AU26")
N_EXPR = 8


def _binary(a, name: str) -> np.ndarray:
    arr = np.asarray(a)
    if not np.all((arr == 0) | (arr == 1)):
        raise ContractError(f"{name} must be binary")
    return arr.astype(bool)


def binary_f1(pred, truth) -> float:
    """2TP / (2TP + FP + FN), or 0 when nothing is predicted or present."""
    p, t = _binary(pred, "pred"), _binary(truth, "truth")
    if p.shape != t.shape:
        raise ContractError(f"length mismatch: {p.shape} vs {t.shape}")
    tp = int(np.sum(p & t))
    fp = int(np.sum(p & ~t))
    fn = int(np.sum(~p & t))
    den = 2 * tp + fp + fn
    return 2 * tp / den if den else 0.0


def per_class_f1(pred_class, truth_class, n_classes: int = N_EXPR) -> np.ndarray:
    pred, truth = np.asarray(pred_class), np.asarray(truth_class)
    if pred.shape != truth.shape:
        raise ContractError(f"length mismatch: {pred.shape} vs {truth.shape}")
    for arr in (pred, truth):
        if arr.size and (arr.min() < 0 or arr.max() >= n_classes):
            raise ContractError(f"class indices must lie in 0..{n_classes - 1}")
    return np.array([binary_f1(pred == k, truth == k) for k in range(n_classes)])


def macro_f1_expr(pred_class, truth_class, n_classes: int = N_EXPR) -> float:
    return float(np.mean(per_class_f1(pred_class, truth_class, n_classes)))


def macro_f1_au(au_probs, truth, thresholds) -> tuple[float, np.ndarray]:
    """Threshold each AU column with ``prob >= t`` and average the binary F1s."""
    probs, y = np.asarray(au_probs, dtype=np.float64), np.asarray(truth)
    t = np.asarray(thresholds, dtype=np.float64)
    if probs.ndim != 2 or probs.shape != y.shape or t.shape != (probs.shape[1],):
        raise ContractError(f"shape mismatch: probs {probs.shape}, truth {y.shape}, thresholds {t.shape}")
    per_au = np.array([binary_f1(probs[:, j] >= t[j], y[:, j]) for j in range(probs.shape[1])])
    return float(per_au.mean()), per_au


def p_score(ccc_v: float, ccc_a: float, f1_expr_macro: float, f1_au_macro: float) -> float:
    """Mean VA concordance plus both macro F1 terms, added without rescaling."""
    return (ccc_v + ccc_a) / 2 + f1_expr_macro + f1_au_macro


@dataclass
class MetricReport:
    ccc_v: float
    ccc_a: float
    ccc_va: float
    f1_expr: float
    f1_au: float
    p_score: float
    per_class_f1: list[float] = field(default_factory=list)
    per_au_f1: list[float] = field(default_factory=list)
    thresholds_used: list[float] = field(default_factory=list)

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def from_dict(cls, d: dict) -> MetricReport:
        return cls(**{k: d[k] for k in cls.__dataclass_fields__ if k in d})

    def table(self, label: str = "model") -> str:
        return format_table([(label, self)])


def compute_report(va_pred, va_true, expr_pred, expr_true, au_probs, au_true, thresholds) -> MetricReport:
    va_pred, va_true = np.asarray(va_pred), np.asarray(va_true)
    if va_pred.shape != va_true.shape or va_pred.ndim != 2 or va_pred.shape[1] != 2:
        raise ContractError(f"valence/arousal arrays must be [N,2], got {va_pred.shape}, {va_true.shape}")
    cv = ccc(va_pred[:, 0], va_true[:, 0])
    ca = ccc(va_pred[:, 1], va_true[:, 1])
    per_class = per_class_f1(expr_pred, expr_true)
    f1_expr = float(np.mean(per_class))
    f1_au, per_au = macro_f1_au(au_probs, au_true, thresholds)
    return MetricReport(
        ccc_v=cv,
        ccc_a=ca,
        ccc_va=(cv + ca) / 2,
        f1_expr=f1_expr,
        f1_au=f1_au,
        p_score=p_score(cv, ca, f1_expr, f1_au),
        per_class_f1=per_class.tolist(),
        per_au_f1=per_au.tolist(),
        thresholds_used=[float(x) for x in thresholds],
    )


_COLUMNS = ("CCC_V", "CCC_A", "CCC_VA", "F1_Expr", "F1_AU", "P")


def format_table(rows: Sequence[tuple[str, MetricReport]], digits: int = 3) -> str:
    """Aligned text table, one row per labelled report."""
    width = max([len("Trainable layers")] + [len(label) for label, _ in rows])
    header = "Trainable layers".ljust(width) + "".join(c.rjust(9) for c in _COLUMNS)
    lines = [header, "-" * len(header)]
    for label, r in rows:
        vals = (r.ccc_v, r.ccc_a, r.ccc_va, r.f1_expr, r.f1_au, r.p_score)
        lines.append(label.ljust(width) + "".join(f"{v:9.{digits}f}" for v in vals))
    return "\n".join(lines)
