"""Annotation schema, strict curation, synthetic data and batching.

On-disk dataset layout::

    <root>/annotations.csv         # header: frame_id,valence,arousal,expression,AU1,...,AU26
    <root>/images/<frame_id>.png   # 8-bit RGB (binary PPM ``.ppm`` also accepted)
"""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np
from PIL import Image

from .errors import ContractError, DataError
from .losses import Targets
from .metrics import AU_NAMES, N_EXPR
from .tensor import Tensor

HEADER = ("frame_id", "valence", "arousal", "expression") + AU_NAMES
INVALID_VA = -5.0
INVALID_LABEL = -1
REASONS = ("invalid_va", "invalid_expr", "invalid_au")


@dataclass(frozen=True)
class AnnotationRecord:
    frame_id: str
    valence: float
    arousal: float
    expression: int
    au: tuple[int, ...]

    def to_row(self) -> list[str]:
        return [self.frame_id, repr(float(self.valence)), repr(float(self.arousal)), str(self.expression)] + [
            str(v) for v in self.au
        ]


@dataclass
class CurationReport:
    total_in: int = 0
    kept: int = 0
    dropped: int = 0
    dropped_by_reason: dict[str, int] = field(default_factory=lambda: {r: 0 for r in REASONS})

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2)


@dataclass
class Sample:
    """``image`` is a float array [3, H, W] with values in [0, 1]."""

    image: np.ndarray
    record: AnnotationRecord


# ---------------------------------------------------------------- parsing


def _parse_int(text: str) -> int:
    value = float(text)
    if not value.is_integer():
        raise ValueError(f"{text!r} is not an integer")
    return int(value)


def parse_annotations(path) -> list[AnnotationRecord]:
    """Read the annotation CSV without any validity filtering."""
    records = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(h.strip() for h in header) != HEADER:
            raise DataError(f"{path}: line 1: expected header {','.join(HEADER)}")
        for row in reader:
            lineno = reader.line_num
            if not row or all(not cell.strip() for cell in row):
                continue
            if len(row) != len(HEADER):
                raise DataError(f"{path}: line {lineno}: expected {len(HEADER)} columns, got {len(row)}")
            try:
                records.append(
                    AnnotationRecord(
                        frame_id=row[0].strip(),
                        valence=float(row[1]),
                        arousal=float(row[2]),
                        expression=_parse_int(row[3]),
                        au=tuple(_parse_int(v) for v in row[4:]),
                    )
                )
            except ValueError as exc:
                raise DataError(f"{path}: line {lineno}: {exc}") from exc
    return records


def write_annotations(records: Sequence[AnnotationRecord], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(HEADER)
        for r in records:
            writer.writerow(r.to_row())


# ---------------------------------------------------------------- curation


def drop_reason(record: AnnotationRecord, va_range: tuple[float, float] = (-1.0, 1.0)) -> str | None:
    """First failing check in the order VA, expression, AU; None if valid."""
    lo, hi = va_range
    for v in (record.valence, record.arousal):
        if v == INVALID_VA or not lo <= v <= hi:
            return "invalid_va"
    if record.expression == INVALID_LABEL or not 0 <= record.expression < N_EXPR:
        return "invalid_expr"
    if len(record.au) != len(AU_NAMES) or any(v not in (0, 1) for v in record.au):
        return "invalid_au"
    return None


def curate(records: Sequence[AnnotationRecord], va_range=(-1.0, 1.0)) -> tuple[list[AnnotationRecord], CurationReport]:
    """Drop every frame carrying any out-of-range value."""
    report = CurationReport(total_in=len(records))
    kept = []
    for r in records:
        reason = drop_reason(r, va_range)
        if reason is None:
            kept.append(r)
        else:
            report.dropped_by_reason[reason] += 1
    report.kept = len(kept)
    report.dropped = report.total_in - report.kept
    return kept, report


# ---------------------------------------------------------------- synthetic data


def _render(size: int, v: float, a: float, expr: int, au: Sequence[int], rng: np.random.Generator) -> np.ndarray:
    cell = size // 4
    img = np.zeros((3, size, size))
    # red: brightness carries valence, a 2x2-block checker carries arousal
    yy, xx = np.mgrid[0:size, 0:size]
    checker = np.where(((yy // 2) + (xx // 2)) % 2 == 0, 1.0, -1.0)
    img[0] = 0.5 + 0.3 * v + 0.15 * a * checker
    # green: one lit cell in the top two rows of a 4x4 grid marks the expression
    gy, gx = divmod(expr, 4)
    img[1, gy * cell : (gy + 1) * cell, gx * cell : (gx + 1) * cell] = 0.9
    img[1] += 0.05
    # blue: a filled square per active action unit, cells 0..11 of the grid
    m = max(1, cell // 4)
    for j, on in enumerate(au):
        if on:
            cy, cx = divmod(j, 4)
            img[2, cy * cell + m : (cy + 1) * cell - m, cx * cell + m : (cx + 1) * cell - m] = 0.85
    img += rng.normal(0.0, 0.02, img.shape)
    return np.round(np.clip(img, 0.0, 1.0) * 255.0) / 255.0


def generate_synthetic(n: int, seed: int = 0, image_size: int = 32) -> list[Sample]:
    """Images whose labels are recoverable from their content.

    Expressions are balanced (each class appears ``n // 8`` or more times)
    and every AU column is half on, half off.
    """
    if n < 1:
        raise ContractError("n must be at least 1")
    if image_size < 8:
        raise ContractError("image_size must be at least 8")
    rng = np.random.default_rng(seed)
    expr = rng.permutation(np.arange(n) % N_EXPR)
    au = np.stack([rng.permutation(np.arange(n) % 2) for _ in AU_NAMES], axis=1)
    va = np.round(rng.uniform(-0.9, 0.9, size=(n, 2)), 4)
    samples = []
    for i in range(n):
        rec = AnnotationRecord(
            frame_id=f"syn{seed}_{i:05d}",
            valence=float(va[i, 0]),
            arousal=float(va[i, 1]),
            expression=int(expr[i]),
            au=tuple(int(x) for x in au[i]),
        )
        samples.append(Sample(_render(image_size, rec.valence, rec.arousal, rec.expression, rec.au, rng), rec))
    return samples


# ---------------------------------------------------------------- persistence


def save_dataset(samples: Sequence[Sample], root) -> None:
    root = Path(root)
    (root / "images").mkdir(parents=True, exist_ok=True)
    write_annotations([s.record for s in samples], root / "annotations.csv")
    for s in samples:
        pixels = np.round(s.image.transpose(1, 2, 0) * 255.0).astype(np.uint8)
        Image.fromarray(pixels, mode="RGB").save(root / "images" / f"{s.record.frame_id}.png")


def load_image(path) -> np.ndarray:
    with Image.open(path) as im:
        arr = np.asarray(im.convert("RGB"), dtype=np.float64)
    return arr.transpose(2, 0, 1) / 255.0


def load_dataset(root, curate_records: bool = True) -> tuple[list[Sample], CurationReport | None]:
    root = Path(root)
    csv_path = root / "annotations.csv"
    if not csv_path.exists():
        raise DataError(f"{csv_path} not found")
    records = parse_annotations(csv_path)
    report = None
    if curate_records:
        records, report = curate(records)
    samples = []
    for r in records:
        for ext in (".png", ".ppm"):
            img_path = root / "images" / f"{r.frame_id}{ext}"
            if img_path.exists():
                samples.append(Sample(load_image(img_path), r))
                break
        else:
            raise DataError(f"no image for frame {r.frame_id} under {root / 'images'}")
    return samples, report


# ---------------------------------------------------------------- batching


def stack_targets(records: Sequence[AnnotationRecord]) -> Targets:
    return Targets(
        va=np.array([[r.valence, r.arousal] for r in records], dtype=np.float64),
        expr=np.array([r.expression for r in records], dtype=np.int64),
        au=np.array([r.au for r in records], dtype=np.float64),
    )


def batches(
    samples: Sequence[Sample], batch_size: int, seed: int = 0, shuffle: bool = True
) -> Iterator[tuple[Tensor, Targets]]:
    """Yield (images [B,3,H,W], targets); a trailing batch of one is dropped."""
    if not samples:
        raise ContractError("cannot batch an empty dataset")
    if batch_size < 2:
        raise ContractError("batch_size must be at least 2")
    order = np.random.default_rng(seed).permutation(len(samples)) if shuffle else np.arange(len(samples))
    for start in range(0, len(order), batch_size):
        idx = order[start : start + batch_size]
        if len(idx) < 2:
            break
        chunk = [samples[i] for i in idx]
        images = Tensor(np.stack([s.image for s in chunk]))
        yield images, stack_targets([s.record for s in chunk])
