"""Two-stage training, Adam, and evaluation.

Stage 1 trains only the task heads with everything else frozen (and the
frozen part kept in inference mode, so its BatchNorm statistics do not
drift). Stage 2 unfreezes the whole network and adds the attention
consistency term to the multitask loss.
"""

from __future__ import annotations

import json
import logging
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import tensor as T
from .dataset import Sample, batches, stack_targets
from .errors import ConfigError, ContractError, NumericalError
from .layers import read_checkpoint, save_checkpoint
from .losses import LossWeights, multitask_loss
from .metrics import MetricReport, compute_report
from .model import DdamfnModel, ModelConfig, group_of
from .tensor import Tensor
from .thresholds import DEFAULT_GRID, ThresholdSet

log = logging.getLogger(__name__)

MODES = ("multitask", "va", "expr", "au")
TASKS = ("va", "expr", "au")


@dataclass
class TrainConfig:
    seed: int = 0
    image_size: int = 112
    channels: tuple[int, ...] = (16, 32, 64)
    n_heads: int = 2
    batch_size: int = 16
    stage1_epochs: int = 10
    stage2_epochs: int = 20
    learning_rate_stage1: float = 1e-3
    learning_rate_stage2: float = 1e-4
    weights: LossWeights = field(default_factory=LossWeights)
    threshold_grid: tuple[float, ...] = DEFAULT_GRID
    train_data: str | None = None
    val_data: str | None = None
    out_dir: str = "runs/default"
    mode: str = "multitask"

    def __post_init__(self):
        if isinstance(self.weights, dict):
            self.weights = LossWeights(**self.weights)
        self.channels = tuple(self.channels)
        self.threshold_grid = tuple(self.threshold_grid)
        self.validate()

    def validate(self) -> None:
        if self.stage1_epochs < 0 or self.stage2_epochs < 0:
            raise ConfigError("epoch counts must be nonnegative")
        if self.batch_size < 2:
            raise ConfigError("batch_size must be at least 2")
        if self.learning_rate_stage1 <= 0 or self.learning_rate_stage2 <= 0:
            raise ConfigError("learning rates must be positive")
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")
        if not self.threshold_grid or not all(0 < t < 1 for t in self.threshold_grid):
            raise ConfigError("threshold grid must be nonempty with values in (0, 1)")

    def model_config(self) -> ModelConfig:
        return ModelConfig(image_size=self.image_size, channels=self.channels, n_heads=self.n_heads)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["channels"] = list(self.channels)
        d["threshold_grid"] = list(self.threshold_grid)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> TrainConfig:
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        try:
            return cls(**d)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc

    @classmethod
    def from_file(cls, path) -> TrainConfig:
        try:
            doc = json.loads(Path(path).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        return cls.from_dict(doc)


# ---------------------------------------------------------------- optimizer


@dataclass
class AdamState:
    step: int = 0
    m: dict[int, np.ndarray] = field(default_factory=dict)
    v: dict[int, np.ndarray] = field(default_factory=dict)


def optimizer_step(
    params: Sequence[Tensor],
    grads: Sequence[np.ndarray | None],
    state: AdamState,
    lr: float,
    betas: tuple[float, float] = (0.9, 0.999),
    eps: float = 1e-8,
) -> AdamState:
    """One Adam update in place; frozen parameters and missing grads are skipped."""
    b1, b2 = betas
    state.step += 1
    c1 = 1.0 - b1**state.step
    c2 = 1.0 - b2**state.step
    for p, g in zip(params, grads):
        if p.frozen or g is None:
            continue
        key = id(p)
        m = state.m.get(key)
        v = state.v.get(key)
        if not np.all(np.isfinite(g)):
            raise NumericalError("non-finite gradient")
        m = (1 - b1) * g if m is None else b1 * m + (1 - b1) * g
        v = (1 - b2) * g * g if v is None else b2 * v + (1 - b2) * g * g
        state.m[key], state.v[key] = m, v
        p.data = p.data - lr * (m / c1) / (np.sqrt(v / c2) + eps)
    return state


class Adam:
    def __init__(self, params: Sequence[Tensor], lr: float = 1e-3):
        self.params = list(params)
        self.lr = lr
        self.state = AdamState()

    def step(self) -> None:
        optimizer_step(self.params, [p.grad for p in self.params], self.state, self.lr)

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None


# ---------------------------------------------------------------- logs


@dataclass
class EpochRecord:
    stage: int
    epoch: int
    loss: float
    components: dict[str, float]
    val: dict | None = None


@dataclass
class TrainLog:
    epochs: list[EpochRecord] = field(default_factory=list)
    wall_clock: float = 0.0
    best_p: float | None = None
    best_epoch: int | None = None
    final_report: dict | None = None

    def extend(self, other: TrainLog) -> None:
        self.epochs.extend(other.epochs)
        self.wall_clock += other.wall_clock
        if other.best_p is not None and (self.best_p is None or other.best_p > self.best_p):
            self.best_p, self.best_epoch = other.best_p, other.best_epoch

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


# ---------------------------------------------------------------- freezing


def set_trainable(model: DdamfnModel, groups: Sequence[str], active_heads: Sequence[str] = TASKS) -> None:
    """Unfreeze the named groups; inside ``heads`` only ``active_heads`` train."""
    for name, p in model.named_parameters():
        g = group_of(name)
        if g == "heads":
            p.frozen = "heads" not in groups or name.split(".")[1] not in active_heads
        else:
            p.frozen = g not in groups


def _set_modes(model: DdamfnModel, stage: int) -> None:
    model.train()
    if stage == 1:
        for part in (model.backbone, model.dda, model.gdconv):
            part.eval()


# ---------------------------------------------------------------- training


def _task_weights(config: TrainConfig, task: str | None) -> LossWeights:
    if task is None:
        return config.weights
    w = {"w_va": 0.0, "w_expr": 0.0, "w_au": 0.0, "w_att": 0.0}
    w[f"w_{task}"] = 1.0
    return LossWeights(**w)


def _run_stage(
    model: DdamfnModel,
    data: Sequence[Sample],
    config: TrainConfig,
    stage: int,
    epochs: int,
    lr: float,
    weights: LossWeights,
    val: Sequence[Sample] | None,
    epoch_offset: int = 0,
) -> tuple[TrainLog, dict | None]:
    trainable = [p for p in model.parameters() if not p.frozen]
    opt = Adam(trainable, lr)
    out = TrainLog()
    best_state = None
    start = time.perf_counter()
    for e in range(epochs):
        _set_modes(model, stage)
        totals: list[float] = []
        comps: dict[str, list[float]] = {}
        seed = config.seed * 100_003 + epoch_offset + e
        for images, targets in batches(data, config.batch_size, seed=seed, shuffle=True):
            output = model(images)
            loss, parts = multitask_loss(output, targets, weights, stage)
            value = loss.item()
            if not np.isfinite(value):
                raise NumericalError(f"non-finite loss {value} in stage {stage}, epoch {e}")
            model.zero_grad()
            T.backward(loss)
            opt.step()
            if not all(np.all(np.isfinite(p.data)) for p in trainable):
                raise NumericalError(f"non-finite parameters after a step in stage {stage}, epoch {e}")
            totals.append(value)
            for k, v in parts.items():
                comps.setdefault(k, []).append(v)
        rec = EpochRecord(
            stage=stage,
            epoch=epoch_offset + e,
            loss=float(np.mean(totals)),
            components={k: float(np.mean(v)) for k, v in comps.items()},
        )
        if val:
            report = evaluate(model, val)
            rec.val = report.to_dict()
            if out.best_p is None or report.p_score > out.best_p:
                out.best_p, out.best_epoch = report.p_score, rec.epoch
                best_state = model.state_dict()
        log.info("stage %d epoch %d loss %.5f", stage, rec.epoch, rec.loss)
        out.epochs.append(rec)
    out.wall_clock = time.perf_counter() - start
    model.eval()
    return out, best_state


def train_stage1(model, data, config: TrainConfig, val=None, task: str | None = None):
    """Heads only; backbone, attention and GDConv stay frozen."""
    set_trainable(model, ["heads"], TASKS if task is None else (task,))
    weights = _task_weights(config, task)
    return _run_stage(model, data, config, 1, config.stage1_epochs, config.learning_rate_stage1, weights, val)


def train_stage2(model, data, config: TrainConfig, val=None, task: str | None = None):
    """All groups trainable; in multitask mode the attention term is active."""
    set_trainable(model, ["backbone", "dda", "gdconv", "heads"], TASKS if task is None else (task,))
    weights = _task_weights(config, task)
    return _run_stage(
        model,
        data,
        config,
        2,
        config.stage2_epochs,
        config.learning_rate_stage2,
        weights,
        val,
        epoch_offset=config.stage1_epochs,
    )


def train_single_task(model, data, config: TrainConfig, task: str, val=None):
    """Both stages, optimizing one task's loss; the other heads never update."""
    if task not in TASKS:
        raise ConfigError(f"unknown task {task!r}; expected one of {TASKS}")
    return train_two_stage(model, data, config, val=val, task=task)


def train_two_stage(model, data, config: TrainConfig, val=None, task: str | None = None):
    """Run stage 1 then stage 2; returns ``(model, TrainLog, best_state)``."""
    log1, best1 = train_stage1(model, data, config, val, task)
    log2, best2 = train_stage2(model, data, config, val, task)
    full = TrainLog()
    full.extend(log1)
    full.extend(log2)
    best = best2 if log2.best_p is not None and (log1.best_p is None or log2.best_p > log1.best_p) else best1
    set_trainable(model, ["backbone", "dda", "gdconv", "heads"])
    return model, full, best


# ---------------------------------------------------------------- evaluation


def predict(model: DdamfnModel, data: Sequence[Sample], chunk: int = 64):
    """Eval-mode predictions: (va [N,2], expression argmax [N], AU probs [N,12])."""
    if not data:
        raise ContractError("cannot evaluate on empty data")
    model.eval()
    va, expr, au = [], [], []
    with T.no_grad():
        for start in range(0, len(data), chunk):
            images = Tensor(np.stack([s.image for s in data[start : start + chunk]]))
            out = model(images)
            va.append(out.va.data)
            expr.append(np.argmax(out.expr_logits.data, axis=1))
            au.append(T.sigmoid(out.au_logits).data)
    return np.concatenate(va), np.concatenate(expr), np.concatenate(au)


def evaluate(model: DdamfnModel, data: Sequence[Sample], thresholds: ThresholdSet | None = None) -> MetricReport:
    thresholds = thresholds or ThresholdSet()
    va, expr, au = predict(model, data)
    truth = stack_targets([s.record for s in data])
    return compute_report(va, truth.va, expr, truth.expr, au, truth.au, thresholds.values)


# ---------------------------------------------------------------- checkpoints


def save_model(path, model: DdamfnModel, extra: dict | None = None) -> None:
    meta = {"model": model.config.to_dict()}
    meta.update(extra or {})
    save_checkpoint(path, model, meta, group_of)


def load_model(path) -> DdamfnModel:
    meta, state, _ = read_checkpoint(path)
    model = DdamfnModel(ModelConfig(**meta["model"]), seed=None)
    model.load_state_dict(state)
    model.eval()
    return model
