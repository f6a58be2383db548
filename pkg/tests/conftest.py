import contextlib

import numpy as np
import pytest

from multitask_affect import tensor as T
from multitask_affect.model import DdamfnModel, ModelConfig

TINY = ModelConfig(image_size=8, channels=(4, 8), n_heads=2)
# central differences are meaningless across a kink; sample points closer
# than this to a PReLU hinge or a head-max tie are redrawn
KINK_MARGIN = 1e-3
# a derivative that cancels to roundoff (tiny but not exactly zero) makes the
# relative error pure finite-difference noise; such sample points are redrawn.
# exact zeros are structural (the function ignores that coordinate) and stay
FLAT_GRAD = 1e-10


@contextlib.contextmanager
def kink_monitor():
    """Record the smallest distance to a nondifferentiable point seen in forward passes."""
    seen = {"min": np.inf}
    orig_prelu, orig_max, orig_relu = T.prelu, T.maximum, T.relu

    def prelu(x, alpha):
        seen["min"] = min(seen["min"], float(np.abs(x.data).min()))
        return orig_prelu(x, alpha)

    def maximum(a, b):
        a, b = T._coerce_pair(a, b)
        seen["min"] = min(seen["min"], float(np.abs(a.data - b.data).min()))
        return orig_max(a, b)

    def relu(x):
        seen["min"] = min(seen["min"], float(np.abs(x.data).min()))
        return orig_relu(x)

    T.prelu, T.maximum, T.relu = prelu, maximum, relu
    try:
        yield seen
    finally:
        T.prelu, T.maximum, T.relu = orig_prelu, orig_max, orig_relu


def projection_loss(outputs, weights):
    """Scalar sum(out_i * w_i) over several tensors, giving well-scaled gradients."""
    total = None
    for out, w in zip(outputs, weights):
        term = T.sum(T.mul(out, w))
        total = term if total is None else T.add(total, term)
    return total


def randomize(module, rng, scale=0.3):
    for p in module.parameters():
        p.data = p.data + rng.normal(0.0, scale, p.shape)


def smooth_point(make, rng, tries=100):
    """Call ``make(rng)`` until its scalar function sits away from every kink
    and has no locally flat parameter coordinate.

    ``make`` returns ``(fn, params)``.
    """
    for _ in range(tries):
        fn, params = make(rng)
        with kink_monitor() as seen:
            loss = fn()
        if seen["min"] <= KINK_MARGIN:
            continue
        for p in params:
            p.grad = None
        T.backward(loss)
        flat = any(p.grad is not None and np.any((p.grad != 0) & (np.abs(p.grad) < FLAT_GRAD)) for p in params)
        for p in params:
            p.grad = None
        if not flat:
            return fn, params
    raise RuntimeError("no smooth sample point found")


def tiny_model_case(seed: int, batch: int = 2):
    """Randomized tiny model plus a projection loss over every output."""
    rng = np.random.default_rng(seed)

    def make(rng):
        model = DdamfnModel(TINY, seed=int(rng.integers(1 << 31)))
        randomize(model, rng)
        model.train()
        x = T.Tensor(rng.normal(size=(batch, 3, 8, 8)))
        with T.no_grad():
            out = model(x)
        tensors = lambda o: (o.va, o.expr_logits, o.au_logits, *o.attention_maps)  # noqa: E731
        ws = [rng.normal(size=t.shape) for t in tensors(out)]
        return (lambda: projection_loss(tensors(model(x)), ws)), model.parameters()

    return smooth_point(make, rng)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# ---------------------------------------------------------------- annotation fuzzing

VALID_VA = (-1.0, -0.5, 0.0, 0.25, 1.0)
BAD_VA = (-5.0, -1.0001, 1.5, -2.0)


def fuzz_record(rng, i):
    """A record whose fields are each valid, or a planted invalid marker, or just out of range."""
    from multitask_affect.dataset import AnnotationRecord

    def va():
        return float(rng.choice(BAD_VA)) if rng.random() < 0.1 else float(rng.choice(VALID_VA + (rng.uniform(-1, 1),)))

    r = rng.random()
    expr = -1 if r < 0.08 else (int(rng.choice([8, 9, -2])) if r < 0.12 else int(rng.integers(0, 8)))
    au = []
    for _ in range(12):
        r = rng.random()
        au.append(-1 if r < 0.01 else (2 if r < 0.012 else int(rng.integers(0, 2))))
    return AnnotationRecord(f"f{i:05d}", va(), va(), expr, tuple(au))


def oracle_reason(rec):
    """Brute-force validity, written independently of the library checks."""
    if rec.valence == -5 or rec.arousal == -5 or not (-1 <= rec.valence <= 1 and -1 <= rec.arousal <= 1):
        return "invalid_va"
    if rec.expression == -1 or rec.expression not in range(8):
        return "invalid_expr"
    if len(rec.au) != 12 or -1 in rec.au or not set(rec.au) <= {0, 1}:
        return "invalid_au"
    return None


# ---------------------------------------------------------------- threshold oracle

ORACLE_GRID = [round(0.05 * k, 2) for k in range(1, 20)]


def f1_loops(pred, truth):
    tp = sum(1 for p, t in zip(pred, truth) if p and t)
    fp = sum(1 for p, t in zip(pred, truth) if p and not t)
    fn = sum(1 for p, t in zip(pred, truth) if t and not p)
    return 0.0 if 2 * tp + fp + fn == 0 else 2 * tp / (2 * tp + fp + fn)


def threshold_oracle(probs, truth, grid=ORACLE_GRID):
    """Every grid value for every AU; strict improvement needed to move off the lowest."""
    chosen, best_f1 = [], []
    for j in range(len(probs[0])):
        col, y = [row[j] for row in probs], [row[j] for row in truth]
        best_t, best = None, -1.0
        for t in sorted(grid):
            f = f1_loops([p >= t for p in col], y)
            if f > best:
                best_t, best = t, f
        chosen.append(best_t)
        best_f1.append(best)
    return chosen, best_f1


def threshold_instance(rng):
    """Random AU predictions; half the instances sit exactly on grid values to exercise ties."""
    n = int(rng.integers(1, 33))
    probs = rng.random((n, 12))
    if rng.random() < 0.5:
        probs = np.round(probs * 20) / 20
    truth = (rng.random((n, 12)) < rng.uniform(0.1, 0.9)).astype(int)
    return probs, truth
