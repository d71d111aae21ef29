"""Seeded synthetic-data trainer that emits real loss traces.

Gaussian blobs, a linear softmax classifier (plus an optional linear
regression head for the two-component ``multitask`` task) and plain
mini-batch SGD with analytic gradients. After every epoch each evaluation
sample's loss is computed at the end-of-epoch parameters and appended to a
trace.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Protocol

import numpy as np

from .trace_format import LabelMap, TraceRecord

TASKS = ("classify", "multitask")
_SPLIT_STREAMS = {"train": 0, "test": 1}
_TARGET_STREAM = 99
INIT_SCALE = 0.01


@dataclass(frozen=True)
class ToyTrainConfig:
    dim: int = 2
    n_classes: int = 4
    points_per_class: int = 100
    spread: float = 5.0
    noise_rate: float = 0.1
    epochs: int = 100
    learning_rate: float = 0.1
    batch_size: int = 16
    seed: int = 1
    task: str = "classify"
    target_noise: float = 0.25

    def __post_init__(self) -> None:
        for name in ("dim", "points_per_class", "epochs", "batch_size"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.n_classes < 2:
            raise ValueError("n_classes must be at least 2")
        if not 0.0 <= self.noise_rate < 1.0:
            raise ValueError("noise_rate must be in [0, 1)")
        if self.spread <= 0 or self.learning_rate < 0 or self.target_noise < 0:
            raise ValueError("spread must be positive; learning_rate, target_noise >= 0")
        if self.task not in TASKS:
            raise ValueError(f"task must be one of {TASKS}")

    @property
    def components(self) -> tuple[str, ...]:
        return ("loss",) if self.task == "classify" else ("local", "positive")


PRESETS = {
    "classify": ToyTrainConfig(),
    "multitask": ToyTrainConfig(task="multitask", learning_rate=0.05),
}


@dataclass
class ToyDataset:
    x: np.ndarray
    y: np.ndarray
    noise_flags: np.ndarray
    targets: np.ndarray
    seed: int
    ids: list[str] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.y)

    @property
    def points(self) -> list[tuple[np.ndarray, int]]:
        return [(self.x[i], int(self.y[i])) for i in range(len(self))]

    def label_map(self) -> LabelMap:
        return LabelMap.from_labels({sid: str(int(y)) for sid, y in zip(self.ids, self.y)})

    def noisy_ids(self) -> list[str]:
        return [sid for sid, flag in zip(self.ids, self.noise_flags) if flag]


def _centers(config: ToyTrainConfig) -> np.ndarray:
    centers = np.zeros((config.n_classes, config.dim))
    if config.dim == 1:
        centers[:, 0] = config.spread * np.arange(config.n_classes)
    else:
        angles = 2 * np.pi * np.arange(config.n_classes) / config.n_classes
        centers[:, 0] = config.spread * np.cos(angles)
        centers[:, 1] = config.spread * np.sin(angles)
    return centers


def generate_blobs(config: ToyTrainConfig, split: str = "train") -> ToyDataset:
    """Equal-size isotropic unit-variance blobs around evenly spaced centers.

    Exactly ``round(noise_rate * n)`` labels are moved to a uniformly drawn
    other class. Each split draws from its own seeded stream.
    """
    if split not in _SPLIT_STREAMS:
        raise ValueError(f"split must be one of {tuple(_SPLIT_STREAMS)}")
    rng = np.random.default_rng([config.seed, _SPLIT_STREAMS[split]])
    C, d, per = config.n_classes, config.dim, config.points_per_class
    n = C * per

    y_clean = np.repeat(np.arange(C), per)
    x = _centers(config)[y_clean] + rng.standard_normal((n, d))

    y = y_clean.copy()
    flags = np.zeros(n, dtype=bool)
    n_flip = int(round(config.noise_rate * n))
    if n_flip:
        idx = rng.choice(n, size=n_flip, replace=False)
        y[idx] = (y[idx] + rng.integers(1, C, size=n_flip)) % C
        flags[idx] = True

    # the regression function is shared across splits
    coef = np.random.default_rng([config.seed, _TARGET_STREAM]).standard_normal(d)
    targets = x @ coef + config.target_noise * rng.standard_normal(n)

    width = max(5, len(str(n - 1)))
    ids = [f"{split}_{i:0{width}d}" for i in range(n)]
    return ToyDataset(x=x, y=y, noise_flags=flags, targets=targets, seed=config.seed, ids=ids)


@dataclass
class ModelParams:
    W: np.ndarray
    b: np.ndarray
    head_w: np.ndarray | None = None
    head_b: float | None = None

    @property
    def has_head(self) -> bool:
        return self.head_w is not None

    @classmethod
    def init(cls, config: ToyTrainConfig, rng: np.random.Generator) -> ModelParams:
        C, d = config.n_classes, config.dim
        W = rng.uniform(-INIT_SCALE, INIT_SCALE, size=(C, d))
        b = rng.uniform(-INIT_SCALE, INIT_SCALE, size=C)
        if config.task == "classify":
            return cls(W, b)
        head_w = rng.uniform(-INIT_SCALE, INIT_SCALE, size=d)
        head_b = float(rng.uniform(-INIT_SCALE, INIT_SCALE))
        return cls(W, b, head_w, head_b)

    def flat(self) -> np.ndarray:
        parts = [self.W.ravel(), self.b]
        if self.has_head:
            parts += [self.head_w, np.array([self.head_b])]
        return np.concatenate(parts)

    def with_flat(self, theta: np.ndarray) -> ModelParams:
        C, d = self.W.shape
        W = theta[: C * d].reshape(C, d).copy()
        b = theta[C * d : C * d + C].copy()
        if not self.has_head:
            return ModelParams(W, b)
        off = C * d + C
        return ModelParams(W, b, theta[off : off + d].copy(), float(theta[off + d]))

    def step(self, grad: ModelParams, lr: float) -> ModelParams:
        return self.with_flat(self.flat() - lr * grad.flat())

    def is_finite(self) -> bool:
        return bool(np.all(np.isfinite(self.flat())))


def _xent_batch(W: np.ndarray, b: np.ndarray, X: np.ndarray, Y: np.ndarray):
    """Per-row cross-entropy losses and (softmax - onehot) residuals."""
    logits = X @ W.T + b
    shifted = logits - logits.max(axis=1, keepdims=True)
    expd = np.exp(shifted)
    denom = expd.sum(axis=1)
    rows = np.arange(len(Y))
    losses = np.log(denom) - shifted[rows, Y]
    delta = expd / denom[:, None]
    delta[rows, Y] -= 1.0
    return losses, delta


def _smooth_l1(r: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    a = np.abs(r)
    loss = np.where(a < 1.0, 0.5 * r * r, a - 0.5)
    dloss = np.where(a < 1.0, r, np.sign(r))
    return loss, dloss


def softmax_xent(params: ModelParams, x: np.ndarray, y: int) -> tuple[float, ModelParams]:
    """Cross-entropy of softmax(Wx + b) at class y, with its analytic gradient."""
    x = np.asarray(x, dtype=float)
    losses, delta = _xent_batch(params.W, params.b, x[None, :], np.array([y]))
    grad = ModelParams(np.outer(delta[0], x), delta[0].copy())
    if params.has_head:
        grad.head_w = np.zeros_like(params.head_w)
        grad.head_b = 0.0
    return float(losses[0]), grad


def multitask_loss(
    params: ModelParams, x: np.ndarray, y: int, t: float
) -> tuple[float, dict[str, float], ModelParams]:
    """Classification plus smooth-L1 regression; returns (total, components, grad)."""
    if not params.has_head:
        raise ValueError("multitask_loss needs parameters with a regression head")
    x = np.asarray(x, dtype=float)
    positive, grad = softmax_xent(params, x, y)
    r = float(x @ params.head_w) + params.head_b - t
    local_arr, dlocal = _smooth_l1(np.array([r]))
    local = float(local_arr[0])
    grad.head_w = float(dlocal[0]) * x
    grad.head_b = float(dlocal[0])
    return positive + local, {"local": local, "positive": positive}, grad


def batch_losses(params: ModelParams, data: ToyDataset, idx: np.ndarray | None = None):
    """Per-sample component losses for ``data`` (all rows, or ``idx``)."""
    X = data.x if idx is None else data.x[idx]
    Y = data.y if idx is None else data.y[idx]
    positive, delta = _xent_batch(params.W, params.b, X, Y)
    if not params.has_head:
        return {"loss": positive}, delta, None
    T = data.targets if idx is None else data.targets[idx]
    local, dlocal = _smooth_l1(X @ params.head_w + params.head_b - T)
    return {"local": local, "positive": positive}, delta, dlocal


def _batch_grad(params: ModelParams, data: ToyDataset, idx: np.ndarray) -> ModelParams:
    _, delta, dlocal = batch_losses(params, data, idx)
    X = data.x[idx]
    n = len(idx)
    grad = ModelParams(delta.T @ X / n, delta.sum(axis=0) / n)
    if params.has_head:
        grad.head_w = dlocal @ X / n
        grad.head_b = float(dlocal.sum() / n)
    return grad


class RecordSink(Protocol):
    def write(self, record: TraceRecord) -> None: ...


class DivergenceError(ArithmeticError):
    pass


def train_and_trace(
    config: ToyTrainConfig,
    eval_set: ToyDataset,
    out: RecordSink,
    train_set: ToyDataset | None = None,
) -> ModelParams:
    """Train with mini-batch SGD and trace every eval sample's loss per epoch.

    Writes exactly ``epochs * len(eval_set) * len(components)`` records, in
    (sample, component) order within each epoch.
    """
    if len(eval_set) == 0:
        raise ValueError("eval_set is empty")
    if train_set is None:
        train_set = generate_blobs(config, "train")
    rng = np.random.default_rng([config.seed, 7])
    params = ModelParams.init(config, rng)
    n = len(train_set)
    order = sorted(range(len(eval_set)), key=lambda i: eval_set.ids[i])

    for epoch in range(config.epochs):
        perm = rng.permutation(n)
        # divergence is detected explicitly below
        with np.errstate(over="ignore", invalid="ignore"):
            for start in range(0, n, config.batch_size):
                idx = perm[start : start + config.batch_size]
                params = params.step(_batch_grad(params, train_set, idx), config.learning_rate)
            if not params.is_finite():
                raise DivergenceError(f"parameters diverged at epoch {epoch}")
            losses, _, _ = batch_losses(params, eval_set)
        for i in order:
            for component in sorted(losses):
                value = float(losses[component][i])
                if not math.isfinite(value):
                    raise DivergenceError(
                        f"non-finite {component} loss for {eval_set.ids[i]} at epoch {epoch}"
                    )
                out.write(TraceRecord(epoch, eval_set.ids[i], component, value))
    return params


def preset(name: str, **overrides) -> ToyTrainConfig:
    if name not in PRESETS:
        raise ValueError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
    return replace(PRESETS[name], **overrides)
