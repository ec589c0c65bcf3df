"""Training harness: weighted cross-entropy, Adam, channel masking, best-by-dev-loss selection."""

from __future__ import annotations

import time
from dataclasses import asdict, dataclass, field, fields
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import ops
from .model import BONA, SPOOF, ConfigError, RawGatST, mask_rows
from .tensor import Tensor, no_grad

LABEL_INDEX = {"bonafide": BONA, "spoof": SPOOF}


class TrainingDiverged(FloatingPointError):
    """Raised when a loss or gradient stops being finite."""


@dataclass
class TrainConfig:
    lr: float = 1e-4
    batch_size: int = 10
    epochs: int = 50
    wce_bona: float = 9.0
    wce_spoof: float = 1.0
    mask_limit: int = 14
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def validate(self, num_channels: Optional[int] = None) -> "TrainConfig":
        if not self.lr >= 0.0:
            raise ConfigError(f"lr: must be >= 0, got {self.lr}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size: must be >= 1, got {self.batch_size}")
        if self.epochs < 1:
            raise ConfigError(f"epochs: must be >= 1, got {self.epochs}")
        if not (self.wce_bona > 0 and self.wce_spoof > 0):
            raise ConfigError("wce_bona/wce_spoof: class weights must be positive")
        if self.mask_limit < 0 or (num_channels is not None and self.mask_limit > num_channels):
            raise ConfigError(f"mask_limit: must lie in [0, {num_channels}], got {self.mask_limit}")
        if not (0.0 <= self.beta1 < 1.0 and 0.0 <= self.beta2 < 1.0 and self.eps > 0):
            raise ConfigError("beta1/beta2 must lie in [0, 1) and eps must be positive")
        return self

    @property
    def class_weights(self) -> Tuple[float, float]:
        """(bona, spoof)."""
        return self.wce_bona, self.wce_spoof

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        unknown = set(d) - {f.name for f in fields(cls)}
        if unknown:
            raise ConfigError(f"unknown train config key(s): {sorted(unknown)}")
        return cls(**d)


def label_indices(labels) -> np.ndarray:
    """Map "bonafide"/"spoof" tokens (or 0/1 class indices) to class indices."""
    out = []
    for lab in labels:
        if isinstance(lab, str):
            if lab not in LABEL_INDEX:
                raise ValueError(f"unknown label {lab!r}")
            out.append(LABEL_INDEX[lab])
        elif lab in (BONA, SPOOF):
            out.append(int(lab))
        else:
            raise ValueError(f"unknown label {lab!r}")
    return np.asarray(out, dtype=np.int64)


def wce_loss(logits: Tensor, labels, weights: Tuple[float, float] = (9.0, 1.0)) -> Tensor:
    """Mean over the batch of ``-w[label] * log_softmax(logits)[label]``.

    ``weights`` is (bona, spoof). The weights are not renormalised, so a batch
    of bona fide trials at uniform logits costs 9 log 2.
    """
    y = label_indices(labels)
    if y.size == 0:
        raise ValueError("wce_loss on an empty batch")
    if logits.ndim != 2 or logits.shape != (y.size, 2):
        raise ops.ShapeError(f"logits shape {logits.shape} does not match {y.size} labels")
    if not np.all(np.isfinite(logits.data)):
        raise TrainingDiverged("non-finite logits")
    w = np.zeros(logits.shape, dtype=logits.dtype)
    w[np.arange(y.size), y] = np.where(y == BONA, weights[0], weights[1])
    return -(ops.log_softmax(logits, axis=-1) * Tensor(w)).sum() * (1.0 / y.size)


def draw_mask(rng: np.random.Generator, n_rows: int, limit: int) -> Tuple[int, int]:
    """Width uniform on {0..limit}, then start uniform over the valid positions."""
    width = int(rng.integers(0, min(limit, n_rows) + 1))
    start = int(rng.integers(0, n_rows - width + 1))
    return start, width


def channel_mask(x: Tensor, rng: np.random.Generator, limit: int = 14) -> Tuple[Tensor, Tuple[int, int]]:
    """Zero one contiguous block of rows (axis -2), the same block for every batch item."""
    start, width = draw_mask(rng, x.shape[-2], limit)
    return (mask_rows(x, start, width) if width else x), (start, width)


@dataclass
class AdamState:
    m: List[np.ndarray]
    v: List[np.ndarray]
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_params(cls, params: Sequence[Tensor], beta1=0.9, beta2=0.999, eps=1e-8) -> "AdamState":
        return cls(
            [np.zeros_like(p.data, dtype=np.float64) for p in params],
            [np.zeros_like(p.data, dtype=np.float64) for p in params],
            0,
            beta1,
            beta2,
            eps,
        )


def adam_step(params: Sequence[Tensor], state: AdamState, lr: float, names: Optional[Sequence[str]] = None) -> None:
    """One bias-corrected Adam update from each parameter's ``.grad`` (None counts as zero)."""
    grads = []
    for i, p in enumerate(params):
        g = np.zeros_like(p.data) if p.grad is None else p.grad
        if not np.all(np.isfinite(g)):
            name = names[i] if names is not None else f"#{i}"
            bad = int(np.size(g) - np.count_nonzero(np.isfinite(g)))
            raise TrainingDiverged(f"non-finite gradient in parameter {name} ({bad} of {np.size(g)} entries)")
        grads.append(g)
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**state.step
    c2 = 1.0 - b2**state.step
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * np.square(g, dtype=np.float64)
        update = lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
        p.data = (p.data - update).astype(p.data.dtype, copy=False)


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    dev_loss: float
    wall_time: float
    improved: bool

    def format(self, with_time: bool = True) -> str:
        cols = [str(self.epoch), f"{self.train_loss:.8f}", f"{self.dev_loss:.8f}"]
        if with_time:
            cols.append(f"{self.wall_time:.2f}")
        cols.append("*" if self.improved else "")
        return "\t".join(cols).rstrip("\t")


LOG_HEADER = "epoch\ttrain_loss\tdev_loss\twall_s\tbest"


@dataclass
class TrainResult:
    history: List[EpochRecord] = field(default_factory=list)
    best_epoch: int = 0
    best_dev_loss: float = float("inf")
    initial_dev_loss: float = float("nan")


def stack_dataset(dataset) -> Tuple[np.ndarray, np.ndarray]:
    x = np.stack([np.asarray(u.samples) for u in dataset])
    y = label_indices([u.label for u in dataset])
    return x, y


def state_dict(model: RawGatST) -> Dict[str, np.ndarray]:
    """Copies of every parameter and buffer, keyed by dotted name."""
    state = {f"param:{n}": p.data.copy() for n, p in model.named_parameters()}
    state.update({f"buffer:{n}": b.copy() for n, b in model.named_buffers()})
    return state


def load_state_dict(model: RawGatST, state: Dict[str, np.ndarray]) -> None:
    params = dict(model.named_parameters())
    buffers = dict(model.named_buffers())
    expected = {f"param:{n}" for n in params} | {f"buffer:{n}" for n in buffers}
    if set(state) != expected:
        missing = sorted(expected - set(state))
        extra = sorted(set(state) - expected)
        raise ValueError(f"state mismatch: missing {missing[:3]}, unexpected {extra[:3]}")
    for n, p in params.items():
        arr = state[f"param:{n}"]
        if arr.shape != p.shape:
            raise ValueError(f"{n}: checkpoint shape {arr.shape} != model shape {p.shape}")
        p.data = arr.astype(p.dtype, copy=True)
    for n, b in buffers.items():
        arr = state[f"buffer:{n}"]
        if arr.shape != b.shape:
            raise ValueError(f"{n}: checkpoint shape {arr.shape} != model shape {b.shape}")
        b[...] = arr  # buffers are updated in place by batchnorm, keep identity


def evaluate_loss(model: RawGatST, x: np.ndarray, y: np.ndarray, weights, batch_size: int) -> float:
    was = model.training
    model.eval()
    total = 0.0
    try:
        with no_grad():
            for s in range(0, len(x), batch_size):
                logits = model(x[s : s + batch_size])
                total += wce_loss(logits, y[s : s + batch_size], weights).item() * len(x[s : s + batch_size])
    finally:
        model.train(was)
    return total / len(x)


def predict_logits(model: RawGatST, x: np.ndarray, batch_size: int = 10) -> np.ndarray:
    was = model.training
    model.eval()
    out = []
    try:
        with no_grad():
            for s in range(0, len(x), batch_size):
                out.append(model(np.asarray(x[s : s + batch_size], dtype=model.config.dtype)).data.astype(np.float64))
    finally:
        model.train(was)
    return np.concatenate(out, axis=0)


def train_step(model: RawGatST, xb: np.ndarray, yb: np.ndarray, state: AdamState, config: TrainConfig, rng, names):
    """Forward with a fresh channel mask, backward, Adam. Returns the batch loss."""
    mask = draw_mask(rng, model.config.frequency_rows, config.mask_limit)
    model.train()
    model.zero_grad()
    logits = model(xb, mask=mask if mask[1] else None)
    loss = wce_loss(logits, yb, config.class_weights)
    if not np.isfinite(loss.item()):
        raise TrainingDiverged(f"non-finite training loss {loss.item()}")
    loss.backward()
    adam_step(model.parameters(), state, config.lr, names)
    return loss.item()


def train(
    model: RawGatST,
    train_set,
    dev_set,
    config: TrainConfig,
    on_epoch: Optional[Callable[[EpochRecord], None]] = None,
    on_improve: Optional[Callable[[RawGatST, EpochRecord], None]] = None,
) -> TrainResult:
    """Train in place; afterwards the model holds the parameters of the best dev-loss epoch.

    ``on_improve`` is called whenever dev loss improves (used to write the
    checkpoint). On divergence :class:`TrainingDiverged` propagates after the
    model has been restored to the last good state.
    """
    config.validate(model.config.frequency_rows)
    if len(train_set) == 0 or len(dev_set) == 0:
        raise ValueError("training and dev sets must be non-empty")
    x_tr, y_tr = stack_dataset(train_set)
    x_dev, y_dev = stack_dataset(dev_set)
    if set(y_tr.tolist()) != {BONA, SPOOF}:
        raise ValueError("training set must contain both bona fide and spoof trials")
    dtype = model.config.dtype
    x_tr = x_tr.astype(dtype)
    x_dev = x_dev.astype(dtype)

    rng = np.random.default_rng(config.seed)
    names = [n for n, _ in model.named_parameters()]
    state = AdamState.for_params(model.parameters(), config.beta1, config.beta2, config.eps)
    result = TrainResult()
    result.initial_dev_loss = evaluate_loss(model, x_dev, y_dev, config.class_weights, config.batch_size)
    best_state = state_dict(model)

    for epoch in range(1, config.epochs + 1):
        t0 = time.perf_counter()
        order = rng.permutation(len(x_tr))
        total = 0.0
        try:
            for s in range(0, len(order), config.batch_size):
                idx = order[s : s + config.batch_size]
                total += train_step(model, x_tr[idx], y_tr[idx], state, config, rng, names) * len(idx)
            dev_loss = evaluate_loss(model, x_dev, y_dev, config.class_weights, config.batch_size)
            if not np.isfinite(dev_loss):
                raise TrainingDiverged(f"non-finite dev loss at epoch {epoch}")
        except FloatingPointError as exc:
            load_state_dict(model, best_state)
            raise TrainingDiverged(f"epoch {epoch}: {exc}") from exc
        improved = dev_loss < result.best_dev_loss
        rec = EpochRecord(epoch, total / len(order), dev_loss, time.perf_counter() - t0, improved)
        result.history.append(rec)
        if improved:
            result.best_dev_loss, result.best_epoch = dev_loss, epoch
            best_state = state_dict(model)
            if on_improve is not None:
                on_improve(model, rec)
        if on_epoch is not None:
            on_epoch(rec)

    load_state_dict(model, best_state)
    return result
