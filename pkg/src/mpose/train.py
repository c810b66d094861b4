"""Loss, gradients, Adam and the minibatch training loop."""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .errors import ConfigError, NumericError, ShapeError
from .nn import Model, ModelSpec, backward as nn_backward

log = logging.getLogger(__name__)


def mse_loss(estimate, target, weights=None) -> float:
    """Mean squared error over all frames and bins.

    ``weights`` (broadcastable to the frame axis) marks valid frames when
    sequences are padded; the mean is then over valid entries only.
    """
    estimate, target = np.asarray(estimate), np.asarray(target)
    if estimate.shape != target.shape:
        raise ShapeError(f"estimate {estimate.shape} vs target {target.shape}")
    diff = (estimate.astype(np.float64) - target) ** 2
    if weights is None:
        return float(diff.mean())
    w = np.broadcast_to(weights[..., None], diff.shape)
    return float((diff * w).sum() / w.sum())


def loss_and_grads(model: Model, x, target, weights=None, training=False, rng=None):
    """Forward, MSE loss, and reverse-mode gradients for every parameter."""
    y, tape = model.forward(x, training=training, rng=rng)
    if y.shape != np.shape(target):
        raise ShapeError(f"model output {y.shape} vs target {np.shape(target)}")
    loss = mse_loss(y, target, weights)
    if not np.isfinite(loss):
        raise NumericError("non-finite loss", layer=len(model.spec.layers) - 1)
    diff = y - target
    if weights is None:
        dy = 2.0 * diff / diff.size
    else:
        w = weights[..., None].astype(y.dtype)
        dy = 2.0 * diff * w / (w.sum() * diff.shape[-1])
    grads = nn_backward(model.spec, model.params, tape, dy.astype(y.dtype))
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise NumericError(f"non-finite gradient for {name}", layer=name.split(".")[0])
    return loss, grads


def backward(model: Model, x, target):
    """``(loss, grads)`` for one batch, evaluated without dropout."""
    return loss_and_grads(model, x, target)


# --------------------------------------------------------------------------
# optimizer


@dataclass
class Schedule:
    lr0: float = 5e-4
    decay: float = 0.95
    every: int = 4000  # 4000 for the MLP, 1000 for the LSTM

    def __call__(self, step: int) -> float:
        return self.lr0 * self.decay ** (step // self.every)


@dataclass
class AdamState:
    schedule: Schedule = field(default_factory=Schedule)
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    @property
    def lr(self) -> float:
        return self.schedule(self.step)


def adam_step(params: dict, grads: dict, state: AdamState, masks: dict | None = None):
    """In-place Adam update of ``params``; parameters without a gradient are skipped."""
    lr = state.lr
    state.step += 1
    t = state.step
    c1 = 1.0 - state.beta1 ** t
    c2 = 1.0 - state.beta2 ** t
    for name, g in grads.items():
        p = params[name]
        if name not in state.m:
            state.m[name] = np.zeros_like(p)
            state.v[name] = np.zeros_like(p)
        m, v = state.m[name], state.v[name]
        m *= state.beta1
        m += (1 - state.beta1) * g
        v *= state.beta2
        v += (1 - state.beta2) * g * g
        p -= (lr * (m / c1) / (np.sqrt(v / c2) + state.eps)).astype(p.dtype)
        if masks and name in masks:
            p *= masks[name]


# --------------------------------------------------------------------------
# data and loop


@dataclass
class SequenceData:
    """Normalized features and IRM targets, one ``(T, 256)`` pair per utterance."""

    features: list
    targets: list

    def __post_init__(self):
        if len(self.features) != len(self.targets):
            raise ShapeError("features and targets differ in utterance count")
        for f, t in zip(self.features, self.targets):
            if f.shape[0] != t.shape[0]:
                raise ShapeError(f"utterance with {f.shape[0]} feature frames and {t.shape[0]} target frames")

    def __len__(self):
        return len(self.features)

    def subset(self, idx) -> "SequenceData":
        return SequenceData([self.features[i] for i in idx], [self.targets[i] for i in idx])

    def n_frames(self) -> int:
        return sum(f.shape[0] for f in self.features)


class FrameBatcher:
    """Frame-level batches of stacked context windows for MLP training."""

    def __init__(self, data: SequenceData, context: int, dtype=np.float32):
        self.context = context
        d = data.features[0].shape[1]
        blocks, starts, lengths = [], [], []
        pos = 0
        for f in data.features:
            blocks.append(np.zeros((context - 1, d), dtype=dtype))
            blocks.append(f.astype(dtype))
            starts.append(pos + context - 1)
            lengths.append(f.shape[0])
            pos += context - 1 + f.shape[0]
        self.padded = np.concatenate(blocks)
        self.rows = np.concatenate([s + np.arange(n) for s, n in zip(starts, lengths)])
        self.targets = np.concatenate(data.targets).astype(dtype)

    def __len__(self):
        return self.rows.size

    def inputs(self, idx):
        window = self.rows[idx][:, None] + np.arange(-self.context + 1, 1)
        return self.padded[window].reshape(len(idx), -1)

    def batches(self, batch_size, rng=None):
        order = np.arange(len(self)) if rng is None else rng.permutation(len(self))
        for s in range(0, len(order), batch_size):
            idx = order[s:s + batch_size]
            yield self.inputs(idx), self.targets[idx], None


def sequence_batches(data: SequenceData, batch_size, rng=None, dtype=np.float32):
    """Utterance-level batches, zero-padded at the end, with a frame-validity weight."""
    order = np.arange(len(data)) if rng is None else rng.permutation(len(data))
    for s in range(0, len(order), batch_size):
        idx = order[s:s + batch_size]
        steps = max(data.features[i].shape[0] for i in idx)
        d_in = data.features[idx[0]].shape[1]
        d_out = data.targets[idx[0]].shape[1]
        x = np.zeros((len(idx), steps, d_in), dtype=dtype)
        y = np.zeros((len(idx), steps, d_out), dtype=dtype)
        w = np.zeros((len(idx), steps), dtype=dtype)
        for b, i in enumerate(idx):
            n = data.features[i].shape[0]
            x[b, :n] = data.features[i]
            y[b, :n] = data.targets[i]
            w[b, :n] = 1
        yield x, y, (None if w.all() else w)


@dataclass
class TrainConfig:
    epochs: int = 15
    batch_size: int = 0  # 0 -> 1280 frames (MLP) or 60 utterances (LSTM)
    lr: float = 5e-4
    lr_decay: float = 0.95
    decay_every: int = 0  # 0 -> 4000 (MLP) or 1000 (LSTM)
    dropout: Optional[float] = None  # None keeps the rates in the model spec
    clip: float = 5.0  # element-wise, LSTM models only; 0 disables
    seed: int = 0
    val_fraction: float = 0.1
    eval_batch: int = 4096
    track_train: bool = True  # full-pass training MSE each epoch

    def resolved(self, architecture: str) -> "TrainConfig":
        cfg = TrainConfig(**self.__dict__)
        if cfg.batch_size <= 0:
            cfg.batch_size = 1280 if architecture == "mlp" else 60
        if cfg.decay_every <= 0:
            cfg.decay_every = 4000 if architecture == "mlp" else 1000
        if cfg.epochs < 0:
            raise ConfigError("epochs must be non-negative")
        if not 0 <= cfg.val_fraction < 1:
            raise ConfigError("val_fraction must be in [0, 1)")
        return cfg


def split_validation(n: int, fraction: float, seed: int):
    rng = np.random.default_rng(seed)
    order = rng.permutation(n)
    n_val = int(round(fraction * n)) if n > 1 else 0
    return np.sort(order[n_val:]), np.sort(order[:n_val])


def evaluate_mse(model: Model, data: SequenceData, batch_size: int = 4096) -> float:
    """Mask MSE over every frame of ``data`` (no dropout)."""
    if len(data) == 0:
        return float("nan")
    total, count = 0.0, 0
    if model.spec.architecture == "mlp":
        batcher = FrameBatcher(data, model.spec.context, model.dtype)
        for x, y, _ in batcher.batches(batch_size):
            out, _ = model.forward(x)
            total += float(((out.astype(np.float64) - y) ** 2).sum())
            count += y.size
    else:
        for x, y, w in sequence_batches(data, max(1, batch_size // 512), dtype=model.dtype):
            out, _ = model.forward(x)
            sq = (out.astype(np.float64) - y) ** 2
            if w is not None:
                sq = sq * w[..., None]
                count += int(w.sum()) * y.shape[-1]
            else:
                count += y.size
            total += float(sq.sum())
    return total / count


@dataclass
class History:
    rows: list = field(default_factory=list)  # dicts with epoch, split, mse, lr

    def add(self, epoch, split, mse, lr):
        self.rows.append({"epoch": epoch, "split": split, "mse": mse, "lr": lr})

    def last(self, split):
        for r in reversed(self.rows):
            if r["split"] == split:
                return r["mse"]
        return None

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=["epoch", "split", "mse", "lr"])
            w.writeheader()
            for r in self.rows:
                w.writerow({**r, "mse": f"{r['mse']:.10g}", "lr": f"{r['lr']:.10g}"})


def train_loop(model: Model, data: SequenceData, config: TrainConfig | None = None,
               state: AdamState | None = None,
               on_step: Callable[[Model, AdamState], None] | None = None):
    """Train ``model`` in place; returns ``(model, history, state)``.

    Deterministic for a given seed. MLP models see shuffled frame batches,
    LSTM models shuffled utterance batches. ``model.masks`` (from pruning)
    are enforced after every update.
    """
    if len(data) == 0:
        raise ConfigError("empty training set")
    cfg = (config or TrainConfig()).resolved(model.spec.architecture)
    if cfg.dropout is not None:
        model.spec = ModelSpec.from_dict(model.spec.to_dict())
        for k, l in enumerate(model.spec.layers):
            l.dropout = cfg.dropout if k > 0 else 0.0
    spec = model.spec
    train_idx, val_idx = split_validation(len(data), cfg.val_fraction, cfg.seed)
    train, val = data.subset(train_idx), data.subset(val_idx)
    rng = np.random.default_rng(cfg.seed + 1)
    if state is None:
        state = AdamState(Schedule(cfg.lr, cfg.lr_decay, cfg.decay_every))
    history = History()
    is_mlp = spec.architecture == "mlp"
    clip = cfg.clip if not is_mlp else 0.0
    batcher = FrameBatcher(train, spec.context, model.dtype) if is_mlp else None

    for name, mask in model.masks.items():
        model.params[name] *= mask

    def record(epoch):
        if cfg.track_train:
            history.add(epoch, "train", evaluate_mse(model, train, cfg.eval_batch), state.lr)
        if len(val):
            history.add(epoch, "val", evaluate_mse(model, val, cfg.eval_batch), state.lr)

    record(0)
    for epoch in range(1, cfg.epochs + 1):
        if is_mlp:
            batches = batcher.batches(cfg.batch_size, rng)
        else:
            batches = sequence_batches(train, cfg.batch_size, rng, model.dtype)
        for x, y, w in batches:
            loss, grads = loss_and_grads(model, x, y, w, training=True, rng=rng)
            if clip:
                for g in grads.values():
                    np.clip(g, -clip, clip, out=g)
            for name, mask in model.masks.items():
                if name in grads:
                    grads[name] = grads[name] * mask
            adam_step(model.params, grads, state, model.masks)
            if on_step is not None:
                on_step(model, state)
        record(epoch)
        log.info("epoch %d train %s val %s lr %.3g", epoch, history.last("train"),
                 history.last("val"), state.lr)
    return model, history, state


# --------------------------------------------------------------------------
# gradient verification


def numerical_gradients(model: Model, x, target, eps: float = 1e-5) -> dict:
    """Central finite differences of the MSE loss for every parameter entry."""
    out = {}
    for name, p in model.params.items():
        g = np.zeros_like(p, dtype=np.float64)
        flat, gflat = p.reshape(-1), g.reshape(-1)
        for i in range(flat.size):
            old = flat[i]
            flat[i] = old + eps
            up = mse_loss(model.forward(x)[0], target)
            flat[i] = old - eps
            down = mse_loss(model.forward(x)[0], target)
            flat[i] = old
            gflat[i] = (up - down) / (2 * eps)
        out[name] = g
    return out


def gradient_check(model: Model, x, target, eps: float = 1e-5) -> dict:
    """Per-parameter relative error ``|a - n| / max(|a|, |n|)`` (2-norms) between
    analytic and finite-difference gradients."""
    _, analytic = loss_and_grads(model, x, target)
    numeric = numerical_gradients(model, x, target, eps)
    errors = {}
    for name, n in numeric.items():
        a = analytic.get(name, np.zeros_like(n))
        scale = max(np.linalg.norm(a), np.linalg.norm(n), 1e-30)
        errors[name] = float(np.linalg.norm(a - n) / scale)
    return errors
