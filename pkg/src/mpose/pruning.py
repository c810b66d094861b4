"""Magnitude pruning baseline with coordinate-list sparse storage."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, FormatError, InfeasibleError, ShapeError
from .nn import Model, weight_names
from .train import SequenceData, TrainConfig, train_loop

log = logging.getLogger(__name__)


def survivor_count(numel: int, sparsity: float) -> int:
    """``ceil((1 - sparsity) * numel)``, ignoring float noise below 1e-9."""
    return int(math.ceil(round((1.0 - sparsity) * numel, 9)))


def prune_to_sparsity(weights, sparsity: float) -> np.ndarray:
    """Boolean keep-mask zeroing the smallest-magnitude entries.

    Among equal magnitudes the earliest flat index is pruned first.
    """
    if not 0 <= sparsity < 1:
        raise ConfigError(f"sparsity must be in [0, 1), got {sparsity}")
    w = np.asarray(weights)
    flat = np.abs(w).reshape(-1)
    n_prune = flat.size - survivor_count(flat.size, sparsity)
    keep = np.ones(flat.size, dtype=bool)
    if n_prune > 0:
        # lexsort: last key is primary -> magnitude, then index
        order = np.lexsort((np.arange(flat.size), flat))
        keep[order[:n_prune]] = False
    return keep.reshape(w.shape)


def sparsity_of(mask) -> float:
    mask = np.asarray(mask)
    return 1.0 - np.count_nonzero(mask) / mask.size


@dataclass
class SparseMatrix:
    values: np.ndarray
    rows: np.ndarray
    cols: np.ndarray
    shape: tuple

    def __post_init__(self):
        if not (len(self.values) == len(self.rows) == len(self.cols)):
            raise FormatError("sparse arrays differ in length")
        if len(self.rows) and (self.rows.min() < 0 or self.rows.max() >= self.shape[0]
                               or self.cols.min() < 0 or self.cols.max() >= self.shape[1]):
            raise FormatError("sparse coordinates out of bounds")
        flat = self.rows.astype(np.int64) * self.shape[1] + self.cols
        if np.unique(flat).size != flat.size:
            raise FormatError("duplicate sparse coordinates")

    @property
    def nnz(self) -> int:
        return len(self.values)

    def storage_entries(self) -> int:
        """Stored numbers: one value plus two coordinates per nonzero."""
        return 3 * self.nnz


def to_sparse(weights, mask=None) -> SparseMatrix:
    w = np.asarray(weights)
    if w.ndim != 2:
        raise ShapeError(f"expected a matrix, got shape {w.shape}")
    if mask is not None:
        w = w * mask
    rows, cols = np.nonzero(w)
    return SparseMatrix(w[rows, cols].copy(), rows.astype(np.int32), cols.astype(np.int32), w.shape)


def from_sparse(s: SparseMatrix, dtype=None) -> np.ndarray:
    out = np.zeros(s.shape, dtype=dtype or s.values.dtype)
    out[s.rows, s.cols] = s.values
    return out


def prune_model(model: Model, sparsity: float) -> dict:
    """Masks for every weight matrix at ``sparsity``; applies them in place."""
    masks = {}
    for name in weight_names(model.spec):
        masks[name] = prune_to_sparsity(model.params[name], sparsity)
        model.params[name] *= masks[name]
    model.masks = masks
    return masks


def iterative_prune_train(model: Model, target_rate: float, data: SequenceData | None,
                          increments: int = 5, epochs_per_increment: int = 3,
                          config: TrainConfig | None = None):
    """Raise weight sparsity to ``1 - 1/target_rate`` in equal steps, retraining in between.

    Returns ``(model, histories)``. Biases are never pruned.
    """
    if any(l.kind not in ("dense", "lstm") for l in model.spec.layers):
        raise ConfigError("pruning needs a dense model")
    if not target_rate >= 1:
        raise InfeasibleError(f"compression rate {target_rate} is below 1")
    final = 1.0 - 1.0 / target_rate
    if final >= 1:
        raise InfeasibleError(f"rate {target_rate} needs sparsity {final}")
    histories = []
    base = config or TrainConfig()
    for k in range(1, increments + 1):
        sparsity = final * k / increments
        prune_model(model, sparsity)
        log.info("pruning increment %d/%d: sparsity %.4f", k, increments, sparsity)
        if data is not None and epochs_per_increment > 0:
            cfg = TrainConfig(**{**base.__dict__, "epochs": epochs_per_increment})
            model, history, _ = train_loop(model, data, cfg)
            histories.append(history)
    return model, histories


def surviving_weights(model: Model) -> int:
    return sum(int(np.count_nonzero(model.params[n])) for n in weight_names(model.spec))
