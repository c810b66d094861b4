"""Index bookkeeping between weight matrices and their high-order tensor view.

Dense tensors are plain numpy arrays in C (row-major) order. A matrix of shape
``I x J`` with factorizations ``I = I_1...I_N`` and ``J = J_1...J_N`` is viewed
as a rank-N tensor of shape ``(I_1 J_1, ..., I_N J_N)``: the row index ``i`` and
column index ``j`` are split into big-endian mixed-radix digits and the k-th
combined coordinate is ``i_k * J_k + j_k``.
"""
from __future__ import annotations

import math
from typing import Sequence

import numpy as np

from .errors import ShapeError


def check_factorization(factors: Sequence[int], dim: int | None = None) -> tuple[int, ...]:
    factors = tuple(int(f) for f in factors)
    if not factors or any(f < 1 for f in factors):
        raise ShapeError(f"factorization must be non-empty positive integers, got {factors}")
    if dim is not None and math.prod(factors) != dim:
        raise ShapeError(f"factors {factors} multiply to {math.prod(factors)}, expected {dim}")
    return factors


def mixed_radix_encode(index: int, radices: Sequence[int]) -> list[int]:
    """Split ``index`` into big-endian digits (first digit most significant)."""
    radices = check_factorization(radices)
    total = math.prod(radices)
    if not 0 <= index < total:
        raise IndexError(f"index {index} outside [0, {total})")
    digits = [0] * len(radices)
    for k in range(len(radices) - 1, -1, -1):
        index, digits[k] = divmod(index, radices[k])
    return digits


def mixed_radix_decode(digits: Sequence[int], radices: Sequence[int]) -> int:
    radices = check_factorization(radices)
    if len(digits) != len(radices):
        raise ShapeError(f"{len(digits)} digits for {len(radices)} radices")
    index = 0
    for d, r in zip(digits, radices):
        if not 0 <= d < r:
            raise IndexError(f"digit {d} outside [0, {r})")
        index = index * r + d
    return index


def matrix_to_mpo_tensor(w: np.ndarray, fi: Sequence[int], fj: Sequence[int]) -> np.ndarray:
    """Reshape-and-transpose an ``I x J`` matrix into shape ``(I_1 J_1, ..., I_N J_N)``."""
    w = np.asarray(w)
    if w.ndim != 2:
        raise ShapeError(f"expected a matrix, got shape {w.shape}")
    fi = check_factorization(fi, w.shape[0])
    fj = check_factorization(fj, w.shape[1])
    if len(fi) != len(fj):
        raise ShapeError(f"row and column factorizations differ in length: {fi} vs {fj}")
    n = len(fi)
    t = w.reshape(fi + fj)
    # (i_1..i_N, j_1..j_N) -> (i_1, j_1, i_2, j_2, ...)
    order = [ax for k in range(n) for ax in (k, n + k)]
    t = np.ascontiguousarray(t.transpose(order))
    return t.reshape(tuple(a * b for a, b in zip(fi, fj)))


def mpo_tensor_to_matrix(t: np.ndarray, fi: Sequence[int], fj: Sequence[int]) -> np.ndarray:
    t = np.asarray(t)
    fi = check_factorization(fi)
    fj = check_factorization(fj)
    if len(fi) != len(fj):
        raise ShapeError(f"row and column factorizations differ in length: {fi} vs {fj}")
    expected = tuple(a * b for a, b in zip(fi, fj))
    if t.shape != expected:
        raise ShapeError(f"tensor shape {t.shape} does not match {expected}")
    n = len(fi)
    t = t.reshape([d for pair in zip(fi, fj) for d in pair])
    order = list(range(0, 2 * n, 2)) + list(range(1, 2 * n, 2))
    t = np.ascontiguousarray(t.transpose(order))
    return t.reshape(math.prod(fi), math.prod(fj))
