"""Matrix product operator (MPO) representation of weight matrices.

A matrix ``W`` of shape ``I x J`` with ``I = I_1...I_N`` and ``J = J_1...J_N``
is stored as N local tensors (cores), core k of shape
``(D_{k-1}, I_k, J_k, D_k)`` with ``D_0 = D_N = 1``. Cores are obtained by a
left-to-right TT-SVD and applied to inputs core by core without forming ``W``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import InfeasibleError, NumericError, ShapeError
from .linalg import svd
from .tensor_core import check_factorization, matrix_to_mpo_tensor, mpo_tensor_to_matrix


@dataclass(frozen=True)
class MpoPlan:
    fi: tuple[int, ...]
    fj: tuple[int, ...]
    bonds: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "fi", check_factorization(self.fi))
        object.__setattr__(self, "fj", check_factorization(self.fj))
        object.__setattr__(self, "bonds", tuple(int(d) for d in self.bonds))
        if not (len(self.fi) == len(self.fj) == len(self.bonds) - 1):
            raise ShapeError(
                f"plan lengths disagree: fi={self.fi} fj={self.fj} bonds={self.bonds}")
        if self.bonds[0] != 1 or self.bonds[-1] != 1:
            raise ShapeError(f"boundary bonds must be 1, got {self.bonds}")
        if any(d < 1 for d in self.bonds):
            raise ShapeError(f"bond dimensions must be positive, got {self.bonds}")

    @classmethod
    def uniform(cls, fi, fj, bond: int) -> "MpoPlan":
        n = len(fi)
        return cls(fi, fj, (1,) + (bond,) * (n - 1) + (1,))

    @classmethod
    def full_rank(cls, fi, fj) -> "MpoPlan":
        return cls(fi, fj, full_rank_bonds(fi, fj))

    @property
    def n_cores(self) -> int:
        return len(self.fi)

    @property
    def rows(self) -> int:
        return math.prod(self.fi)

    @property
    def cols(self) -> int:
        return math.prod(self.fj)

    def core_shapes(self) -> list[tuple[int, int, int, int]]:
        b = self.bonds
        return [(b[k], self.fi[k], self.fj[k], b[k + 1]) for k in range(self.n_cores)]

    def with_bonds(self, bonds) -> "MpoPlan":
        return MpoPlan(self.fi, self.fj, bonds)

    def to_dict(self) -> dict:
        return {"fi": list(self.fi), "fj": list(self.fj), "bonds": list(self.bonds)}

    @classmethod
    def from_dict(cls, d) -> "MpoPlan":
        return cls(d["fi"], d["fj"], d["bonds"])


def full_rank_bonds(fi, fj) -> tuple[int, ...]:
    """Smallest bonds at which TT-SVD is exact for every matrix."""
    dims = [a * b for a, b in zip(fi, fj)]
    bonds = [1]
    for k in range(len(dims) - 1):
        bonds.append(min(bonds[-1] * dims[k], math.prod(dims[k + 1:])))
    bonds.append(1)
    return tuple(bonds)


@dataclass(frozen=True)
class MpoMatrix:
    plan: MpoPlan
    cores: tuple[np.ndarray, ...] = field(repr=False)

    def __post_init__(self):
        cores = tuple(np.asarray(c) for c in self.cores)
        object.__setattr__(self, "cores", cores)
        shapes = self.plan.core_shapes()
        if len(cores) != len(shapes):
            raise ShapeError(f"{len(cores)} cores for a {len(shapes)}-core plan")
        for k, (c, s) in enumerate(zip(cores, shapes)):
            if c.shape != s:
                raise ShapeError(f"core {k} has shape {c.shape}, plan expects {s}")

    @property
    def shape(self) -> tuple[int, int]:
        return self.plan.rows, self.plan.cols

    def n_params(self) -> int:
        return sum(c.size for c in self.cores)


def param_count(plan: MpoPlan) -> int:
    return sum(math.prod(s) for s in plan.core_shapes())


def _check_matrix_plan(shape, plan: MpoPlan):
    if tuple(shape) != (plan.rows, plan.cols):
        raise ShapeError(f"matrix shape {tuple(shape)} does not match plan {plan.rows}x{plan.cols}")


def decompose(w, plan: MpoPlan, svd_backend: str = "auto") -> MpoMatrix:
    """TT-SVD of ``w`` keeping at most ``plan.bonds[k]`` singular values per split.

    When a requested bond exceeds the rank available at that split the core
    is zero-padded so the cores always have the plan's shapes.
    """
    w = np.asarray(w, dtype=np.float64)
    if w.ndim != 2:
        raise ShapeError(f"expected a matrix, got shape {w.shape}")
    _check_matrix_plan(w.shape, plan)
    if not np.all(np.isfinite(w)):
        raise NumericError("non-finite entries in matrix to decompose")

    t = matrix_to_mpo_tensor(w, plan.fi, plan.fj)
    n = plan.n_cores
    cores = []
    rest = t.reshape(1, -1)
    r_prev = 1
    for k in range(n - 1):
        ik, jk = plan.fi[k], plan.fj[k]
        rest = rest.reshape(r_prev * ik * jk, -1)
        u, s, vt = svd(rest, svd_backend)
        r = min(plan.bonds[k + 1], s.size)
        core = u[:, :r].reshape(r_prev, ik, jk, r)
        cores.append(_pad_core(core, plan.core_shapes()[k]))
        rest = s[:r, None] * vt[:r]
        r_prev = r
    core = rest.reshape(r_prev, plan.fi[-1], plan.fj[-1], 1)
    cores.append(_pad_core(core, plan.core_shapes()[-1]))
    return MpoMatrix(plan, tuple(cores))


def _pad_core(core, shape):
    if core.shape == shape:
        return np.ascontiguousarray(core)
    out = np.zeros(shape)
    out[: core.shape[0], :, :, : core.shape[3]] = core
    return out


def reconstruct(m: MpoMatrix) -> np.ndarray:
    """Dense ``I x J`` matrix from the cores."""
    plan = m.plan
    acc = np.ones((1, 1))  # (combined index so far, bond)
    for core in m.cores:
        d0, ik, jk, d1 = core.shape
        acc = acc @ core.reshape(d0, ik * jk * d1)
        acc = acc.reshape(-1, d1)
    t = acc.reshape([a * b for a, b in zip(plan.fi, plan.fj)])
    return mpo_tensor_to_matrix(t, plan.fi, plan.fj)


def materialize(cores: Sequence[np.ndarray], plan: MpoPlan):
    """Dense matrix from raw cores plus the partial products needed by
    :func:`materialize_backward`."""
    acc = np.ones((1, 1), dtype=cores[0].dtype)
    saved = []
    for core in cores:
        d0, ik, jk, d1 = core.shape
        saved.append(acc)
        acc = (acc @ core.reshape(d0, ik * jk * d1)).reshape(-1, d1)
    t = acc.reshape([a * b for a, b in zip(plan.fi, plan.fj)])
    return mpo_tensor_to_matrix(t, plan.fi, plan.fj), saved


def materialize_backward(cores: Sequence[np.ndarray], plan: MpoPlan, saved, dw: np.ndarray):
    """Core gradients of ``sum(dw * materialize(cores))``."""
    grads = [None] * len(cores)
    dacc = matrix_to_mpo_tensor(dw, plan.fi, plan.fj).reshape(-1, 1)
    for k in range(len(cores) - 1, -1, -1):
        d0, ik, jk, d1 = cores[k].shape
        prev = saved[k]
        da = dacc.reshape(prev.shape[0], ik * jk * d1)
        grads[k] = (prev.T @ da).reshape(d0, ik, jk, d1)
        dacc = da @ cores[k].reshape(d0, ik * jk * d1).T
    return grads


def materialize_cost(plan: MpoPlan) -> int:
    """Multiplications in :func:`materialize`."""
    total, p = 0, 1
    for d0, ik, jk, d1 in plan.core_shapes():
        total += p * d0 * ik * jk * d1
        p *= ik * jk
    return total


class MulCounter:
    """Tallies scalar multiplications performed by :func:`contract_batch`."""

    def __init__(self):
        self.count = 0

    def add(self, n: int):
        self.count += int(n)


def contract_batch(cores: Sequence[np.ndarray], plan: MpoPlan, x: np.ndarray,
                   counter: MulCounter | None = None, keep: bool = False):
    """Apply the MPO to each row of ``x`` (shape ``(B, J)``) -> ``(B, I)``.

    Cores are consumed left to right. The running tensor has shape
    ``(B * I_1...I_{k-1}, D_{k-1}, J_k, J_{k+1}...J_N)``; step k contracts the
    bond and ``J_k`` against core k. With ``keep=True`` the per-step operands
    are returned for :func:`contract_batch_backward`.
    """
    x = np.asarray(x)
    if x.ndim != 2 or x.shape[1] != plan.cols:
        raise ShapeError(f"input shape {x.shape} incompatible with {plan.cols} columns")
    b = x.shape[0]
    p = b
    r = plan.cols
    cur = x.reshape(p, 1, r)
    saved = []
    for k, core in enumerate(cores):
        d0, ik, jk, d1 = core.shape
        r //= jk
        a = cur.reshape(p, d0, jk, r).transpose(0, 3, 1, 2).reshape(p * r, d0 * jk)
        bm = core.transpose(0, 2, 1, 3).reshape(d0 * jk, ik * d1)
        out = a @ bm
        if counter is not None:
            counter.add(p * r * d0 * jk * ik * d1)
        if keep:
            saved.append(a)
        cur = out.reshape(p, r, ik, d1).transpose(0, 2, 3, 1)
        p *= ik
        cur = cur.reshape(p, d1, r)
    y = cur.reshape(b, plan.rows)
    return (y, saved) if keep else y


def contract_batch_backward(cores: Sequence[np.ndarray], plan: MpoPlan, saved, dy: np.ndarray):
    """Gradients of ``sum(dy * contract_batch(cores, x))`` w.r.t. ``x`` and every core."""
    b = dy.shape[0]
    n = plan.n_cores
    # bookkeeping of (p, r) per step, as in the forward pass
    steps = []
    p, r = b, plan.cols
    for core in cores:
        r //= core.shape[2]
        steps.append((p, r))
        p *= core.shape[1]
    grads = [None] * n
    cur = dy.reshape(p, 1, 1)
    for k in range(n - 1, -1, -1):
        core = cores[k]
        d0, ik, jk, d1 = core.shape
        p, r = steps[k]
        dout = cur.reshape(p, ik, d1, r).transpose(0, 3, 1, 2).reshape(p * r, ik * d1)
        a = saved[k]
        grads[k] = (a.T @ dout).reshape(d0, jk, ik, d1).transpose(0, 2, 1, 3)
        bm = core.transpose(0, 2, 1, 3).reshape(d0 * jk, ik * d1)
        da = dout @ bm.T
        cur = da.reshape(p, r, d0, jk).transpose(0, 2, 3, 1).reshape(p, d0, jk * r)
    dx = cur.reshape(b, plan.cols)
    return dx, [np.ascontiguousarray(g) for g in grads]


def contract(m: MpoMatrix, x, counter: MulCounter | None = None) -> np.ndarray:
    """Matrix-vector product ``W @ x`` computed from the cores."""
    x = np.asarray(x)
    if x.ndim != 1 or x.shape[0] != m.plan.cols:
        raise ShapeError(f"vector of length {x.shape} incompatible with {m.plan.cols} columns")
    return contract_batch(m.cores, m.plan, x[None, :], counter)[0]


@dataclass(frozen=True)
class CostReport:
    mpo: int
    dense: int

    @property
    def ratio(self) -> float:
        return self.mpo / self.dense


def contraction_cost(plan: MpoPlan) -> CostReport:
    """Multiplications per matrix-vector product in the :func:`contract_batch` order."""
    total = 0
    for k, (d0, ik, jk, d1) in enumerate(plan.core_shapes()):
        done_rows = math.prod(plan.fi[:k])
        left_cols = math.prod(plan.fj[k + 1:])
        total += done_rows * left_cols * d0 * jk * ik * d1
    return CostReport(total, plan.rows * plan.cols)


def compression_rate_linear(plan: MpoPlan, n_h: int, n_x: int, include_bias: bool = True) -> float:
    """Fraction of parameters kept by an MPO fully-connected layer (smaller is more compressed)."""
    if plan.rows != n_h or plan.cols != n_x:
        raise ShapeError(f"plan is {plan.rows}x{plan.cols}, layer is {n_h}x{n_x}")
    if include_bias:
        return (param_count(plan) + n_h) / (n_h * n_x + n_h)
    return param_count(plan) / (n_h * n_x)


@dataclass(frozen=True)
class LstmRates:
    rho_w: float
    rho_u: float
    rho_lstm: float


def compression_rate_lstm(plan_w: MpoPlan, plan_u: MpoPlan, n_h: int, n_x: int) -> LstmRates:
    if plan_w.rows != 4 * n_h or plan_w.cols != n_x:
        raise ShapeError(f"W plan is {plan_w.rows}x{plan_w.cols}, expected {4 * n_h}x{n_x}")
    if plan_u.rows != 4 * n_h or plan_u.cols != n_h:
        raise ShapeError(f"U plan is {plan_u.rows}x{plan_u.cols}, expected {4 * n_h}x{n_h}")
    pw, pu = param_count(plan_w), param_count(plan_u)
    return LstmRates(
        rho_w=pw / (4 * n_h * n_x),
        rho_u=pu / (4 * n_h * n_h),
        rho_lstm=(pw + pu + 4 * n_h) / (4 * n_h * n_x + 4 * n_h * n_h + 4 * n_h),
    )


def _capped(fi, fj, d):
    cap = full_rank_bonds(fi, fj)
    return tuple(min(d, c) for c in cap)


def solve_bond_dimension(fi, fj, target_rate: float, uniform: bool = True) -> tuple[int, ...]:
    """Bonds giving a weights-only compression of at least ``target_rate``.

    The uniform solution is the largest interior bond D (capped at the
    full-rank values) whose parameter count stays within ``I*J/target_rate``.
    With ``uniform=False`` the remaining budget is then spent greedily, one
    interior bond at a time from the left.
    """
    if not target_rate > 1:
        raise InfeasibleError(f"target rate must exceed 1, got {target_rate}")
    fi, fj = check_factorization(fi), check_factorization(fj)
    dense = math.prod(fi) * math.prod(fj)
    budget = dense / target_rate
    max_d = max(full_rank_bonds(fi, fj))
    best = None
    for d in range(1, max_d + 1):
        bonds = _capped(fi, fj, d)
        if param_count(MpoPlan(fi, fj, bonds)) <= budget:
            best = bonds
        else:
            break
    if best is None:
        raise InfeasibleError(f"no bond dimension reaches rate {target_rate} for {fi}x{fj}")
    if uniform:
        return best
    cap = full_rank_bonds(fi, fj)
    bonds = list(best)
    grown = True
    while grown:
        grown = False
        for k in range(1, len(bonds) - 1):
            if bonds[k] >= cap[k]:
                continue
            bonds[k] += 1
            if param_count(MpoPlan(fi, fj, bonds)) <= budget:
                grown = True
            else:
                bonds[k] -= 1
    return tuple(bonds)
