"""Named architectures and their MPO factorization plans.

``mlp`` and ``lstm`` are the full-size mask estimators (1024-1024-1024-512-
512-512-512-256 MLP on 4 stacked frames; three 512-unit LSTM layers plus a
256-unit output layer). Their factorizations and bond dimensions per rate are
fixed tables. ``mlp-desk`` and ``lstm-desk`` are smaller networks that reuse
the same factorization shapes and solve bond dimensions for the target rate;
they are what the desk-scale experiments train.
"""
from __future__ import annotations

import math

from .errors import ConfigError, InfeasibleError
from .mpo import MpoPlan, full_rank_bonds, param_count, solve_bond_dimension
from .nn import LayerSpec, ModelSpec

RATES = (0, 5, 10, 15, 20, 25, 50, 75, 100)
DROPOUT = 0.3

# (rows, cols) -> (fi, fj) for the MLP weight matrices
MLP_FACTORS = {
    (1024, 1024): ((4, 8, 8, 4), (4, 8, 8, 4)),
    (512, 1024): ((4, 4, 8, 4), (4, 8, 8, 4)),
    (512, 512): ((4, 4, 8, 4), (4, 4, 8, 4)),
    (256, 512): ((4, 4, 4, 4), (4, 4, 8, 4)),
}
MLP_BOND_GROUP = {(1024, 1024): 0, (512, 1024): 1, (512, 512): 2, (256, 512): 3}
MLP_BONDS = {
    5: (32, 32, 34, 36),
    10: (23, 23, 23, 23),
    15: (19, 19, 19, 19),
    20: (16, 18, 16, 18),
    25: (15, 13, 15, 15),
    50: (10, 12, 10, 10),
    75: (8, 10, 8, 9),
    100: (7, 8, 7, 8),
}

# solution -> per layer (W factors, U factors); the FC layer has no U
LSTM_SOLUTIONS = {
    "A": [
        (((16, 128), (4, 64)), ((16, 128), (4, 128))),
        (((16, 128), (4, 128)), ((16, 128), (4, 128))),
        (((16, 128), (4, 128)), ((16, 128), (4, 128))),
        (((4, 64), (4, 128)), None),
    ],
    "B": [
        (((64, 32), (16, 16)), ((64, 32), (16, 32))),
        (((64, 32), (16, 32)), ((64, 32), (16, 32))),
        (((64, 32), (16, 32)), ((64, 32), (16, 32))),
        (((16, 16), (16, 32)), None),
    ],
    "C": [
        (((8, 8, 8, 4), (4, 4, 4, 4)), ((8, 8, 8, 4), (4, 4, 8, 4))),
        (((8, 8, 8, 4), (4, 4, 8, 4)), ((8, 8, 8, 4), (4, 4, 8, 4))),
        (((8, 8, 8, 4), (4, 4, 8, 4)), ((8, 8, 8, 4), (4, 4, 8, 4))),
        (((4, 4, 4, 4), (4, 4, 8, 4)), None),
    ],
}
LSTM_SOLUTION_BY_RATE = {5: "A", 10: "B", 15: "B", 20: "B", 25: "C", 50: "C", 75: "C", 100: "C"}
LSTM_BONDS = {
    5: (14, 14, 14, 12),
    10: (47, 47, 47, 47),
    15: (31, 31, 31, 31),
    20: (24, 24, 24, 24),
    25: (20, 20, 20, 20),
    50: (14, 14, 14, 13),
    75: (12, 11, 11, 11),
    100: (10, 9, 10, 9),
}

MLP_UNITS = (1024, 1024, 1024, 512, 512, 512, 512, 256)
MLP_DESK_UNITS = (1024, 512, 512, 256)
LSTM_HIDDEN = 512
FEATURE_DIM = 256
MLP_CONTEXT = 4

# desk LSTM: 256 -> LSTM(128) -> LSTM(128) -> FC(256)
LSTM_DESK_HIDDEN = 128
LSTM_DESK_FACTORS = {
    (512, 256): ((8, 8, 8), (4, 8, 8)),
    (512, 128): ((8, 8, 8), (4, 4, 8)),
    (256, 128): ((4, 8, 8), (4, 4, 8)),
}

ARCHITECTURES = ("mlp", "lstm", "mlp-desk", "lstm-desk")


def _check_rate(rate):
    if rate not in RATES:
        raise ConfigError(f"unsupported compression rate {rate}; choose from {RATES}")


def _mlp(units, plans_for, name):
    layers = []
    n = len(units) - 1
    for k in range(n):
        n_in, n_out = units[k], units[k + 1]
        act = "sigmoid" if k == n - 1 else "relu"
        drop = DROPOUT if k > 0 else 0.0
        plan = plans_for(n_out, n_in)
        kind = "dense" if plan is None else "mpo"
        layers.append(LayerSpec(kind, n_in, n_out, act, drop, plan=plan))
    return ModelSpec("mlp", layers, FEATURE_DIM, MLP_CONTEXT, name)


def mlp_preset(rate: int) -> ModelSpec:
    _check_rate(rate)

    def plans_for(rows, cols):
        if rate == 0:
            return None
        fi, fj = MLP_FACTORS[(rows, cols)]
        return MpoPlan.uniform(fi, fj, MLP_BONDS[rate][MLP_BOND_GROUP[(rows, cols)]])

    return _mlp(MLP_UNITS, plans_for, f"mlp-r{rate}")


def mlp_desk_preset(rate: float) -> ModelSpec:
    def plans_for(rows, cols):
        if rate == 0:
            return None
        fi, fj = MLP_FACTORS[(rows, cols)]
        return MpoPlan(fi, fj, solve_bond_dimension(fi, fj, rate))

    return _mlp(MLP_DESK_UNITS, plans_for, f"mlp-desk-r{rate:g}")


def lstm_preset(rate: int) -> ModelSpec:
    _check_rate(rate)
    layers = []
    n_in = FEATURE_DIM
    if rate == 0:
        for k in range(3):
            layers.append(LayerSpec("lstm", n_in, LSTM_HIDDEN, dropout=DROPOUT if k else 0.0))
            n_in = LSTM_HIDDEN
        layers.append(LayerSpec("dense", LSTM_HIDDEN, FEATURE_DIM, "sigmoid", DROPOUT))
        return ModelSpec("lstm", layers, FEATURE_DIM, 1, "lstm-r0")
    solution = LSTM_SOLUTIONS[LSTM_SOLUTION_BY_RATE[rate]]
    bonds = LSTM_BONDS[rate]
    for k, (wf, uf) in enumerate(solution):
        n_cores = len(wf[0])
        d = (1,) + (bonds[k],) * (n_cores - 1) + (1,)
        if uf is None:
            layers.append(LayerSpec("mpo", LSTM_HIDDEN, FEATURE_DIM, "sigmoid", DROPOUT,
                                    plan=MpoPlan(wf[0], wf[1], d)))
        else:
            layers.append(LayerSpec("mpo_lstm", n_in, LSTM_HIDDEN, dropout=DROPOUT if k else 0.0,
                                    plan_w=MpoPlan(wf[0], wf[1], d), plan_u=MpoPlan(uf[0], uf[1], d)))
            n_in = LSTM_HIDDEN
    return ModelSpec("lstm", layers, FEATURE_DIM, 1, f"lstm-r{rate}")


def solve_shared_bond(factor_pairs, target_rate: float) -> int:
    """Largest uniform bond D shared by several matrices whose combined
    weights-only compression reaches ``target_rate``."""
    dense = sum(math.prod(fi) * math.prod(fj) for fi, fj in factor_pairs)
    budget = dense / target_rate
    best = None
    top = max(max(full_rank_bonds(fi, fj)) for fi, fj in factor_pairs)
    for d in range(1, top + 1):
        total = sum(param_count(MpoPlan(fi, fj, _cap(fi, fj, d))) for fi, fj in factor_pairs)
        if total > budget:
            break
        best = d
    if best is None:
        raise InfeasibleError(f"no shared bond reaches rate {target_rate}")
    return best


def _cap(fi, fj, d):
    return tuple(min(d, c) for c in full_rank_bonds(fi, fj))


def lstm_desk_preset(rate: float) -> ModelSpec:
    h = LSTM_DESK_HIDDEN
    layers = []
    n_in = FEATURE_DIM
    for k in range(2):
        drop = DROPOUT if k else 0.0
        if rate == 0:
            layers.append(LayerSpec("lstm", n_in, h, dropout=drop))
        else:
            wf = LSTM_DESK_FACTORS[(4 * h, n_in)]
            uf = LSTM_DESK_FACTORS[(4 * h, h)]
            d = solve_shared_bond([wf, uf], rate)
            # the shared bond is capped by whichever matrix saturates first
            bonds = tuple(min(a, b) for a, b in zip(_cap(*wf, d), _cap(*uf, d)))
            layers.append(LayerSpec("mpo_lstm", n_in, h, dropout=drop,
                                    plan_w=MpoPlan(*wf, bonds), plan_u=MpoPlan(*uf, bonds)))
        n_in = h
    if rate == 0:
        layers.append(LayerSpec("dense", h, FEATURE_DIM, "sigmoid", DROPOUT))
    else:
        fi, fj = LSTM_DESK_FACTORS[(FEATURE_DIM, h)]
        layers.append(LayerSpec("mpo", h, FEATURE_DIM, "sigmoid", DROPOUT,
                                plan=MpoPlan(fi, fj, solve_bond_dimension(fi, fj, rate))))
    return ModelSpec("lstm", layers, FEATURE_DIM, 1, f"lstm-desk-r{rate:g}")


def build_from_preset(architecture: str, rate: float) -> ModelSpec:
    if architecture == "mlp":
        return mlp_preset(rate)
    if architecture == "lstm":
        return lstm_preset(rate)
    if architecture == "mlp-desk":
        return mlp_desk_preset(rate)
    if architecture == "lstm-desk":
        return lstm_desk_preset(rate)
    raise ConfigError(f"unknown architecture {architecture!r}; choose from {ARCHITECTURES}")


def dense_twin(spec: ModelSpec) -> ModelSpec:
    """Same architecture with every layer dense."""
    layers = []
    for l in spec.layers:
        kind = "lstm" if l.recurrent else "dense"
        layers.append(LayerSpec(kind, l.n_in, l.n_out, l.activation, l.dropout))
    return ModelSpec(spec.architecture, layers, spec.feature_dim, spec.context, spec.name + "-dense")


def full_rank_twin(spec: ModelSpec) -> ModelSpec:
    """Same factorizations as ``spec`` (or a default one for dense layers) at full-rank bonds."""
    layers = []
    for l in spec.layers:
        if l.kind == "mpo":
            layers.append(LayerSpec("mpo", l.n_in, l.n_out, l.activation, l.dropout,
                                    plan=MpoPlan.full_rank(l.plan.fi, l.plan.fj)))
        elif l.kind == "mpo_lstm":
            bw = full_rank_bonds(l.plan_w.fi, l.plan_w.fj)
            bu = full_rank_bonds(l.plan_u.fi, l.plan_u.fj)
            b = tuple(max(x, y) for x, y in zip(bw, bu))
            layers.append(LayerSpec("mpo_lstm", l.n_in, l.n_out, l.activation, l.dropout,
                                    plan_w=MpoPlan(l.plan_w.fi, l.plan_w.fj, b),
                                    plan_u=MpoPlan(l.plan_u.fi, l.plan_u.fj, b)))
        else:
            layers.append(l)
    return ModelSpec(spec.architecture, layers, spec.feature_dim, spec.context, spec.name + "-full")
