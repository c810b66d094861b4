"""Layers and models for mask estimation.

Four layer kinds share one interface: dense and MPO fully-connected layers,
and dense and MPO LSTM layers whose gates are stacked as (i, f, o, g) in a
single ``4 N_h`` row transform. Parameters live in a flat ``name -> array``
dict owned by :class:`Model`; layers are stateless and return an explicit tape
from ``forward`` that ``backward`` consumes.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import mpo as mpo_ops
from .errors import ConfigError, NumericError, ShapeError
from .mpo import MpoMatrix, MpoPlan

ACTIVATIONS = ("sigmoid", "tanh", "relu", "identity")
LAYER_KINDS = ("dense", "mpo", "lstm", "mpo_lstm")


def sigmoid(x):
    # split by sign so exp never overflows
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    e = np.exp(x[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def activate(name: str, z):
    if name == "sigmoid":
        return sigmoid(z)
    if name == "tanh":
        return np.tanh(z)
    if name == "relu":
        return np.maximum(z, 0)
    if name == "identity":
        return z
    raise ConfigError(f"unknown activation {name!r}")


def activation_grad(name: str, y, dy):
    """Back-propagate ``dy`` through an activation given its output ``y``."""
    if name == "sigmoid":
        return dy * y * (1 - y)
    if name == "tanh":
        return dy * (1 - y * y)
    if name == "relu":
        return dy * (y > 0)
    return dy


# --------------------------------------------------------------------------
# declarative specs


@dataclass
class LayerSpec:
    kind: str
    n_in: int
    n_out: int  # hidden units N_h for the LSTM kinds
    activation: str = "identity"
    dropout: float = 0.0  # applied to this layer's input while training
    plan: Optional[MpoPlan] = None
    plan_w: Optional[MpoPlan] = None
    plan_u: Optional[MpoPlan] = None

    def __post_init__(self):
        if self.kind not in LAYER_KINDS:
            raise ConfigError(f"unknown layer kind {self.kind!r}")
        if self.activation not in ACTIVATIONS:
            raise ConfigError(f"unknown activation {self.activation!r}")
        if not 0 <= self.dropout < 1:
            raise ConfigError(f"dropout must be in [0, 1), got {self.dropout}")
        if self.kind == "mpo":
            if self.plan is None:
                raise ConfigError("mpo layer needs a plan")
            if (self.plan.rows, self.plan.cols) != (self.n_out, self.n_in):
                raise ShapeError(f"plan {self.plan.rows}x{self.plan.cols} vs layer {self.n_out}x{self.n_in}")
        if self.kind == "mpo_lstm":
            if self.plan_w is None or self.plan_u is None:
                raise ConfigError("mpo_lstm layer needs plan_w and plan_u")
            if (self.plan_w.rows, self.plan_w.cols) != (4 * self.n_out, self.n_in):
                raise ShapeError(f"W plan {self.plan_w.rows}x{self.plan_w.cols} vs {4 * self.n_out}x{self.n_in}")
            if (self.plan_u.rows, self.plan_u.cols) != (4 * self.n_out, self.n_out):
                raise ShapeError(f"U plan {self.plan_u.rows}x{self.plan_u.cols} vs {4 * self.n_out}x{self.n_out}")
            if self.plan_w.bonds != self.plan_u.bonds:
                raise ShapeError("W and U of one LSTM layer must share bond dimensions")

    @property
    def recurrent(self) -> bool:
        return self.kind in ("lstm", "mpo_lstm")

    def to_dict(self) -> dict:
        d = {"kind": self.kind, "n_in": self.n_in, "n_out": self.n_out,
             "activation": self.activation, "dropout": self.dropout}
        for key in ("plan", "plan_w", "plan_u"):
            p = getattr(self, key)
            if p is not None:
                d[key] = p.to_dict()
        return d

    @classmethod
    def from_dict(cls, d) -> "LayerSpec":
        d = dict(d)
        for key in ("plan", "plan_w", "plan_u"):
            if d.get(key) is not None:
                d[key] = MpoPlan.from_dict(d[key])
        return cls(**d)

    # parameter accounting -------------------------------------------------
    def dense_weight_count(self) -> int:
        if self.recurrent:
            return 4 * self.n_out * (self.n_in + self.n_out)
        return self.n_out * self.n_in

    def bias_count(self) -> int:
        return 4 * self.n_out if self.recurrent else self.n_out

    def weight_count(self) -> int:
        if self.kind == "mpo":
            return mpo_ops.param_count(self.plan)
        if self.kind == "mpo_lstm":
            return mpo_ops.param_count(self.plan_w) + mpo_ops.param_count(self.plan_u)
        return self.dense_weight_count()


@dataclass
class ModelSpec:
    architecture: str  # "mlp" or "lstm"
    layers: list
    feature_dim: int = 256
    context: int = 1  # frames concatenated per MLP input (prior frames + current)
    name: str = ""

    def __post_init__(self):
        if self.architecture not in ("mlp", "lstm"):
            raise ConfigError(f"unknown architecture {self.architecture!r}")
        if not self.layers:
            raise ConfigError("a model needs at least one layer")
        expected = self.feature_dim * self.context
        for k, layer in enumerate(self.layers):
            if layer.n_in != expected:
                raise ShapeError(f"layer {k} takes {layer.n_in} inputs, previous gives {expected}")
            if layer.recurrent and self.architecture != "lstm":
                raise ConfigError("recurrent layers need the lstm architecture")
            expected = layer.n_out

    @property
    def input_dim(self) -> int:
        return self.feature_dim * self.context

    @property
    def output_dim(self) -> int:
        return self.layers[-1].n_out

    def n_params(self) -> int:
        return sum(l.weight_count() + l.bias_count() for l in self.layers)

    def weight_params(self) -> int:
        return sum(l.weight_count() for l in self.layers)

    def dense_weight_params(self) -> int:
        return sum(l.dense_weight_count() for l in self.layers)

    def dense_params(self) -> int:
        return sum(l.dense_weight_count() + l.bias_count() for l in self.layers)

    def to_dict(self) -> dict:
        return {"architecture": self.architecture, "feature_dim": self.feature_dim,
                "context": self.context, "name": self.name,
                "layers": [l.to_dict() for l in self.layers]}

    @classmethod
    def from_dict(cls, d) -> "ModelSpec":
        d = dict(d)
        d["layers"] = [LayerSpec.from_dict(l) for l in d["layers"]]
        return cls(**d)


@dataclass
class CompressionReport:
    dense_params: int
    mpo_params: int
    rate: float  # dense / compressed, weights only
    rate_with_bias: float
    per_layer: list = field(default_factory=list)  # (layer index, rho with bias)


def compression_report(spec: ModelSpec) -> CompressionReport:
    per_layer = []
    for k, l in enumerate(spec.layers):
        if l.kind == "mpo":
            rho = mpo_ops.compression_rate_linear(l.plan, l.n_out, l.n_in, include_bias=True)
        elif l.kind == "mpo_lstm":
            rho = mpo_ops.compression_rate_lstm(l.plan_w, l.plan_u, l.n_out, l.n_in).rho_lstm
        else:
            rho = 1.0
        per_layer.append((k, rho))
    dense_w, w = spec.dense_weight_params(), spec.weight_params()
    return CompressionReport(dense_w, w, dense_w / w, spec.dense_params() / spec.n_params(), per_layer)


# --------------------------------------------------------------------------
# parameter names and initialization


def layer_param_shapes(k: int, l: LayerSpec) -> dict:
    shapes = {}
    if l.kind == "dense":
        shapes[f"{k}.weight"] = (l.n_out, l.n_in)
        shapes[f"{k}.bias"] = (l.n_out,)
    elif l.kind == "mpo":
        for c, s in enumerate(l.plan.core_shapes()):
            shapes[f"{k}.core{c}"] = s
        shapes[f"{k}.bias"] = (l.n_out,)
    elif l.kind == "lstm":
        shapes[f"{k}.W"] = (4 * l.n_out, l.n_in)
        shapes[f"{k}.U"] = (4 * l.n_out, l.n_out)
        shapes[f"{k}.b"] = (4 * l.n_out,)
    else:
        for c, s in enumerate(l.plan_w.core_shapes()):
            shapes[f"{k}.W.core{c}"] = s
        for c, s in enumerate(l.plan_u.core_shapes()):
            shapes[f"{k}.U.core{c}"] = s
        shapes[f"{k}.b"] = (4 * l.n_out,)
    return shapes


def weight_names(spec: ModelSpec) -> list[str]:
    """Names of weight (non-bias) parameters."""
    names = []
    for k, l in enumerate(spec.layers):
        names += [n for n in layer_param_shapes(k, l) if not n.endswith((".bias", ".b"))]
    return names


def _uniform(rng, shape, fan_in, fan_out):
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


def _mpo_init(rng, plan: MpoPlan, fan_in, fan_out):
    """Cores of a truncated TT-SVD of a fan-scaled random matrix, rescaled to its norm."""
    w = _uniform(rng, (plan.rows, plan.cols), fan_in, fan_out)
    m = mpo_ops.decompose(w, plan)
    approx = np.linalg.norm(mpo_ops.reconstruct(m))
    scale = (np.linalg.norm(w) / approx) ** (1.0 / plan.n_cores) if approx > 0 else 1.0
    return [c * scale for c in m.cores]


def init_params(spec: ModelSpec, rng: np.random.Generator, dtype=np.float32) -> dict:
    params = {}
    for k, l in enumerate(spec.layers):
        if l.kind == "dense":
            params[f"{k}.weight"] = _uniform(rng, (l.n_out, l.n_in), l.n_in, l.n_out)
            params[f"{k}.bias"] = np.zeros(l.n_out)
        elif l.kind == "mpo":
            for c, core in enumerate(_mpo_init(rng, l.plan, l.n_in, l.n_out)):
                params[f"{k}.core{c}"] = core
            params[f"{k}.bias"] = np.zeros(l.n_out)
        elif l.kind == "lstm":
            params[f"{k}.W"] = _uniform(rng, (4 * l.n_out, l.n_in), l.n_in, l.n_out)
            params[f"{k}.U"] = _uniform(rng, (4 * l.n_out, l.n_out), l.n_out, l.n_out)
            params[f"{k}.b"] = np.zeros(4 * l.n_out)
        else:
            for c, core in enumerate(_mpo_init(rng, l.plan_w, l.n_in, l.n_out)):
                params[f"{k}.W.core{c}"] = core
            for c, core in enumerate(_mpo_init(rng, l.plan_u, l.n_out, l.n_out)):
                params[f"{k}.U.core{c}"] = core
            params[f"{k}.b"] = np.zeros(4 * l.n_out)
    return {n: np.ascontiguousarray(p, dtype=dtype) for n, p in params.items()}


def zero_params(spec: ModelSpec, dtype=np.float64) -> dict:
    params = {}
    for k, l in enumerate(spec.layers):
        for n, s in layer_param_shapes(k, l).items():
            params[n] = np.zeros(s, dtype=dtype)
    return params


# --------------------------------------------------------------------------
# linear transforms shared by the layer kinds


class _Transform:
    """``y = W x`` on row batches, with W dense or MPO.

    ``batch`` is the total number of rows the transform will see (over all
    time steps for a recurrent matrix). When materializing W once is cheaper
    than contracting every row through the cores, W is built up front and
    its gradient is folded back into the cores by :meth:`finish`. Both
    routes compute the same function.
    """

    def __init__(self, params, prefix, plan=None, batch=None):
        self.plan = plan
        self.prefix = prefix
        self.weight = None
        self.dw = None
        if plan is None:
            self.weight = params[prefix]
            return
        self.cores = [params[f"{prefix}.core{c}"] for c in range(plan.n_cores)]
        if batch is not None and self._materialize_pays(batch):
            self.weight, self.partial = mpo_ops.materialize(self.cores, plan)

    # the chain's reshapes and small matmuls run far below BLAS peak, so it
    # must save this factor in multiplications to win in wall time
    CHAIN_PENALTY = 4

    def _materialize_pays(self, batch: int) -> bool:
        plan = self.plan
        dense = mpo_ops.materialize_cost(plan) + batch * plan.rows * plan.cols
        return dense < self.CHAIN_PENALTY * batch * mpo_ops.contraction_cost(plan).mpo

    def forward(self, x):
        if self.weight is not None:
            return x @ self.weight.T, x
        return mpo_ops.contract_batch(self.cores, self.plan, x, keep=True)

    def backward(self, saved, dy, grads):
        if self.plan is None:
            grads[self.prefix] = grads.get(self.prefix, 0) + dy.T @ saved
            return dy @ self.weight
        if self.weight is not None:
            g = dy.T @ saved
            self.dw = g if self.dw is None else self.dw + g
            return dy @ self.weight
        dx, dcores = mpo_ops.contract_batch_backward(self.cores, self.plan, saved, dy)
        self._add(grads, dcores)
        return dx

    def finish(self, grads):
        if self.dw is not None:
            self._add(grads, mpo_ops.materialize_backward(self.cores, self.plan, self.partial, self.dw))
            self.dw = None

    def _add(self, grads, dcores):
        for c, g in enumerate(dcores):
            name = f"{self.prefix}.core{c}"
            grads[name] = grads.get(name, 0) + g


def linear_transform(params, k, l: LayerSpec, batch=None):
    if l.kind == "dense":
        return _Transform(params, f"{k}.weight")
    if l.kind == "mpo":
        return _Transform(params, str(k), l.plan, batch)
    if l.kind == "lstm":
        return _Transform(params, f"{k}.W"), _Transform(params, f"{k}.U")
    return (_Transform(params, f"{k}.W", l.plan_w, batch),
            _Transform(params, f"{k}.U", l.plan_u, batch))


def layer_matrix(params, k, l: LayerSpec, which: str = "weight") -> np.ndarray:
    """Dense realization of a layer's weight (``which`` is "weight", "W" or "U")."""
    if l.kind == "dense":
        return params[f"{k}.weight"]
    if l.kind == "lstm":
        return params[f"{k}.{which}"]
    if l.kind == "mpo":
        plan, prefix = l.plan, str(k)
    else:
        plan = l.plan_w if which == "W" else l.plan_u
        prefix = f"{k}.{which}"
    cores = tuple(params[f"{prefix}.core{c}"] for c in range(plan.n_cores))
    return mpo_ops.reconstruct(MpoMatrix(plan, cores))


# --------------------------------------------------------------------------
# forward / backward


def _linear_forward(params, k, l, x):
    lead = x.shape[:-1]
    x2 = x.reshape(-1, l.n_in)
    t = linear_transform(params, k, l, x2.shape[0])
    z, saved = t.forward(x2)
    z = z + params[f"{k}.bias"]
    y = activate(l.activation, z)
    return y.reshape(lead + (l.n_out,)), (t, saved, y)


def _linear_backward(params, k, l, tape, dy, grads):
    t, saved, y = tape
    dz = activation_grad(l.activation, y, dy.reshape(y.shape))
    grads[f"{k}.bias"] = grads.get(f"{k}.bias", 0) + dz.sum(axis=0)
    dx = t.backward(saved, dz, grads)
    t.finish(grads)
    return dx.reshape(dy.shape[:-1] + (l.n_in,))


def lstm_gates(z, n_h):
    i = sigmoid(z[:, :n_h])
    f = sigmoid(z[:, n_h:2 * n_h])
    o = sigmoid(z[:, 2 * n_h:3 * n_h])
    g = np.tanh(z[:, 3 * n_h:])
    return i, f, o, g


def _lstm_forward(params, k, l, x, state=None):
    """Run a whole batch of sequences ``x`` (B, T, N_x) from ``state`` (zeros by default)."""
    b, steps, _ = x.shape
    tw, tu = linear_transform(params, k, l, b * steps)
    n_h = l.n_out
    wx, saved_w = tw.forward(x.reshape(b * steps, l.n_in))
    wx = wx.reshape(b, steps, 4 * n_h) + params[f"{k}.b"]
    if state is None:
        h = np.zeros((b, n_h), dtype=x.dtype)
        c = np.zeros((b, n_h), dtype=x.dtype)
    else:
        c, h = state
    hs = np.empty((b, steps, n_h), dtype=wx.dtype)
    record = []
    for t in range(steps):
        uh, saved_u = tu.forward(h)
        i, f, o, g = lstm_gates(wx[:, t] + uh, n_h)
        c_prev = c
        c = f * c_prev + i * g
        tc = np.tanh(c)
        h = o * tc
        hs[:, t] = h
        record.append((saved_u, i, f, o, g, c_prev, tc))
    return hs, (tw, tu, saved_w, record, (c, h))


def _lstm_backward(params, k, l, tape, dhs, grads):
    tw, tu, saved_w, record, _ = tape
    b, steps, n_h = dhs.shape
    dz_all = np.empty((b, steps, 4 * n_h), dtype=dhs.dtype)
    dh_next = np.zeros((b, n_h), dtype=dhs.dtype)
    dc_next = np.zeros((b, n_h), dtype=dhs.dtype)
    for t in range(steps - 1, -1, -1):
        saved_u, i, f, o, g, c_prev, tc = record[t]
        dh = dhs[:, t] + dh_next
        dc = dc_next + dh * o * (1 - tc * tc)
        dz = np.concatenate([
            dc * g * i * (1 - i),
            dc * c_prev * f * (1 - f),
            dh * tc * o * (1 - o),
            dc * i * (1 - g * g),
        ], axis=1)
        dz_all[:, t] = dz
        dh_next = tu.backward(saved_u, dz, grads)
        dc_next = dc * f
    flat = dz_all.reshape(b * steps, 4 * n_h)
    grads[f"{k}.b"] = grads.get(f"{k}.b", 0) + flat.sum(axis=0)
    dx = tw.backward(saved_w, flat, grads)
    tw.finish(grads)
    tu.finish(grads)
    return dx.reshape(b, steps, l.n_in)


def _dropout(x, rate, rng):
    keep = (rng.random(x.shape) >= rate).astype(x.dtype) / (1.0 - rate)
    return x * keep, keep


def forward(spec: ModelSpec, params: dict, x, training: bool = False, rng=None):
    """Evaluate the network on a batch.

    ``x`` is ``(B, input_dim)`` for MLP models and ``(B, T, feature_dim)`` for
    LSTM models. Returns ``(output, tape)``.
    """
    tape = []
    for k, l in enumerate(spec.layers):
        mask = None
        if training and l.dropout > 0:
            if rng is None:
                raise ConfigError("dropout during training needs an rng")
            x, mask = _dropout(x, l.dropout, rng)
        if l.recurrent:
            x, t = _lstm_forward(params, k, l, x)
        else:
            x, t = _linear_forward(params, k, l, x)
        if not np.all(np.isfinite(x)):
            raise NumericError("non-finite activations", layer=k)
        tape.append((mask, t))
    return x, tape


def backward(spec: ModelSpec, params: dict, tape, dy) -> dict:
    grads = {}
    for k in range(len(spec.layers) - 1, -1, -1):
        l = spec.layers[k]
        mask, t = tape[k]
        if l.recurrent:
            dy = _lstm_backward(params, k, l, t, dy, grads)
        else:
            dy = _linear_backward(params, k, l, t, dy, grads)
        if mask is not None:
            dy = dy * mask
    return grads


# --------------------------------------------------------------------------
# convenience wrappers


def context_frames(features, context: int):
    """Stack each frame with its ``context - 1`` predecessors (zero-padded at the start)."""
    features = np.asarray(features)
    n, d = features.shape
    padded = np.concatenate([np.zeros((context - 1, d), dtype=features.dtype), features])
    return np.concatenate([padded[j:j + n] for j in range(context)], axis=1)


class Model:
    """A :class:`ModelSpec` with its parameters (and optional pruning masks)."""

    def __init__(self, spec: ModelSpec, params: dict, masks: dict | None = None):
        self.spec = spec
        self.params = params
        self.masks = masks or {}
        expected = {}
        for k, l in enumerate(spec.layers):
            expected.update(layer_param_shapes(k, l))
        if set(expected) != set(params):
            raise ShapeError(f"parameter names {sorted(params)} do not match spec {sorted(expected)}")
        for n, s in expected.items():
            if params[n].shape != s:
                raise ShapeError(f"parameter {n} has shape {params[n].shape}, expected {s}")

    @classmethod
    def initialize(cls, spec: ModelSpec, seed: int = 0, dtype=np.float32) -> "Model":
        return cls(spec, init_params(spec, np.random.default_rng(seed), dtype))

    @property
    def dtype(self):
        return next(iter(self.params.values())).dtype

    def astype(self, dtype) -> "Model":
        return Model(self.spec, {n: p.astype(dtype) for n, p in self.params.items()},
                     dict(self.masks))

    def copy(self) -> "Model":
        return Model(self.spec, {n: p.copy() for n, p in self.params.items()},
                     {n: m.copy() for n, m in self.masks.items()})

    def forward(self, x, training=False, rng=None):
        return forward(self.spec, self.params, x, training, rng)

    def predict(self, features) -> np.ndarray:
        """Masks for one utterance's normalized features ``(T, feature_dim)``."""
        features = np.asarray(features, dtype=self.dtype)
        if features.ndim != 2 or features.shape[1] != self.spec.feature_dim:
            raise ShapeError(f"features of shape {features.shape}, expected (T, {self.spec.feature_dim})")
        if features.shape[0] == 0:
            return np.zeros((0, self.spec.output_dim), dtype=self.dtype)
        if self.spec.architecture == "mlp":
            y, _ = self.forward(context_frames(features, self.spec.context))
            return y
        y, _ = self.forward(features[None])
        return y[0]

    def n_params(self) -> int:
        return self.spec.n_params()


def model_forward(model: Model, frames) -> np.ndarray:
    return model.predict(frames)


# --------------------------------------------------------------------------
# single LSTM cell, for streaming use and reference checks


class LstmCell:
    """One LSTM layer stepped a frame at a time; state is kept on the cell."""

    def __init__(self, w, u, b, n_h):
        # w, u: dense arrays or MpoMatrix
        self.w, self.u, self.b, self.n_h = w, u, np.asarray(b), n_h
        self.reset()

    def reset(self):
        self.c = np.zeros(self.n_h)
        self.h = np.zeros(self.n_h)

    @staticmethod
    def _apply(m, v):
        if isinstance(m, MpoMatrix):
            return mpo_ops.contract(m, v)
        return m @ v

    def step(self, x):
        x = np.asarray(x)
        z = self._apply(self.w, x) + self._apply(self.u, self.h) + self.b
        i, f, o, g = lstm_gates(z[None], self.n_h)
        self.c = f[0] * self.c + i[0] * g[0]
        self.h = o[0] * np.tanh(self.c)
        return self.h


def lstm_step(cell: LstmCell, x_t):
    return cell.step(x_t)


def lstm_step_per_gate(x, h, c, w_gates, u_gates, b_gates):
    """Textbook LSTM step with one matrix per gate; dicts keyed by i, f, o, g."""
    pre = {k: w_gates[k] @ x + u_gates[k] @ h + b_gates[k] for k in "ifog"}
    i = 1.0 / (1.0 + np.exp(-pre["i"]))
    f = 1.0 / (1.0 + np.exp(-pre["f"]))
    o = 1.0 / (1.0 + np.exp(-pre["o"]))
    g = np.tanh(pre["g"])
    c = f * c + i * g
    h = o * np.tanh(c)
    return h, c
