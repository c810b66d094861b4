"""Post-hoc TT-SVD compression of trained dense models."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import presets
from .errors import ConfigError, ShapeError
from .mpo import contraction_cost, decompose, reconstruct
from .nn import Model, ModelSpec


@dataclass
class CompressResult:
    model: Model
    errors: list = field(default_factory=list)  # (param name, relative Frobenius error)
    full_rank: bool = False


def preset_of(spec: ModelSpec) -> str:
    """Architecture preset encoded in a preset-built spec name (``mlp-desk-r5`` -> ``mlp-desk``)."""
    base = spec.name.rsplit("-r", 1)[0]
    for suffix in ("-dense", "-full"):
        base = base.removesuffix(suffix)
    if base not in presets.ARCHITECTURES:
        raise ConfigError(f"cannot infer the preset of model {spec.name!r}; pass it explicitly")
    return base


def target_spec(architecture: str, rate) -> ModelSpec:
    """MPO spec for ``rate``; ``"full"`` keeps the rate-5 factorizations at full-rank bonds."""
    if rate == "full":
        return presets.full_rank_twin(presets.build_from_preset(architecture, 5))
    rate = float(rate)
    if rate <= 0:
        raise ConfigError("compression needs a positive rate")
    if architecture in ("mlp", "lstm"):
        rate = int(rate)
    return presets.build_from_preset(architecture, rate)


def _pairs(k, layer, target):
    if layer.kind == "dense":
        return [(f"{k}.weight", str(k), target.plan)]
    return [(f"{k}.W", f"{k}.W", target.plan_w), (f"{k}.U", f"{k}.U", target.plan_u)]


def compress_model(model: Model, spec: ModelSpec, svd_backend: str = "auto") -> CompressResult:
    """TT-SVD every weight matrix of a dense model into the plans of ``spec``."""
    if any(l.kind not in ("dense", "lstm") for l in model.spec.layers):
        raise ConfigError("compress needs a dense input model")
    if len(spec.layers) != len(model.spec.layers):
        raise ShapeError("target spec has a different number of layers")
    params, errors = {}, []
    for k, (src, dst) in enumerate(zip(model.spec.layers, spec.layers)):
        if (src.n_in, src.n_out, src.recurrent) != (dst.n_in, dst.n_out, dst.recurrent):
            raise ShapeError(f"layer {k}: {src.n_out}x{src.n_in} does not match target {dst.n_out}x{dst.n_in}")
        if dst.kind in ("dense", "lstm"):
            for n in model.params:
                if n.startswith(f"{k}."):
                    params[n] = model.params[n].copy()
            continue
        for name, prefix, plan in _pairs(k, src, dst):
            w = model.params[name].astype(np.float64)
            m = decompose(w, plan, svd_backend)
            err = np.linalg.norm(reconstruct(m) - w) / max(np.linalg.norm(w), 1e-300)
            errors.append((name, float(err)))
            for c, core in enumerate(m.cores):
                params[f"{prefix}.core{c}"] = core.astype(model.dtype)
        bias = f"{k}.bias" if not src.recurrent else f"{k}.b"
        params[bias] = model.params[bias].copy()
    full = all(e < 1e-6 for _, e in errors)
    return CompressResult(Model(spec, params), errors, full)


def cost_ratio(model: Model) -> float:
    """Weight multiplications per frame relative to the dense twin.

    MPO layers count contraction multiplications, pruned matrices their
    surviving entries. Recurrent layers count both W and U.
    """
    mpo_total, dense_total = 0, 0
    for k, l in enumerate(model.spec.layers):
        if l.kind == "mpo":
            plans = [l.plan]
        elif l.kind == "mpo_lstm":
            plans = [l.plan_w, l.plan_u]
        else:
            names = [f"{k}.weight"] if l.kind == "dense" else [f"{k}.W", f"{k}.U"]
            for n in names:
                w = model.params[n]
                mask = model.masks.get(n)
                mpo_total += int(mask.sum()) if mask is not None else w.size
                dense_total += w.size
            continue
        for p in plans:
            c = contraction_cost(p)
            mpo_total += c.mpo
            dense_total += c.dense
    return mpo_total / dense_total
