"""Command-line interface: ``mpose <command> [options]``.

Every command accepts ``--config FILE`` (JSON object of RunConfig keys);
explicit flags override the file. Failures exit non-zero and print
``error[<category>]: <message>`` on stderr.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from . import data as data_mod
from . import metrics, modelfile, presets, speech
from .compress import compress_model, cost_ratio, preset_of, target_spec
from .errors import ConfigError, MposeError
from .modelfile import ModelFile
from .nn import Model, compression_report
from .pruning import iterative_prune_train, surviving_weights
from .train import TrainConfig, train_loop

log = logging.getLogger("mpose")

METHODS = ("none", "mpo", "pruning")


@dataclass
class RunConfig:
    task: str = "matched"
    architecture: str = "mlp-desk"
    rate: float = 0
    method: str = "none"
    seed: int = 0
    epochs: int = 15
    batch_size: int = 0
    dropout: Optional[float] = None
    lr: float = 5e-4
    precision: str = "float32"
    n_train: int = 200
    n_test: int = 40
    increments: int = 5
    epochs_per_increment: int = 3
    data_dir: str = "data"
    manifest: Optional[str] = None
    out: Optional[str] = None
    metrics: Optional[str] = None
    limit: Optional[int] = None

    def validate(self) -> "RunConfig":
        if self.task not in ("matched", "mismatched"):
            raise ConfigError(f"task must be matched or mismatched, got {self.task!r}")
        if self.architecture not in presets.ARCHITECTURES:
            raise ConfigError(f"architecture must be one of {presets.ARCHITECTURES}")
        if self.method not in METHODS:
            raise ConfigError(f"method must be one of {METHODS}")
        if self.precision not in modelfile.PRECISIONS:
            raise ConfigError(f"precision must be one of {tuple(modelfile.PRECISIONS)}")
        if self.rate < 0:
            raise ConfigError("rate must be non-negative")
        return self

    def manifest_path(self) -> Path:
        return Path(self.manifest) if self.manifest else Path(self.data_dir) / "manifest.csv"


CONFIG_KEYS = {f.name for f in dataclasses.fields(RunConfig)}


def load_config(path) -> dict:
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}: invalid JSON: {e}") from e
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: expected a JSON object")
    unknown = sorted(set(raw) - CONFIG_KEYS)
    if unknown:
        raise ConfigError(f"{path}: unknown config keys {unknown}")
    return raw


def resolve(args: argparse.Namespace) -> RunConfig:
    values = load_config(args.config) if getattr(args, "config", None) else {}
    for key in CONFIG_KEYS:
        v = getattr(args, key, None)
        if v is not None:
            values[key] = v
    try:
        cfg = RunConfig(**values)
    except TypeError as e:
        raise ConfigError(str(e)) from e
    return cfg.validate()


def _train_config(cfg: RunConfig, epochs=None) -> TrainConfig:
    return TrainConfig(epochs=cfg.epochs if epochs is None else epochs, batch_size=cfg.batch_size,
                       lr=cfg.lr, dropout=cfg.dropout, seed=cfg.seed)


def _require(path, what="file"):
    if path is None:
        raise ConfigError(f"missing {what} path")
    return Path(path)


# --------------------------------------------------------------------------
# commands


def cmd_datagen(cfg: RunConfig) -> int:
    out = Path(cfg.out or cfg.data_dir)
    manifest = data_mod.write_dataset(data_mod.DatagenConfig(
        out_dir=str(out), task=cfg.task, n_train=cfg.n_train, n_test=cfg.n_test, seed=cfg.seed))
    print(f"wrote {cfg.n_train} train and {cfg.n_test} test utterances; manifest {manifest}")
    return 0


def train_model(cfg: RunConfig, sequences, normalizer) -> tuple[ModelFile, object]:
    rate = 0 if cfg.method == "none" else cfg.rate
    if cfg.method == "pruning":
        raise ConfigError("train builds dense or MPO models; use the prune command for pruning")
    if cfg.method == "mpo" and rate <= 0:
        raise ConfigError("method mpo needs a positive rate")
    if cfg.architecture in ("mlp", "lstm"):
        rate = int(rate)
    spec = presets.build_from_preset(cfg.architecture, rate)
    model = Model.initialize(spec, cfg.seed, np.dtype(cfg.precision))
    model, history, _ = train_loop(model, sequences, _train_config(cfg))
    meta = {"preset": cfg.architecture, "method": cfg.method, "rate": rate, "seed": cfg.seed,
            "epochs": cfg.epochs, "task": cfg.task, "n_params": spec.n_params(),
            "final_train_mse": history.last("train"), "final_val_mse": history.last("val")}
    return ModelFile(model, normalizer, meta), history


def cmd_train(cfg: RunConfig) -> int:
    examples = data_mod.load_examples(cfg.manifest_path(), "train", cfg.limit)
    sequences, normalizer = data_mod.training_data(examples)
    mf, history = train_model(cfg, sequences, normalizer)
    out = _require(cfg.out, "--out model")
    modelfile.save(mf, out)
    if cfg.metrics:
        history.write_csv(cfg.metrics)
    print(f"saved {out} ({mf.model.n_params()} params, val mse {history.last('val')})")
    return 0


def cmd_compress(cfg: RunConfig, model_path) -> int:
    mf = modelfile.load(model_path)
    preset = mf.metadata.get("preset") or preset_of(mf.model.spec)
    rate = "full" if cfg.rate == 0 else cfg.rate
    result = compress_model(mf.model, target_spec(preset, rate))
    for name, err in result.errors:
        print(f"{name}: relative reconstruction error {err:.3e}")
    report = compression_report(result.model.spec)
    print(f"MPO weights {report.mpo_params} of {report.dense_params}; rate {report.rate:.2f} "
          f"(with bias {report.rate_with_bias:.2f})")
    if result.full_rank:
        print("full-rank bonds: lossless, rate about 1 or below")
    meta = {**mf.metadata, "method": "mpo", "rate": rate, "compressed_from": str(model_path)}
    modelfile.save(ModelFile(result.model, mf.normalizer, meta), _require(cfg.out, "--out model"))
    return 0


def cmd_prune(cfg: RunConfig, model_path) -> int:
    mf = modelfile.load(model_path)
    if mf.normalizer is None:
        raise ConfigError("model file has no feature normalizer")
    examples = data_mod.load_examples(cfg.manifest_path(), "train", cfg.limit)
    sequences = data_mod.prepare(examples).normalized(mf.normalizer)
    model, _ = iterative_prune_train(mf.model, cfg.rate, sequences, cfg.increments,
                                     cfg.epochs_per_increment, _train_config(cfg))
    meta = {**mf.metadata, "method": "pruning", "rate": cfg.rate, "pruned_from": str(model_path),
            "surviving_weights": surviving_weights(model)}
    modelfile.save(ModelFile(model, mf.normalizer, meta), _require(cfg.out, "--out model"))
    print(f"pruned to {surviving_weights(model)} surviving weights")
    return 0


def cmd_enhance(cfg: RunConfig, model_path, wav_in) -> int:
    mf = modelfile.load(model_path)
    if mf.normalizer is None:
        raise ConfigError("model file has no feature normalizer")
    noisy = speech.read_wav(wav_in)
    enhanced = metrics.Enhancer(mf.model, mf.normalizer).enhance(noisy)
    speech.write_wav(_require(cfg.out, "--out wav"), enhanced)
    return 0


def model_label(mf: ModelFile, path) -> str:
    method, rate = mf.metadata.get("method"), mf.metadata.get("rate")
    if method is None:
        return Path(path).stem
    return "dense" if method == "none" else f"{method}@{rate:g}" if isinstance(rate, (int, float)) else f"{method}@{rate}"


def evaluation_rows(model_paths, examples) -> list[dict]:
    rows = []
    for path in model_paths:
        mf = modelfile.load(path)
        label = model_label(mf, path)
        res = metrics.evaluate_model(metrics.Enhancer(mf.model, mf.normalizer), examples, label)
        extra = {label: {"method": mf.metadata.get("method", ""), "rate": mf.metadata.get("rate", ""),
                         "cost_ratio": cost_ratio(mf.model)}}
        rows += metrics.comparison_rows([res], extra)
    rows.append(metrics.noisy_row(examples))
    return rows


def cmd_evaluate(cfg: RunConfig, model_paths) -> int:
    examples = data_mod.load_examples(cfg.manifest_path(), "test", cfg.limit)
    rows = evaluation_rows(model_paths, examples)
    print(metrics.format_table(rows))
    if cfg.metrics:
        metrics.write_csv(rows, cfg.metrics)
    return 0


def inspect_text(mf: ModelFile) -> str:
    spec = mf.model.spec
    report = compression_report(spec)
    lines = [f"model {spec.name}: {spec.architecture}, {len(spec.layers)} layers, "
             f"precision {mf.precision}"]
    for k, l in enumerate(spec.layers):
        desc = f"  [{k}] {l.kind} {l.n_in}->{l.n_out} {l.activation} dropout {l.dropout:g}"
        for key in ("plan", "plan_w", "plan_u"):
            p = getattr(l, key)
            if p is not None:
                desc += f"\n      {key}: I={p.fi} J={p.fj} D={p.bonds}"
        lines.append(desc)
    lines.append(f"parameters: {spec.n_params()} (dense equivalent {spec.dense_params()})")
    if mf.model.masks:
        lines.append(f"pruned: {surviving_weights(mf.model)} surviving weights")
    lines.append(f"weights: {report.mpo_params} (dense equivalent {report.dense_params})")
    lines.append(f"compression rate: {report.rate:.2f} weights only, {report.rate_with_bias:.2f} with biases")
    lines.append(f"contraction cost ratio: {cost_ratio(mf.model):.4f}")
    if mf.metadata:
        lines.append("metadata: " + json.dumps(mf.metadata, sort_keys=True))
    return "\n".join(lines)


def cmd_inspect(cfg: RunConfig, model_path) -> int:
    print(inspect_text(modelfile.load(model_path)))
    return 0


# --------------------------------------------------------------------------
# argument parsing


def _common(p: argparse.ArgumentParser):
    p.add_argument("--config", help="JSON file of run settings; flags override it")
    p.add_argument("--seed", type=int)
    p.add_argument("-v", "--verbose", action="store_true")


def _training(p):
    p.add_argument("--manifest", help="dataset manifest (default DATA_DIR/manifest.csv)")
    p.add_argument("--data-dir", dest="data_dir")
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--dropout", type=float)
    p.add_argument("--lr", type=float)
    p.add_argument("--limit", type=int, help="use only the first N utterances")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mpose", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("datagen", help="synthesize a dataset and manifest")
    _common(p)
    p.add_argument("--out", help="output directory")
    p.add_argument("--task", choices=("matched", "mismatched"))
    p.add_argument("--n-train", dest="n_train", type=int)
    p.add_argument("--n-test", dest="n_test", type=int)

    p = sub.add_parser("train", help="train a dense or MPO model")
    _common(p)
    _training(p)
    p.add_argument("--architecture", choices=presets.ARCHITECTURES)
    p.add_argument("--method", choices=("none", "mpo"))
    p.add_argument("--rate", type=float)
    p.add_argument("--precision", choices=tuple(modelfile.PRECISIONS))
    p.add_argument("--out", help="model file to write")
    p.add_argument("--metrics", help="per-epoch CSV to write")

    p = sub.add_parser("compress", help="TT-SVD a dense model into MPO form")
    _common(p)
    p.add_argument("model")
    p.add_argument("--rate", type=float, help="target rate; 0 keeps full-rank bonds")
    p.add_argument("--out")

    p = sub.add_parser("prune", help="iterative magnitude pruning with retraining")
    _common(p)
    _training(p)
    p.add_argument("model")
    p.add_argument("--rate", type=float)
    p.add_argument("--increments", type=int)
    p.add_argument("--epochs-per-increment", dest="epochs_per_increment", type=int)
    p.add_argument("--out")

    p = sub.add_parser("enhance", help="enhance one noisy WAV file")
    _common(p)
    p.add_argument("model")
    p.add_argument("wav")
    p.add_argument("--out")

    p = sub.add_parser("evaluate", help="compare models on the test split")
    _common(p)
    p.add_argument("models", nargs="+")
    p.add_argument("--manifest")
    p.add_argument("--data-dir", dest="data_dir")
    p.add_argument("--limit", type=int)
    p.add_argument("--metrics", help="CSV to write")

    p = sub.add_parser("inspect", help="summarize a model file")
    _common(p)
    p.add_argument("model")
    return parser


def run(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    cfg = resolve(args)
    cmd = args.command
    if cmd == "datagen":
        return cmd_datagen(cfg)
    if cmd == "train":
        return cmd_train(cfg)
    if cmd == "compress":
        return cmd_compress(cfg, args.model)
    if cmd == "prune":
        return cmd_prune(cfg, args.model)
    if cmd == "enhance":
        return cmd_enhance(cfg, args.model, args.wav)
    if cmd == "evaluate":
        return cmd_evaluate(cfg, args.models)
    return cmd_inspect(cfg, args.model)


def main(argv=None) -> int:
    try:
        return run(argv)
    except MposeError as e:
        print(f"error[{e.category}]: {e}", file=sys.stderr)
        return 2
    except (FileNotFoundError, PermissionError, IsADirectoryError) as e:
        print(f"error[io]: {e}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
