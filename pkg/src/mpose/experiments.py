"""Desk-scale comparison of dense, MPO and pruned MLP mask estimators."""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

from . import data, metrics, presets
from .nn import Model
from .pruning import iterative_prune_train
from .train import TrainConfig, train_loop

log = logging.getLogger(__name__)


@dataclass
class DeskConfig:
    architecture: str = "mlp-desk"
    task: str = "matched"
    n_train: int = 200
    n_test: int = 40
    data_seed: int = 0
    epochs: int = 15
    seeds: tuple = (0, 1, 2)
    rates: tuple = (5, 100)
    increments: int = 5
    track_train: bool = False


@dataclass
class RunResult:
    label: str
    seed: int
    method: str
    rate: float
    val_mse: float
    eval: metrics.EvalResult
    seconds: float

    @property
    def mask_mse(self) -> float:
        return self.eval.by_snr("mask_mse")["avg"]

    @property
    def snr_avg(self) -> float:
        return self.eval.by_snr("output_snr_db")["avg"]


@dataclass
class DeskResults:
    noisy: metrics.EvalResult
    runs: list = field(default_factory=list)
    seconds: float = 0.0

    def get(self, method, rate, seed) -> RunResult:
        for r in self.runs:
            if (r.method, r.rate, r.seed) == (method, rate, seed):
                return r
        raise KeyError((method, rate, seed))

    def rows(self) -> list[dict]:
        rows = []
        for r in self.runs:
            row = metrics.comparison_rows([r.eval])[0]
            row.update(seed=r.seed, method=r.method, rate=r.rate, seconds=r.seconds)
            rows.append(row)
        snr = self.noisy.by_snr("input_snr_db")
        noisy = {"model": "Noisy Speech"}
        noisy.update({(f"snr_{s:g}" if s != "avg" else "snr_avg"): v for s, v in snr.items()})
        rows.append(noisy)
        return rows


def corpus(cfg: DeskConfig):
    gen = data.DatagenConfig(task=cfg.task, n_train=cfg.n_train, n_test=cfg.n_test, seed=cfg.data_seed)
    examples = list(data.generate_examples(gen))
    train = [e for e in examples if e.split == "train"]
    test = [e for e in examples if e.split == "test"]
    sequences, normalizer = data.training_data(train)
    return sequences, normalizer, test


def _finish(label, seed, method, rate, model, history, normalizer, test, started):
    res = metrics.evaluate_model(metrics.Enhancer(model, normalizer), test, label)
    run = RunResult(label, seed, method, rate, history.last("val"), res, time.time() - started)
    log.info("%s seed %d: mask mse %.5f, snr %.2f dB (%.0f s)", label, seed, run.mask_mse,
             run.snr_avg, run.seconds)
    return run


def train_run(cfg: DeskConfig, method: str, rate: float, seed: int, sequences, normalizer, test):
    """One model: ``none`` (dense), ``mpo`` or ``pruning`` at ``rate``."""
    started = time.time()
    tc = TrainConfig(epochs=cfg.epochs, seed=seed, track_train=cfg.track_train)
    label = "dense" if method == "none" else f"{method}@{rate:g}"
    if method == "pruning":
        # pruned during training: same epoch budget as the other methods
        model = Model.initialize(presets.build_from_preset(cfg.architecture, 0), seed)
        per = max(1, cfg.epochs // cfg.increments)
        model, histories = iterative_prune_train(
            model, rate, sequences, cfg.increments, per, TrainConfig(**{**tc.__dict__, "epochs": per}))
        history = histories[-1]
    else:
        spec = presets.build_from_preset(cfg.architecture, 0 if method == "none" else rate)
        model = Model.initialize(spec, seed)
        model, history, _ = train_loop(model, sequences, tc)
    return _finish(label, seed, method, rate, model, history, normalizer, test, started)


def desk_comparison(cfg: DeskConfig | None = None) -> DeskResults:
    """Dense baseline at the first seed, then MPO and pruning at every rate and seed."""
    cfg = cfg or DeskConfig()
    started = time.time()
    sequences, normalizer, test = corpus(cfg)
    out = DeskResults(metrics.noisy_baseline(test))
    out.runs.append(train_run(cfg, "none", 0, cfg.seeds[0], sequences, normalizer, test))
    for seed in cfg.seeds:
        for rate in cfg.rates:
            for method in ("mpo", "pruning"):
                out.runs.append(train_run(cfg, method, rate, seed, sequences, normalizer, test))
    out.seconds = time.time() - started
    return out


def mpo_wins(results: DeskResults, rate, seeds) -> int:
    """Seeds at which the MPO model's test mask MSE is at most the pruned model's."""
    return sum(results.get("mpo", rate, s).mask_mse <= results.get("pruning", rate, s).mask_mse
               for s in seeds)


def summary(results: DeskResults) -> str:
    return metrics.format_table(results.rows()) + f"\ntotal {results.seconds:.0f} s"


if __name__ == "__main__":  # pragma: no cover
    logging.basicConfig(level=logging.INFO)
    print(summary(desk_comparison()))
