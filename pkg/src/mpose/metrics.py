"""Global SNR, mask MSE and the grouped comparison tables."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import speech
from .errors import DegenerateInputError, ShapeError

SNR_CAP_DB = 99.0


def global_snr(reference, estimate) -> float:
    """10 log10(|s|^2 / |s - s_hat|^2) in dB, capped at 99 dB for exact estimates."""
    s = np.asarray(reference, dtype=np.float64)
    e = np.asarray(estimate, dtype=np.float64)
    if s.shape != e.shape:
        raise ShapeError(f"reference {s.shape} and estimate {e.shape} differ")
    es = speech.energy(s)
    if es == 0:
        raise DegenerateInputError("silent reference")
    err = speech.energy(s - e)
    if err == 0:
        return SNR_CAP_DB
    return min(SNR_CAP_DB, 10.0 * math.log10(es / err))


MaskFn = Callable[[speech.Spectrogram], np.ndarray]


class Enhancer:
    """Model plus feature normalizer: noisy waveform -> mask -> enhanced waveform."""

    def __init__(self, model, normalizer: speech.FeatureNormalizer):
        self.model = model
        self.normalizer = normalizer

    def mask(self, noisy_spec: speech.Spectrogram) -> np.ndarray:
        feats = speech.features(noisy_spec, self.normalizer)
        return self.model.predict(feats).astype(np.float64)

    def enhance(self, noisy) -> np.ndarray:
        spec = speech.stft(noisy)
        return speech.apply_mask(spec, self.mask(spec))

    __call__ = mask


def oracle_mask(example) -> MaskFn:
    clean_spec = speech.stft(example.clean)
    noise_spec = speech.stft(example.noise)
    return lambda _spec: speech.irm(clean_spec, noise_spec)


def identity_mask(spec: speech.Spectrogram) -> np.ndarray:
    return np.ones((spec.n_frames, speech.MASK_DIM))


@dataclass
class UtteranceResult:
    id: str
    noise_type: str
    snr_db: float
    input_snr_db: float
    output_snr_db: float
    mask_mse: float


@dataclass
class EvalResult:
    label: str
    rows: list = field(default_factory=list)

    def _mean(self, attr, snr=None, noise_type=None):
        vals = [getattr(r, attr) for r in self.rows
                if (snr is None or r.snr_db == snr) and (noise_type is None or r.noise_type == noise_type)]
        return float(np.mean(vals)) if vals else float("nan")

    def snrs(self):
        return sorted({r.snr_db for r in self.rows})

    def by_snr(self, attr="output_snr_db") -> dict:
        """Mean per mixing SNR plus ``"avg"``, the mean of the per-SNR columns."""
        cols = {s: self._mean(attr, snr=s) for s in self.snrs()}
        cols["avg"] = float(np.mean(list(cols.values()))) if cols else float("nan")
        return cols

    def by_noise(self, attr="output_snr_db") -> dict:
        return {n: self._mean(attr, noise_type=n) for n in sorted({r.noise_type for r in self.rows})}

    def mean(self, attr="output_snr_db") -> float:
        return self._mean(attr)


def evaluate(examples, mask_for: Callable, label: str = "") -> EvalResult:
    """Enhance each example with ``mask_for(example)(noisy_spec)`` and score it."""
    result = EvalResult(label)
    for ex in examples:
        noisy = ex.noisy
        spec = speech.stft(noisy)
        mask = np.asarray(mask_for(ex)(spec), dtype=np.float64)
        enhanced = speech.apply_mask(spec, mask)
        target = speech.irm(speech.stft(ex.clean), speech.stft(ex.noise))
        result.rows.append(UtteranceResult(
            ex.id, ex.noise_type, ex.snr_db,
            global_snr(ex.clean, noisy), global_snr(ex.clean, enhanced),
            float(np.mean((mask - target) ** 2))))
    return result


def evaluate_model(enhancer: Enhancer, examples, label: str = "") -> EvalResult:
    return evaluate(examples, lambda _ex: enhancer.mask, label)


def noisy_baseline(examples) -> EvalResult:
    return evaluate(examples, lambda _ex: identity_mask, "Noisy Speech")


def comparison_rows(results: list, extra: dict | None = None) -> list[dict]:
    """Rows of the rate x method grid: per-SNR and averaged SNR and mask MSE."""
    rows = []
    for res in results:
        snr = res.by_snr("output_snr_db")
        mse = res.by_snr("mask_mse")
        row = {"model": res.label}
        for s, v in snr.items():
            row[f"snr_{s:g}" if s != "avg" else "snr_avg"] = v
        for s, v in mse.items():
            row[f"mse_{s:g}" if s != "avg" else "mse_avg"] = v
        row.update((extra or {}).get(res.label, {}))
        rows.append(row)
    return rows


def noisy_row(examples) -> dict:
    res = noisy_baseline(examples)
    snr = res.by_snr("input_snr_db")
    row = {"model": "Noisy Speech"}
    for s, v in snr.items():
        row[f"snr_{s:g}" if s != "avg" else "snr_avg"] = v
    return row


def write_csv(rows: list[dict], path) -> None:
    keys = []
    for r in rows:
        keys += [k for k in r if k not in keys]
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=keys)
        w.writeheader()
        for r in rows:
            w.writerow({k: (f"{v:.6g}" if isinstance(v, float) else v) for k, v in r.items()})


def format_table(rows: list[dict]) -> str:
    keys = []
    for r in rows:
        keys += [k for k in r if k not in keys]

    def fmt(key, v):
        if isinstance(v, float):
            if math.isnan(v):
                return ""
            if key == "rate":
                return f"{v:g}"
            digits = 4 if key.startswith("mse") or key == "cost_ratio" else 2
            return f"{round(v, digits) + 0.0:.{digits}f}"
        return "" if v is None else str(v)

    cells = [keys] + [[fmt(k, r.get(k)) for k in keys] for r in rows]
    widths = [max(len(row[i]) for row in cells) for i in range(len(keys))]
    lines = ["  ".join(c.rjust(w) if i else c.ljust(w) for i, (c, w) in enumerate(zip(row, widths)))
             for row in cells]
    lines.insert(1, "-" * len(lines[0]))
    return "\n".join(lines)
