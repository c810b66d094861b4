"""Synthetic corpus generation, manifests, and feature/target preparation.

Two task layouts are produced. ``matched``: one long recording per test-set
noise type, the first half cut into training mixtures and the second half
into test mixtures. ``mismatched``: training and test mixtures use disjoint
noise types.
"""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import speech
from .errors import ConfigError, FormatError
from .train import SequenceData

log = logging.getLogger(__name__)

MANIFEST_FIELDS = ("id", "split", "clean", "noise", "noisy", "snr_db", "noise_type")
TEST_NOISES = ("pink", "am_white", "babble")
TRAIN_ONLY_NOISES = ("white", "brown", "am_pink")
SNRS = (-5.0, 0.0, 5.0)


@dataclass
class DatagenConfig:
    out_dir: str = "data"
    task: str = "matched"
    n_train: int = 200
    n_test: int = 40
    snrs: tuple = SNRS
    seed: int = 0
    noise_seconds: float = 120.0
    min_seconds: float = 2.0
    max_seconds: float = 8.0


@dataclass
class Example:
    id: str
    split: str
    clean: np.ndarray
    noise: np.ndarray  # scaled to the row's SNR
    snr_db: float
    noise_type: str

    @property
    def noisy(self):
        return self.clean + self.noise


def _noise_pools(cfg: DatagenConfig, rng):
    half = cfg.noise_seconds / 2
    if cfg.task == "matched":
        pools = {}
        for kind in TEST_NOISES:
            full = speech.synth_noise(kind, rng, cfg.noise_seconds)
            cut = int(half * speech.SAMPLE_RATE)
            pools[kind] = (full[:cut], full[cut:])
        return {"train": {k: v[0] for k, v in pools.items()}, "test": {k: v[1] for k, v in pools.items()}}
    if cfg.task == "mismatched":
        return {
            "train": {k: speech.synth_noise(k, rng, half) for k in TRAIN_ONLY_NOISES},
            "test": {k: speech.synth_noise(k, rng, half) for k in TEST_NOISES},
        }
    raise ConfigError(f"unknown task {cfg.task!r}; choose matched or mismatched")


def generate_examples(cfg: DatagenConfig):
    """Yield deterministic :class:`Example` objects (clean and scaled noise)."""
    rng = np.random.default_rng(cfg.seed)
    pools = _noise_pools(cfg, rng)
    for split, count in (("train", cfg.n_train), ("test", cfg.n_test)):
        kinds = sorted(pools[split])
        for i in range(count):
            seconds = rng.uniform(cfg.min_seconds, cfg.max_seconds)
            clean = speech.standardize_length(speech.synth_speech(rng, seconds), rng)
            kind = kinds[int(rng.integers(len(kinds)))]
            source = pools[split][kind]
            noise = speech.standardize_length(source, rng)
            snr = float(cfg.snrs[i % len(cfg.snrs)])
            _, scaled = speech.mix_at_snr(clean, noise, snr)
            yield Example(f"{split}_{i:04d}", split, clean, scaled, snr, kind)


def write_dataset(cfg: DatagenConfig) -> Path:
    """Write clean/noise/noisy WAVs and ``manifest.csv``; returns the manifest path."""
    out = Path(cfg.out_dir)
    for sub in ("clean", "noise", "noisy"):
        (out / sub).mkdir(parents=True, exist_ok=True)
    rows = []
    for ex in generate_examples(cfg):
        # unscaled noise keeps PCM headroom; the loader re-mixes at snr_db
        noise = ex.noise / np.sqrt(np.mean(ex.noise ** 2)) * 0.1
        noisy = ex.noisy
        peak = np.abs(noisy).max()
        if peak > 0.99:
            noisy = noisy * (0.99 / peak)
        paths = {sub: f"{sub}/{ex.id}.wav" for sub in ("clean", "noise", "noisy")}
        speech.write_wav(out / paths["clean"], ex.clean)
        speech.write_wav(out / paths["noise"], noise)
        speech.write_wav(out / paths["noisy"], noisy)
        rows.append({"id": ex.id, "split": ex.split, **paths, "snr_db": f"{ex.snr_db:g}",
                     "noise_type": ex.noise_type})
    manifest = out / "manifest.csv"
    with open(manifest, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=MANIFEST_FIELDS)
        w.writeheader()
        w.writerows(rows)
    return manifest


def read_manifest(path) -> list[dict]:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"manifest not found: {path}")
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if rows and set(MANIFEST_FIELDS) - set(rows[0]):
        raise FormatError(f"{path}: manifest needs columns {MANIFEST_FIELDS}")
    return rows


def load_examples(manifest, split: str | None = None, limit: int | None = None) -> list[Example]:
    """Read a manifest's WAVs and re-mix each row at its SNR in float64."""
    manifest = Path(manifest)
    rows = [r for r in read_manifest(manifest) if split is None or r["split"] == split]
    if limit is not None:
        rows = rows[:limit]
    missing = [str(manifest.parent / r[k]) for r in rows for k in ("clean", "noise")
               if not (manifest.parent / r[k]).exists()]
    if missing:
        raise FileNotFoundError("missing audio files: " + ", ".join(missing[:10]))
    out = []
    for r in rows:
        clean = speech.read_wav(manifest.parent / r["clean"])
        noise = speech.read_wav(manifest.parent / r["noise"])
        _, scaled = speech.mix_at_snr(clean, noise, float(r["snr_db"]))
        out.append(Example(r["id"], r["split"], clean, scaled, float(r["snr_db"]), r["noise_type"]))
    return out


@dataclass
class Prepared:
    raw_features: list = field(default_factory=list)  # log power, un-normalized
    targets: list = field(default_factory=list)  # IRM, bin 0 dropped

    def normalized(self, normalizer: speech.FeatureNormalizer) -> SequenceData:
        return SequenceData([normalizer(f) for f in self.raw_features], self.targets)


def prepare(examples) -> Prepared:
    p = Prepared()
    for ex in examples:
        noisy_spec = speech.stft(ex.noisy)
        p.raw_features.append(speech.log_power(noisy_spec))
        p.targets.append(speech.irm(speech.stft(ex.clean), speech.stft(ex.noise)))
    return p


def training_data(examples) -> tuple[SequenceData, speech.FeatureNormalizer]:
    """Normalized training sequences plus the normalizer fitted on them."""
    prepared = prepare(examples)
    normalizer = speech.FeatureNormalizer.fit(prepared.raw_features)
    return prepared.normalized(normalizer), normalizer
