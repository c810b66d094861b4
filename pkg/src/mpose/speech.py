"""Time-frequency masking pipeline: mixing, STFT, IRM targets, features, WAV I/O.

Signals are float64 numpy arrays at 16 kHz. Frames are 32 ms (512 samples)
Hamming windows with a 16 ms (256 sample) hop and a 512-point FFT, giving 257
bins of which bin 0 is dropped for targets and features.
"""
from __future__ import annotations

import json
import wave
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateInputError, FormatError, ShapeError

SAMPLE_RATE = 16000
FRAME = 512
HOP = 256
N_FFT = 512
N_BINS = N_FFT // 2 + 1
MASK_DIM = N_BINS - 1
UTTERANCE_SECONDS = 5.0
EPS = 1e-12

# periodic Hamming: overlapping windows at hop N/2 sum to a constant
WINDOW = 0.54 - 0.46 * np.cos(2 * np.pi * np.arange(FRAME) / FRAME)


@dataclass
class Spectrogram:
    frames: np.ndarray  # complex (L, 257)
    length: int  # samples in the analysed signal

    @property
    def n_frames(self) -> int:
        return self.frames.shape[0]


def n_frames_for(length: int) -> int:
    if length < FRAME:
        raise ShapeError(f"signal of {length} samples is shorter than one {FRAME}-sample frame")
    return 1 + -(-(length - FRAME) // HOP)


def stft(x) -> Spectrogram:
    """Hamming-windowed 512-point STFT. The tail is zero-padded to a whole frame."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise ShapeError(f"expected a 1-D signal, got shape {x.shape}")
    n = n_frames_for(x.size)
    padded = np.zeros((n - 1) * HOP + FRAME)
    padded[: x.size] = x
    idx = np.arange(n)[:, None] * HOP + np.arange(FRAME)
    return Spectrogram(np.fft.rfft(padded[idx] * WINDOW, N_FFT), x.size)


def istft(spec: Spectrogram) -> np.ndarray:
    """Weighted overlap-add with squared-window normalization."""
    frames = np.fft.irfft(spec.frames, N_FFT)[:, :FRAME] * WINDOW
    n = frames.shape[0]
    total = (n - 1) * HOP + FRAME
    out = np.zeros(total)
    norm = np.zeros(total)
    for k in range(n):
        out[k * HOP:k * HOP + FRAME] += frames[k]
        norm[k * HOP:k * HOP + FRAME] += WINDOW ** 2
    return out[: spec.length] / norm[: spec.length]


def energy(x) -> float:
    x = np.asarray(x, dtype=np.float64)
    return float(np.dot(x, x))


def mix_at_snr(clean, noise, snr_db: float):
    """Scale ``noise`` to the requested global SNR; returns ``(noisy, scaled_noise)``."""
    clean = np.asarray(clean, dtype=np.float64)
    noise = np.asarray(noise, dtype=np.float64)
    if clean.shape != noise.shape:
        raise ShapeError(f"clean {clean.shape} and noise {noise.shape} lengths differ")
    es, en = energy(clean), energy(noise)
    if es == 0:
        raise DegenerateInputError("clean signal is silent")
    if en == 0:
        raise DegenerateInputError("noise signal is silent")
    alpha = np.sqrt(es / (en * 10 ** (snr_db / 10)))
    scaled = alpha * noise
    return clean + scaled, scaled


def standardize_length(x, rng: np.random.Generator, seconds: float = UTTERANCE_SECONDS,
                       sample_rate: int = SAMPLE_RATE):
    """Tile short signals and randomly crop long ones to exactly ``seconds``."""
    x = np.asarray(x, dtype=np.float64)
    if x.size == 0:
        raise DegenerateInputError("empty signal")
    target = int(round(seconds * sample_rate))
    if x.size == target:
        return x.copy()
    if x.size < target:
        reps = -(-target // x.size)
        return np.tile(x, reps)[:target]
    start = int(rng.integers(0, x.size - target + 1))
    return x[start:start + target].copy()


def irm(clean_spec: Spectrogram, noise_spec: Spectrogram) -> np.ndarray:
    """Ideal ratio mask sqrt(|S|^2 / (|S|^2 + |N|^2)) with bin 0 dropped."""
    if clean_spec.frames.shape != noise_spec.frames.shape:
        raise ShapeError(f"misaligned spectrograms {clean_spec.frames.shape} vs {noise_spec.frames.shape}")
    ps = np.abs(clean_spec.frames[:, 1:]) ** 2
    pn = np.abs(noise_spec.frames[:, 1:]) ** 2
    return np.sqrt(ps / np.maximum(ps + pn, EPS))


def apply_mask(noisy_spec: Spectrogram, mask) -> np.ndarray:
    """Scale the noisy magnitude by ``mask`` (bin 0 re-inserted as zero), keep the noisy phase."""
    mask = np.asarray(mask, dtype=np.float64)
    if mask.shape != (noisy_spec.n_frames, MASK_DIM):
        raise ShapeError(f"mask shape {mask.shape} vs ({noisy_spec.n_frames}, {MASK_DIM})")
    full = np.concatenate([np.zeros((mask.shape[0], 1)), mask], axis=1)
    return istft(Spectrogram(noisy_spec.frames * full, noisy_spec.length))


def log_power(spec: Spectrogram) -> np.ndarray:
    return np.log(np.abs(spec.frames[:, 1:]) ** 2 + EPS)


@dataclass
class FeatureNormalizer:
    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def fit(cls, frames: list, floor: float = 1e-6) -> "FeatureNormalizer":
        stacked = np.concatenate(frames)
        return cls(stacked.mean(axis=0), np.sqrt(np.maximum(stacked.var(axis=0), floor ** 2)))

    def __call__(self, raw):
        return (raw - self.mean) / self.std

    def to_json(self) -> str:
        return json.dumps({"mean": self.mean.tolist(), "std": self.std.tolist()})

    @classmethod
    def from_json(cls, text: str) -> "FeatureNormalizer":
        d = json.loads(text)
        return cls(np.array(d["mean"]), np.array(d["std"]))


def features(noisy_spec: Spectrogram, normalizer: FeatureNormalizer | None) -> np.ndarray:
    """Normalized 256-dim log-power spectra."""
    if normalizer is None:
        raise ValueError("features need a fitted normalizer")
    return normalizer(log_power(noisy_spec))


# --------------------------------------------------------------------------
# WAV files (16-bit PCM, mono, 16 kHz)


def read_wav(path) -> np.ndarray:
    try:
        with wave.open(str(path), "rb") as w:
            if w.getnchannels() != 1 or w.getsampwidth() != 2 or w.getframerate() != SAMPLE_RATE:
                raise FormatError(
                    f"{path}: need mono 16-bit PCM at {SAMPLE_RATE} Hz, got {w.getnchannels()} ch, "
                    f"{8 * w.getsampwidth()} bit, {w.getframerate()} Hz")
            data = w.readframes(w.getnframes())
    except wave.Error as e:
        raise FormatError(f"{path}: {e}") from e
    return np.frombuffer(data, dtype="<i2").astype(np.float64) / 32768.0


def write_wav(path, x) -> None:
    x = np.asarray(x, dtype=np.float64)
    pcm = np.clip(np.round(x * 32768.0), -32768, 32767).astype("<i2")
    with wave.open(str(path), "wb") as w:
        w.setnchannels(1)
        w.setsampwidth(2)
        w.setframerate(SAMPLE_RATE)
        w.writeframes(pcm.tobytes())


# --------------------------------------------------------------------------
# synthetic clean "speech" and noise


def synth_speech(rng: np.random.Generator, seconds: float, sample_rate: int = SAMPLE_RATE):
    """Harmonic tone complex with a gliding pitch, formant-like spectral
    envelope and syllable-rate amplitude modulation with short pauses."""
    n = int(round(seconds * sample_rate))
    t = np.arange(n) / sample_rate
    f0_base = rng.uniform(90, 240)
    f0 = f0_base * (1 + 0.12 * np.sin(2 * np.pi * rng.uniform(0.2, 0.8) * t + rng.uniform(0, 2 * np.pi)))
    phase = 2 * np.pi * np.cumsum(f0) / sample_rate
    formants = rng.uniform([400, 1000, 2200], [900, 1800, 3200])
    out = np.zeros(n)
    for h in range(1, int(4000 // f0_base) + 1):
        fh = h * f0_base
        gain = sum(np.exp(-0.5 * ((fh - fm) / 180.0) ** 2) for fm in formants) + 0.05 / h
        out += gain * np.sin(h * phase + rng.uniform(0, 2 * np.pi))
    rate = rng.uniform(3, 6)
    envelope = np.clip(np.sin(2 * np.pi * rate * t + rng.uniform(0, 2 * np.pi)), 0, None) ** 0.7
    gate = (rng.random(int(seconds * 2) + 1) > 0.2).repeat(sample_rate // 2)[:n]
    out *= envelope * np.pad(gate, (0, max(0, n - gate.size)))[:n]
    peak = np.abs(out).max()
    return out / peak * 0.5 if peak > 0 else out


NOISE_TYPES = ("white", "pink", "brown", "am_white", "am_pink", "babble")


def _colored(rng, n, exponent, sample_rate=SAMPLE_RATE, corner_hz=50.0):
    """1/f^exponent noise, flat below ``corner_hz`` so it carries no DC drift."""
    spec = np.fft.rfft(rng.standard_normal(n))
    f = np.fft.rfftfreq(n, 1.0 / sample_rate)
    spec /= np.maximum(f, corner_hz) ** (exponent / 2)
    return np.fft.irfft(spec, n)


def synth_noise(kind: str, rng: np.random.Generator, seconds: float, sample_rate: int = SAMPLE_RATE):
    n = int(round(seconds * sample_rate))
    t = np.arange(n) / sample_rate
    if kind == "white":
        x = rng.standard_normal(n)
    elif kind == "pink":
        x = _colored(rng, n, 1.0, sample_rate)
    elif kind == "brown":
        x = _colored(rng, n, 2.0, sample_rate)
    elif kind in ("am_white", "am_pink"):
        base = rng.standard_normal(n) if kind == "am_white" else _colored(rng, n, 1.0, sample_rate)
        x = base * (1 + 0.8 * np.sin(2 * np.pi * rng.uniform(1, 4) * t))
    elif kind == "babble":
        x = sum(synth_speech(rng, seconds, sample_rate) for _ in range(4))
    else:
        raise ValueError(f"unknown noise type {kind!r}")
    return x / np.sqrt(np.mean(x ** 2)) * 0.1
