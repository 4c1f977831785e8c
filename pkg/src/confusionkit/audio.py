"""Mono waveforms, WAV I/O, mixing, truncation, and scale-invariant SDR metrics.

All metric math runs on float64 samples in nominal range [-1, 1];
16-bit integers exist only at the file boundary.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np
from scipy.io import wavfile

from .errors import (
    ChannelCountError,
    EncodingError,
    LengthMismatchError,
    SampleRateMismatchError,
    ZeroSignalError,
)

# Guard inside the SI-SDR ratio, relative to the projected-signal energy.
SI_SDR_EPS = 1e-8
# Symmetric cap: (near-)perfect reconstructions pin at +CAP_DB, degenerate
# ones at -CAP_DB, so exact-recovery tests stay deterministic.
CAP_DB = 60.0

_PCM16_SCALE = 32768.0


@dataclass(eq=False)
class Waveform:
    """Mono sampled audio: float64 samples plus a sample rate in Hz."""

    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 1:
            raise ChannelCountError(
                f"waveform must be mono (1-D), got shape {self.samples.shape}"
            )
        if self.samples.size < 1:
            raise ValueError("waveform must contain at least one sample")
        if int(self.sample_rate) <= 0:
            raise ValueError(f"sample_rate must be positive, got {self.sample_rate}")
        self.sample_rate = int(self.sample_rate)

    def __len__(self) -> int:
        return self.samples.size

    @property
    def duration_s(self) -> float:
        return self.samples.size / self.sample_rate


def load_wav(path: str | os.PathLike) -> Waveform:
    """Read a mono RIFF/WAVE file (PCM16 or float32) into [-1, 1] float64.

    Raises FileNotFoundError, ChannelCountError, or EncodingError.
    """
    if not os.path.exists(path):
        raise FileNotFoundError(f"no such file: {path}")
    try:
        rate, data = wavfile.read(path)
    except ValueError as exc:
        raise EncodingError(f"{path}: not a readable RIFF/WAVE file ({exc})") from exc
    if data.ndim != 1:
        raise ChannelCountError(
            f"{path}: expected mono, got {data.shape[1]} channels"
        )
    if data.dtype == np.int16:
        samples = data.astype(np.float64) / _PCM16_SCALE
    elif data.dtype == np.float32:
        samples = data.astype(np.float64)
    else:
        raise EncodingError(
            f"{path}: unsupported sample encoding {data.dtype}, "
            "expected PCM 16-bit or 32-bit float"
        )
    return Waveform(samples, rate)


def save_wav(w: Waveform, path: str | os.PathLike, encoding: str = "float32") -> None:
    """Write a waveform as mono WAV, either 'float32' or 'pcm16'.

    PCM16 round-trips within 1/32768 per sample; float32 is exact for
    float32-representable samples.
    """
    if not np.all(np.isfinite(w.samples)):
        raise ValueError("cannot save non-finite samples")
    if encoding == "float32":
        wavfile.write(path, w.sample_rate, w.samples.astype(np.float32))
    elif encoding == "pcm16":
        scaled = np.round(w.samples * _PCM16_SCALE)
        clipped = np.clip(scaled, -32768, 32767).astype(np.int16)
        wavfile.write(path, w.sample_rate, clipped)
    else:
        raise ValueError(f"unknown encoding {encoding!r}, use 'float32' or 'pcm16'")


def mix(a: Waveform, b: Waveform) -> Waveform:
    """Sample-wise sum truncated to the shorter operand ('minimum' mode)."""
    if a.sample_rate != b.sample_rate:
        raise SampleRateMismatchError(
            f"cannot mix {a.sample_rate} Hz with {b.sample_rate} Hz"
        )
    n = min(len(a), len(b))
    return Waveform(a.samples[:n] + b.samples[:n], a.sample_rate)


def truncate_random(w: Waveform, duration_s: float, seed: int) -> Waveform:
    """Take a contiguous segment of duration_s seconds at a seeded random offset."""
    n = int(round(duration_s * w.sample_rate))
    if len(w) < n:
        raise ValueError(
            f"waveform of {len(w)} samples shorter than requested {n}"
        )
    rng = np.random.default_rng(seed)
    start = int(rng.integers(0, len(w) - n + 1))
    return Waveform(w.samples[start : start + n].copy(), w.sample_rate)


def _si_sdr_array(est: np.ndarray, ref: np.ndarray) -> float:
    ref_energy = float(np.dot(ref, ref))
    if ref_energy == 0.0:
        raise ZeroSignalError("reference signal is all zeros")
    scale = float(np.dot(est, ref)) / ref_energy
    s_target = scale * ref
    e_noise = est - s_target
    target_energy = float(np.dot(s_target, s_target))
    noise_energy = float(np.dot(e_noise, e_noise))
    if target_energy == 0.0:
        return -CAP_DB
    # Epsilon is relative to the target energy so the metric stays exactly
    # scale invariant; the clip realizes the +/- CAP_DB caps.
    ratio = target_energy / (noise_energy + SI_SDR_EPS * target_energy)
    return float(np.clip(10.0 * np.log10(ratio), -CAP_DB, CAP_DB))


def si_sdr(est: Waveform, ref: Waveform) -> float:
    """Scale-invariant SDR of an estimate against a reference, in dB.

    Projects the estimate onto the reference, compares projected versus
    residual energy, and caps the result at +/- CAP_DB.
    """
    if len(est) != len(ref):
        raise LengthMismatchError(
            f"length mismatch: estimate {len(est)} vs reference {len(ref)}"
        )
    return _si_sdr_array(est.samples, ref.samples)


def si_sdr_improvement(est: Waveform, mixture: Waveform, ref: Waveform) -> float:
    """SI-SDR of the estimate minus SI-SDR of the mixture, both against ref."""
    return si_sdr(est, ref) - si_sdr(mixture, ref)
