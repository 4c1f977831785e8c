"""Log-mel front-end, the toy linear speaker encoder, and embedding distances.

The encoder mean-pools log-mel frames over time, applies a trainable
D x F projection, and L2-normalizes the result. Distances follow the
conventions used everywhere else in the package: Euclidean distance
between unit vectors, and plain cosine similarity.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

import numpy as np

from .audio import Waveform
from .errors import NotNormalizedError, ZeroSignalError

NORM_TOL = 1e-9


@dataclass(frozen=True)
class FrontendConfig:
    """Framing and filterbank settings for the log-mel front-end."""

    frame_length_ms: float = 25.0
    hop_ms: float = 10.0
    n_mels: int = 40
    log_floor: float = 1e-10

    def frame_length(self, sample_rate: int) -> int:
        return int(round(self.frame_length_ms * sample_rate / 1000.0))

    def hop(self, sample_rate: int) -> int:
        return int(round(self.hop_ms * sample_rate / 1000.0))


@dataclass
class FeatureMatrix:
    """T x F matrix of log-mel energies plus the config that produced it."""

    frames: np.ndarray
    frame_length_ms: float
    hop_ms: float
    n_mels: int


@dataclass
class Embedding:
    """Fixed-dimension real vector; `normalized` marks unit L2 norm."""

    values: np.ndarray
    normalized: bool = False

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if not np.all(np.isfinite(self.values)):
            raise ValueError("embedding contains non-finite entries")
        if self.normalized:
            norm = float(np.linalg.norm(self.values))
            if abs(norm - 1.0) > NORM_TOL:
                raise NotNormalizedError(
                    f"embedding flagged normalized but has norm {norm!r}"
                )


def hz_to_mel(f: np.ndarray | float) -> np.ndarray | float:
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m: np.ndarray | float) -> np.ndarray | float:
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_filterbank(n_mels: int, n_fft: int, sample_rate: int) -> np.ndarray:
    """Triangular mel filters (n_mels x n_fft//2+1) spanning 0 to Nyquist."""
    nyquist = sample_rate / 2.0
    mel_points = np.linspace(0.0, hz_to_mel(nyquist), n_mels + 2)
    hz_points = np.asarray(mel_to_hz(mel_points))
    bin_freqs = np.fft.rfftfreq(n_fft, d=1.0 / sample_rate)
    bank = np.zeros((n_mels, bin_freqs.size))
    for i in range(n_mels):
        left, center, right = hz_points[i], hz_points[i + 1], hz_points[i + 2]
        rising = (bin_freqs - left) / (center - left)
        falling = (right - bin_freqs) / (right - center)
        bank[i] = np.clip(np.minimum(rising, falling), 0.0, None)
    return bank


def _frame_signal(x: np.ndarray, frame_length: int, hop: int) -> np.ndarray:
    n_frames = (x.size - frame_length) // hop + 1
    idx = np.arange(frame_length)[None, :] + hop * np.arange(n_frames)[:, None]
    return x[idx]


def log_mel_features(w: Waveform, config: FrontendConfig = FrontendConfig()) -> FeatureMatrix:
    """Hann-windowed STFT magnitudes through a mel filterbank, then log(x + floor)."""
    frame_length = config.frame_length(w.sample_rate)
    hop = config.hop(w.sample_rate)
    if len(w) < frame_length:
        raise ValueError(
            f"waveform of {len(w)} samples shorter than one {frame_length}-sample frame"
        )
    frames = _frame_signal(w.samples, frame_length, hop)
    window = np.hanning(frame_length)
    n_fft = 1
    while n_fft < frame_length:
        n_fft *= 2
    magnitude = np.abs(np.fft.rfft(frames * window, n=n_fft, axis=1))
    bank = mel_filterbank(config.n_mels, n_fft, w.sample_rate)
    mel = magnitude @ bank.T
    return FeatureMatrix(
        frames=np.log(mel + config.log_floor),
        frame_length_ms=config.frame_length_ms,
        hop_ms=config.hop_ms,
        n_mels=config.n_mels,
    )


@dataclass
class ToyEncoder:
    """Linear speaker encoder: mean-pooled log-mel features -> D-dim unit vector."""

    projection: np.ndarray
    frontend: FrontendConfig = field(default_factory=FrontendConfig)
    seed: int | None = None

    def __post_init__(self):
        self.projection = np.asarray(self.projection, dtype=np.float64)
        if self.projection.ndim != 2:
            raise ValueError("projection must be a D x F matrix")
        if self.projection.shape[0] < 2:
            raise ValueError("embedding dimension must be at least 2")
        if not np.all(np.isfinite(self.projection)):
            raise ValueError("projection contains non-finite entries")

    @property
    def embed_dim(self) -> int:
        return self.projection.shape[0]

    @property
    def n_mels(self) -> int:
        return self.projection.shape[1]


def init_encoder(
    embed_dim: int = 16,
    frontend: FrontendConfig = FrontendConfig(),
    seed: int = 0,
) -> ToyEncoder:
    """Seeded encoder with projection entries uniform in [-1/sqrt(F), 1/sqrt(F)]."""
    rng = np.random.default_rng(seed)
    bound = 1.0 / np.sqrt(frontend.n_mels)
    projection = rng.uniform(-bound, bound, size=(embed_dim, frontend.n_mels))
    return ToyEncoder(projection=projection, frontend=frontend, seed=seed)


def pooled_features(w: Waveform, config: FrontendConfig) -> np.ndarray:
    """Mean over time of the log-mel feature matrix (F-vector)."""
    return log_mel_features(w, config).frames.mean(axis=0)


def project_pooled(enc: ToyEncoder, pooled: np.ndarray) -> Embedding:
    """Apply the encoder projection to a pooled feature vector and L2-normalize."""
    raw = enc.projection @ pooled
    norm = float(np.linalg.norm(raw))
    if norm == 0.0:
        raise ZeroSignalError("projected feature vector is all zeros")
    return Embedding(values=raw / norm, normalized=True)


def encode(enc: ToyEncoder, w: Waveform) -> Embedding:
    """Embed a waveform: pooled log-mel features through the projection, normalized."""
    return project_pooled(enc, pooled_features(w, enc.frontend))


def l2_distance_normed(a: Embedding, b: Embedding) -> float:
    """Euclidean distance between two unit-norm embeddings, in [0, 2]."""
    if not (a.normalized and b.normalized):
        raise NotNormalizedError("l2_distance_normed requires normalized embeddings")
    return float(np.linalg.norm(a.values - b.values))


def cosine_similarity(a: Embedding, b: Embedding) -> float:
    """Cosine of the angle between two nonzero embeddings, in [-1, 1]."""
    na = float(np.linalg.norm(a.values))
    nb = float(np.linalg.norm(b.values))
    if na == 0.0 or nb == 0.0:
        raise ZeroSignalError("cosine similarity of a zero vector is undefined")
    return float(np.dot(a.values, b.values) / (na * nb))


def save_encoder(enc: ToyEncoder, path: str | os.PathLike) -> None:
    """Persist an encoder as a JSON document with a row-major projection."""
    doc = {
        "embed_dim": enc.embed_dim,
        "n_mels": enc.n_mels,
        "projection": enc.projection.ravel().tolist(),
        "frontend": {
            "frame_length_ms": enc.frontend.frame_length_ms,
            "hop_ms": enc.frontend.hop_ms,
            "n_mels": enc.frontend.n_mels,
            "log_floor": enc.frontend.log_floor,
        },
        "seed": enc.seed,
    }
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2)
        fh.write("\n")


def load_encoder(path: str | os.PathLike) -> ToyEncoder:
    """Load an encoder saved by save_encoder."""
    with open(path) as fh:
        doc = json.load(fh)
    frontend = FrontendConfig(**doc["frontend"])
    projection = np.asarray(doc["projection"], dtype=np.float64).reshape(
        doc["embed_dim"], doc["n_mels"]
    )
    return ToyEncoder(projection=projection, frontend=frontend, seed=doc["seed"])
