"""Synthetic speakers, two-speaker mixtures, and a controllable toy separator.

Speakers are harmonic sources colored by three formant resonators.
Extraction samples obey the exact additive model y = s_t + s_i; the toy
separator leaks, adds noise, and flips target and interferer with a
configured probability, standing in for a real extraction network with a
tunable confusion rate.
"""

from __future__ import annotations

import csv
import json
import os
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
from scipy import signal as sp_signal

from .audio import Waveform, load_wav, mix, save_wav, truncate_random

SAMPLE_RATE = 8000
FREQ_FLOOR = 50.0
FREQ_CEIL = 3800.0

# Independent RNG stream tags; every stream is keyed by these plus the
# user seed and sample index, so e.g. changing the confusion probability
# re-flips only the Bernoulli draws and never the audio.
_STREAM_SPEAKER = 1
_STREAM_UTTERANCE = 2
_STREAM_CONFUSION = 3
_STREAM_NOISE = 4
_STREAM_TRUNCATE = 5
_STREAM_PAIRING = 6

# Roles of the four utterances inside an extraction sample.
_ROLE_SOURCE_T = 0
_ROLE_SOURCE_I = 1
_ROLE_ENROLL_T = 2
_ROLE_ENROLL_I = 3

MANIFEST_NAME = "manifest.csv"
META_NAME = "meta.json"
MANIFEST_FIELDS = [
    "sample_id",
    "mixture",
    "source_target",
    "source_interferer",
    "enroll_target",
    "enroll_interferer",
    "spk_target",
    "spk_interferer",
    "confused_flag",
]


def _derive_seed(*parts: int) -> np.random.Generator:
    return np.random.default_rng(list(parts))


def fold_seed(*parts: int) -> int:
    """Stable derived integer seed from integer components."""
    return int(np.random.SeedSequence(list(parts)).generate_state(1)[0])


@dataclass(frozen=True)
class SyntheticSpeaker:
    """Voice parameters; per-utterance jitter makes utterances vary."""

    id: int
    fundamental_f0: float
    formant_centers: tuple[float, float, float]
    formant_bandwidths: tuple[float, float, float]
    f0_jitter: float
    formant_jitter: float


@dataclass
class ConfusionConfig:
    """Controls the separator: flip probability, leakage, noise, seed."""

    probability: float = 0.1
    leakage: float = 0.05
    noise_snr_db: float | None = 20.0
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.probability <= 1.0:
            raise ValueError("confusion probability must lie in [0, 1]")
        if not 0.0 <= self.leakage < 1.0:
            raise ValueError("leakage fraction must lie in [0, 1)")


@dataclass
class ExtractionSample:
    """One evaluation unit: mixture, both sources, both enrollments."""

    mixture: Waveform
    source_target: Waveform
    source_interferer: Waveform
    enroll_target: Waveform
    enroll_interferer: Waveform
    spk_target: int
    spk_interferer: int
    index: int = 0
    swapped: bool = False


def make_speakers(count: int, seed: int = 0) -> list[SyntheticSpeaker]:
    """Draw reproducible speaker parameter sets."""
    rng = _derive_seed(_STREAM_SPEAKER, seed)
    speakers = []
    for i in range(count):
        speakers.append(
            SyntheticSpeaker(
                id=i,
                fundamental_f0=float(rng.uniform(105.0, 235.0)),
                formant_centers=(
                    float(rng.uniform(350.0, 850.0)),
                    float(rng.uniform(1000.0, 2100.0)),
                    float(rng.uniform(2400.0, 3300.0)),
                ),
                formant_bandwidths=(
                    float(rng.uniform(60.0, 100.0)),
                    float(rng.uniform(80.0, 140.0)),
                    float(rng.uniform(120.0, 200.0)),
                ),
                f0_jitter=float(rng.uniform(0.04, 0.08)),
                formant_jitter=float(rng.uniform(0.03, 0.06)),
            )
        )
    return speakers


def utterance_params(
    spk: SyntheticSpeaker, seed: int
) -> tuple[float, list[float]]:
    """Jittered f0 and formant centers for one utterance (clamped, never an error)."""
    rng = _derive_seed(_STREAM_UTTERANCE, spk.id, seed)
    f0 = spk.fundamental_f0 * (1.0 + spk.f0_jitter * rng.uniform(-1.0, 1.0))
    formants = [
        f * (1.0 + spk.formant_jitter * rng.uniform(-1.0, 1.0))
        for f in spk.formant_centers
    ]
    f0 = float(np.clip(f0, FREQ_FLOOR, FREQ_CEIL))
    formants = [float(np.clip(f, FREQ_FLOOR, FREQ_CEIL)) for f in formants]
    return f0, formants


def synth_utterance(
    spk: SyntheticSpeaker, duration_s: float, seed: int
) -> Waveform:
    """Harmonic source shaped by formant resonators under a slow envelope.

    The fundamental carries the strongest spectral line; peak amplitude is
    normalized to 0.9. Deterministic per (speaker, seed).
    """
    if duration_s < 0.5:
        raise ValueError("utterances shorter than 0.5 s are not supported")
    f0, formants = utterance_params(spk, seed)
    rng = _derive_seed(_STREAM_UTTERANCE, spk.id, seed, 1)
    n = int(round(duration_s * SAMPLE_RATE))
    t = np.arange(n) / SAMPLE_RATE
    n_harmonics = max(1, int(FREQ_CEIL // f0))
    k = np.arange(1, n_harmonics + 1)
    phases = rng.uniform(0.0, 2.0 * np.pi, size=n_harmonics)
    # 1/k^2 rolloff keeps the fundamental dominant after formant coloring.
    amplitudes = 1.0 / k.astype(np.float64) ** 2
    source = np.sin(np.outer(t, 2.0 * np.pi * f0 * k) + phases) @ amplitudes

    shaped = source.copy()
    for f_c, bw in zip(formants, spk.formant_bandwidths):
        b, a = sp_signal.iirpeak(f_c, Q=f_c / bw, fs=SAMPLE_RATE)
        shaped += 0.5 * sp_signal.lfilter(b, a, source)

    knots = max(3, int(np.ceil(duration_s * 3.0)) + 1)
    knot_pos = np.linspace(0.0, n - 1, knots)
    envelope = np.interp(np.arange(n), knot_pos, rng.uniform(0.4, 1.0, size=knots))
    shaped *= envelope
    return Waveform(shaped * (0.9 / np.max(np.abs(shaped))), SAMPLE_RATE)


def make_extraction_sample(
    spk_t: SyntheticSpeaker,
    spk_i: SyntheticSpeaker,
    duration_s: float,
    seed: int,
    index: int = 0,
) -> ExtractionSample:
    """Synthesize sources and enrollments, mix, and package one sample.

    Each of the four utterances is synthesized slightly long and randomly
    truncated to the requested duration. The interferer source has its
    target-parallel component removed (a ~-45 dB adjustment) so that the
    two-speaker subtraction algebra is exactly well-posed.
    """
    if spk_t.id == spk_i.id:
        raise ValueError("target and interferer must be different speakers")

    def utt(spk: SyntheticSpeaker, role: int) -> Waveform:
        long = synth_utterance(spk, duration_s + 0.5, fold_seed(seed, index, role))
        return truncate_random(
            long, duration_s, fold_seed(_STREAM_TRUNCATE, seed, index, role)
        )

    s_t = utt(spk_t, _ROLE_SOURCE_T)
    s_i = utt(spk_i, _ROLE_SOURCE_I)
    e_t = utt(spk_t, _ROLE_ENROLL_T)
    e_i = utt(spk_i, _ROLE_ENROLL_I)

    coeff = np.dot(s_i.samples, s_t.samples) / np.dot(s_t.samples, s_t.samples)
    s_i = Waveform(s_i.samples - coeff * s_t.samples, SAMPLE_RATE)

    return ExtractionSample(
        mixture=mix(s_t, s_i),
        source_target=s_t,
        source_interferer=s_i,
        enroll_target=e_t,
        enroll_interferer=e_i,
        spk_target=spk_t.id,
        spk_interferer=spk_i.id,
        index=index,
    )


def swap_roles(sample: ExtractionSample) -> ExtractionSample:
    """The same mixture with target and interferer roles exchanged."""
    return replace(
        sample,
        source_target=sample.source_interferer,
        source_interferer=sample.source_target,
        enroll_target=sample.enroll_interferer,
        enroll_interferer=sample.enroll_target,
        spk_target=sample.spk_interferer,
        spk_interferer=sample.spk_target,
        swapped=not sample.swapped,
    )


def confusion_draw(sample: ExtractionSample, cfg: ConfusionConfig) -> bool:
    """The Bernoulli confusion decision the separator will make for this sample."""
    rng = _derive_seed(_STREAM_CONFUSION, cfg.seed, sample.index, int(sample.swapped))
    return bool(rng.random() < cfg.probability)


def toy_separator(sample: ExtractionSample, cfg: ConfusionConfig) -> Waveform:
    """Simulated extraction output: leaky target (or interferer when confused).

    Optionally adds white noise at the configured SNR, then least-squares
    rescales against the mixture so subtraction is energetically meaningful.
    Deterministic per (config seed, sample index).
    """
    confused = confusion_draw(sample, cfg)
    keep = sample.source_interferer if confused else sample.source_target
    leak = sample.source_target if confused else sample.source_interferer
    est = (1.0 - cfg.leakage) * keep.samples + cfg.leakage * leak.samples
    if cfg.noise_snr_db is not None:
        rng = _derive_seed(_STREAM_NOISE, cfg.seed, sample.index, int(sample.swapped))
        power = float(np.mean(est**2))
        sigma = np.sqrt(power / 10.0 ** (cfg.noise_snr_db / 10.0))
        est = est + rng.normal(0.0, sigma, size=est.size)
    y = sample.mixture.samples
    scale = float(np.dot(y, est) / np.dot(est, est))
    return Waveform(scale * est, sample.mixture.sample_rate)


@dataclass
class Corpus:
    """In-memory collection of extraction samples plus their provenance."""

    samples: list[ExtractionSample]
    speakers: list[SyntheticSpeaker]
    confusion: ConfusionConfig
    seed: int
    speaker_seed: int
    duration_s: float
    confused_flags: list[bool]


def build_corpus(
    speaker_count: int,
    n_samples: int,
    confusion: ConfusionConfig,
    duration_s: float = 3.0,
    seed: int = 0,
    speaker_seed: int | None = None,
) -> Corpus:
    """Generate a corpus in memory: seeded speakers, pairings, and samples.

    Pass a fixed speaker_seed with different sample seeds to build
    held-out corpora over the same speaker population.
    """
    if speaker_count < 2:
        raise ValueError("need at least 2 speakers")
    speakers = make_speakers(
        speaker_count, seed if speaker_seed is None else speaker_seed
    )
    pair_rng = _derive_seed(_STREAM_PAIRING, seed)
    samples = []
    for m in range(n_samples):
        t_idx, i_idx = pair_rng.choice(speaker_count, size=2, replace=False)
        samples.append(
            make_extraction_sample(
                speakers[t_idx], speakers[i_idx], duration_s, seed, index=m
            )
        )
    flags = [confusion_draw(s, confusion) for s in samples]
    return Corpus(
        samples,
        speakers,
        confusion,
        seed,
        seed if speaker_seed is None else speaker_seed,
        duration_s,
        flags,
    )


def subset(corpus: Corpus, positions: list[int]) -> Corpus:
    """A view of selected samples; sample indices (and hence seeds) are kept."""
    return Corpus(
        samples=[corpus.samples[i] for i in positions],
        speakers=corpus.speakers,
        confusion=corpus.confusion,
        seed=corpus.seed,
        speaker_seed=corpus.speaker_seed,
        duration_s=corpus.duration_s,
        confused_flags=[corpus.confused_flags[i] for i in positions],
    )


def labeled_utterances(corpus: Corpus) -> list[tuple[str, int, Waveform]]:
    """Flatten a corpus into (uid, speaker_id, waveform) training utterances."""
    pool = []
    for s in corpus.samples:
        pool.append((f"{s.index}:enroll_t", s.spk_target, s.enroll_target))
        pool.append((f"{s.index}:enroll_i", s.spk_interferer, s.enroll_interferer))
        pool.append((f"{s.index}:source_t", s.spk_target, s.source_target))
        pool.append((f"{s.index}:source_i", s.spk_interferer, s.source_interferer))
    return pool


def generate_corpus(
    speaker_count: int,
    n_samples: int,
    confusion: ConfusionConfig,
    out_dir: str | os.PathLike,
    duration_s: float = 3.0,
    seed: int = 0,
    speaker_seed: int | None = None,
) -> Path:
    """Write a corpus to disk: WAV files, manifest CSV, and a metadata sidecar.

    Returns the manifest path. Paths inside the manifest are relative to it.
    """
    out = Path(out_dir)
    wav_dir = out / "wav"
    wav_dir.mkdir(parents=True, exist_ok=True)
    corpus = build_corpus(
        speaker_count, n_samples, confusion, duration_s, seed, speaker_seed
    )

    rows = []
    for sample, flag in zip(corpus.samples, corpus.confused_flags):
        sid = f"sample_{sample.index:05d}"
        parts = {
            "mixture": sample.mixture,
            "source_target": sample.source_target,
            "source_interferer": sample.source_interferer,
            "enroll_target": sample.enroll_target,
            "enroll_interferer": sample.enroll_interferer,
        }
        row = {"sample_id": sid}
        for name, w in parts.items():
            rel = f"wav/{sid}_{name}.wav"
            save_wav(w, out / rel, encoding="float32")
            row[name] = rel
        row["spk_target"] = sample.spk_target
        row["spk_interferer"] = sample.spk_interferer
        row["confused_flag"] = int(flag)
        rows.append(row)

    manifest = out / MANIFEST_NAME
    with open(manifest, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=MANIFEST_FIELDS)
        writer.writeheader()
        writer.writerows(rows)

    meta = {
        "seed": seed,
        "speaker_seed": corpus.speaker_seed,
        "speaker_count": speaker_count,
        "n_samples": n_samples,
        "duration_s": duration_s,
        "sample_rate": SAMPLE_RATE,
        "confusion": {
            "probability": confusion.probability,
            "leakage": confusion.leakage,
            "noise_snr_db": confusion.noise_snr_db,
            "seed": confusion.seed,
        },
    }
    with open(out / META_NAME, "w") as fh:
        json.dump(meta, fh, indent=2)
        fh.write("\n")
    return manifest


def load_corpus(manifest_path: str | os.PathLike) -> Corpus:
    """Reload a generated corpus from its manifest and metadata sidecar."""
    manifest = Path(manifest_path)
    base = manifest.parent
    with open(base / META_NAME) as fh:
        meta = json.load(fh)
    confusion = ConfusionConfig(**meta["confusion"])
    speakers = make_speakers(meta["speaker_count"], meta["speaker_seed"])
    samples = []
    flags = []
    with open(manifest, newline="") as fh:
        for m, row in enumerate(csv.DictReader(fh)):
            samples.append(
                ExtractionSample(
                    mixture=load_wav(base / row["mixture"]),
                    source_target=load_wav(base / row["source_target"]),
                    source_interferer=load_wav(base / row["source_interferer"]),
                    enroll_target=load_wav(base / row["enroll_target"]),
                    enroll_interferer=load_wav(base / row["enroll_interferer"]),
                    spk_target=int(row["spk_target"]),
                    spk_interferer=int(row["spk_interferer"]),
                    index=m,
                )
            )
            flags.append(bool(int(row["confused_flag"])))
    return Corpus(
        samples,
        speakers,
        confusion,
        meta["seed"],
        meta["speaker_seed"],
        meta["duration_s"],
        flags,
    )
