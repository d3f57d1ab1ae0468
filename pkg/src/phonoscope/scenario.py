"""Noisy mixture synthesis: speech-shaped noise, dry-signal SNR, RIR spatialization."""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass

import numpy as np

from .audio import Waveform, convolve, energy, read_wav, require_rate

MIXTURE_MANIFEST_COLUMNS = (
    "utterance_id",
    "speech_path",
    "noise_path",
    "rir_speech_path",
    "rir_noise_path",
    "snr_db",
    "seed",
)


def rng(seed: int, stream: int = 0) -> np.random.Generator:
    """Counter-based generator keyed by ``(seed, stream)``."""
    return np.random.Generator(np.random.Philox(key=[int(seed) & (2**64 - 1), int(stream)]))


@dataclass(frozen=True, eq=False)
class RIRSet:
    speech_rir: Waveform
    noise_rir: Waveform

    def __post_init__(self):
        if self.speech_rir.channels != self.noise_rir.channels:
            raise ValueError(
                f"speech RIR has {self.speech_rir.channels} channels, "
                f"noise RIR has {self.noise_rir.channels}"
            )
        if self.speech_rir.sample_rate != self.noise_rir.sample_rate:
            raise ValueError("speech and noise RIRs have different sample rates")

    @property
    def channels(self) -> int:
        return self.speech_rir.channels

    @classmethod
    def identity(cls, channels: int = 1, sample_rate: int = 16000) -> "RIRSet":
        impulse = np.zeros((channels, 1))
        impulse[:, 0] = 1.0
        return cls(Waveform(impulse, sample_rate), Waveform(impulse, sample_rate))

    @classmethod
    def from_files(cls, speech_path, noise_path) -> "RIRSet":
        return cls(require_rate(read_wav(speech_path), what=str(speech_path)),
                   require_rate(read_wav(noise_path), what=str(noise_path)))


@dataclass(frozen=True, eq=False)
class MixtureBundle:
    mixture: Waveform
    speech_image: Waveform
    noise_image: Waveform
    snr_db: float
    seed: int
    speech_dry: Waveform | None = None
    noise_dry: Waveform | None = None

    def __post_init__(self):
        shapes = {w.samples.shape for w in (self.mixture, self.speech_image, self.noise_image)}
        if len(shapes) != 1:
            raise ValueError(f"mixture components disagree in shape: {sorted(shapes)}")


def _mono(wave: Waveform, what: str) -> np.ndarray:
    if wave.channels != 1:
        raise ValueError(f"{what} must be single-channel, got {wave.channels} channels")
    return wave.samples[0]


def generate_ssn(sources, target_length: int, seed: int = 0) -> Waveform:
    """Speech-shaped noise with the magnitude spectrum of the concatenated sources.

    The sources are concatenated and cropped or tiled to ``target_length``.
    Every bin keeps its magnitude and gets a uniform random phase; the DC
    and Nyquist bins keep their original (real) values so the inverse is real.
    """
    sources = list(sources)
    if not sources:
        raise ValueError("generate_ssn needs at least one speech source")
    if target_length <= 0:
        raise ValueError("target_length must be positive")
    rates = {s.sample_rate for s in sources}
    if len(rates) != 1:
        raise ValueError(f"sources have mixed sample rates {sorted(rates)}")
    concat = np.concatenate([_mono(s, "SSN source") for s in sources])
    if energy(concat) == 0.0:
        raise ValueError("all SSN sources are silent")
    reps = -(-target_length // len(concat))
    base = np.tile(concat, reps)[:target_length]
    if energy(base) == 0.0:
        raise ValueError("SSN source material is silent over the requested length")

    spec = np.fft.rfft(base)
    phase = rng(seed).uniform(0.0, 2.0 * np.pi, size=len(spec))
    shaped = np.abs(spec) * np.exp(1j * phase)
    shaped[0] = spec[0]
    if target_length % 2 == 0:
        shaped[-1] = spec[-1]
    return Waveform(np.fft.irfft(shaped, target_length), rates.pop())


def dry_snr_db(speech: Waveform, noise: Waveform) -> float:
    return 10.0 * np.log10(energy(speech.samples) / energy(noise.samples))


def snr_gain(speech: Waveform, noise: Waveform, snr_db: float) -> float:
    """Amplitude gain on ``noise`` giving ``snr_db`` over full-signal energies."""
    es = energy(_mono(speech, "dry speech"))
    en = energy(_mono(noise, "dry noise"))
    if es == 0.0:
        raise ValueError("dry speech has zero energy")
    if en == 0.0:
        raise ValueError("dry noise has zero energy")
    return float(np.sqrt(es / (en * 10.0 ** (snr_db / 10.0))))


def scale_to_snr(speech_dry: Waveform, noise_dry: Waveform, snr_db: float) -> Waveform:
    g = snr_gain(speech_dry, noise_dry, snr_db)
    return Waveform(noise_dry.samples * g, noise_dry.sample_rate)


def spatialize(dry: Waveform, rir: Waveform) -> Waveform:
    x = _mono(dry, "dry source")
    if len(rir) == 0:
        raise ValueError("RIR is empty")
    if rir.sample_rate != dry.sample_rate:
        raise ValueError(f"RIR rate {rir.sample_rate} != source rate {dry.sample_rate}")
    out = np.stack([convolve(x, h, "full") for h in rir.samples])
    return Waveform(out, dry.sample_rate)


def fit_noise_length(noise: Waveform, length: int, seed: int) -> Waveform:
    """Crop (longer) or circularly tile (shorter) ``noise`` from a seeded offset."""
    n = _mono(noise, "dry noise")
    offset_rng = rng(seed, stream=1)
    if len(n) >= length:
        start = int(offset_rng.integers(0, len(n) - length + 1))
        out = n[start : start + length]
    else:
        start = int(offset_rng.integers(0, len(n)))
        out = np.take(n, np.arange(start, start + length), mode="wrap")
    return Waveform(out, noise.sample_rate)


def _pad_to(wave: Waveform, length: int) -> np.ndarray:
    out = np.zeros((wave.channels, length))
    out[:, : len(wave)] = wave.samples
    return out


def make_mixture(
    speech_dry: Waveform,
    noise_dry: Waveform,
    rirs: RIRSet,
    snr_db: float,
    seed: int = 0,
) -> MixtureBundle:
    """Scale noise on the dry signals, spatialize both, and sum."""
    _mono(speech_dry, "dry speech")
    if noise_dry.sample_rate != speech_dry.sample_rate:
        raise ValueError("speech and noise sample rates differ")
    noise = fit_noise_length(noise_dry, len(speech_dry), seed)
    noise = scale_to_snr(speech_dry, noise, snr_db)
    s_img = spatialize(speech_dry, rirs.speech_rir)
    n_img = spatialize(noise, rirs.noise_rir)
    length = max(len(s_img), len(n_img))
    s = _pad_to(s_img, length)
    n = _pad_to(n_img, length)
    rate = speech_dry.sample_rate
    return MixtureBundle(
        mixture=Waveform(s + n, rate),
        speech_image=Waveform(s, rate),
        noise_image=Waveform(n, rate),
        snr_db=float(snr_db),
        seed=int(seed),
        speech_dry=speech_dry,
        noise_dry=noise,
    )


def read_mixture_manifest(path) -> list[dict]:
    """Rows of a mixture manifest with paths resolved against its directory.

    ``clean_path`` is accepted as an alias of ``speech_path`` so a corpus
    manifest can drive mixture generation directly.
    """
    base = os.path.dirname(os.path.abspath(path))
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        rows = list(reader)
    errors = []
    out = []
    for i, row in enumerate(rows, 2):
        if "speech_path" not in row and "clean_path" in row:
            row["speech_path"] = row["clean_path"]
        missing = [c for c in ("utterance_id", "speech_path", "noise_path", "snr_db", "seed")
                   if not (row.get(c) or "").strip()]
        if missing:
            errors.append(f"line {i}: missing {', '.join(missing)}")
            continue
        try:
            snr = float(row["snr_db"])
            seed = int(row["seed"])
        except ValueError as exc:
            errors.append(f"line {i}: {exc}")
            continue
        item = {"utterance_id": row["utterance_id"].strip(), "snr_db": snr, "seed": seed}
        for key in ("speech_path", "noise_path", "rir_speech_path", "rir_noise_path"):
            value = (row.get(key) or "").strip()
            item[key] = os.path.join(base, value) if value else ""
        out.append(item)
    ids = [r["utterance_id"] for r in out]
    dupes = sorted({u for u in ids if ids.count(u) > 1})
    if dupes:
        errors.append(f"duplicate utterance ids: {', '.join(dupes)}")
    if errors:
        raise ValueError("invalid mixture manifest:\n  " + "\n  ".join(errors))
    return out
