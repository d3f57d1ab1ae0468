"""Synthetic speech-like corpora with known phoneme alignments.

The signals are crude source-filter stand-ins: vowels are formant-weighted
harmonic complexes at a gender-dependent f0, fricatives and sibilants are
band-limited noise, plosives are a closure followed by a broadband burst
and nasals are low-passed harmonics. Good enough to exercise the pipeline
with distinct narrowband and wideband segments.
"""

from __future__ import annotations

import csv
import os

import numpy as np

from .alignment import AlignmentTrack, PhonemeInterval, textgrid_text
from .audio import WORKING_RATE, Waveform, write_wav
from .scenario import generate_ssn, rng

VOWEL_FORMANTS = {
    "a": (750, 1200),
    "i": (280, 2300),
    "ɪ": (400, 1900),
    "ʊ": (450, 1050),
    "u": (320, 900),
    "ɛ": (580, 1800),
}
CONSONANTS = ("p", "t", "s", "ʃ", "f", "θ", "m", "n")
F0_RANGE = {"M": (100.0, 135.0), "F": (190.0, 240.0)}
FORMANT_SCALE = {"M": 1.0, "F": 1.15}


def _band_noise(gen, n, lo, hi, rate):
    spec = np.fft.rfft(gen.standard_normal(n))
    f = np.fft.rfftfreq(n, 1.0 / rate)
    spec[(f < lo) | (f > hi)] = 0.0
    x = np.fft.irfft(spec, n)
    return x / (np.std(x) + 1e-12)


def _fade(n, rate, ms=8.0):
    k = min(n // 2, int(rate * ms / 1000))
    w = np.ones(n)
    if k > 0:
        ramp = 0.5 - 0.5 * np.cos(np.pi * np.arange(k) / k)
        w[:k] = ramp
        w[n - k :] = ramp[::-1]
    return w


def _harmonics(gen, n, f0, rate, formants=None, cutoff=4000.0, bw=120.0):
    t = np.arange(n) / rate
    vib = 1.0 + 0.01 * np.sin(2 * np.pi * 5.0 * t + gen.uniform(0, 2 * np.pi))
    phase0 = 2 * np.pi * np.cumsum(f0 * vib) / rate
    x = np.zeros(n)
    k = 1
    while k * f0 < cutoff:
        fk = k * f0
        if formants is None:
            amp = 1.0 / k
        else:
            amp = sum(np.exp(-0.5 * ((fk - fm) / bw) ** 2) / (1 + i) for i, fm in enumerate(formants))
            amp = amp + 0.02 / k
        x += amp * np.sin(k * phase0 + gen.uniform(0, 2 * np.pi))
        k += 1
    return x / (np.std(x) + 1e-12)


def phoneme_signal(label: str, n: int, gender: str, gen, rate: int = WORKING_RATE) -> np.ndarray:
    f0 = gen.uniform(*F0_RANGE[gender])
    if label in VOWEL_FORMANTS:
        formants = tuple(FORMANT_SCALE[gender] * f for f in VOWEL_FORMANTS[label])
        x = 0.30 * _harmonics(gen, n, f0, rate, formants)
    elif label in ("s", "ʃ"):
        lo = 3800.0 if label == "s" else 2200.0
        x = 0.12 * _band_noise(gen, n, lo, 7800.0, rate)
    elif label in ("f", "θ"):
        x = 0.05 * _band_noise(gen, n, 800.0, 7800.0, rate)
    elif label in ("p", "t"):
        x = np.zeros(n)
        closure = n // 3
        burst = n - closure
        decay = np.exp(-np.arange(burst) / (0.012 * rate))
        hi = 5000.0 if label == "p" else 7800.0
        x[closure:] = 0.25 * decay * _band_noise(gen, burst, 300.0, hi, rate)
        x[:closure] = 0.003 * _band_noise(gen, closure, 80.0, 400.0, rate)
    elif label in ("m", "n"):
        x = 0.12 * _harmonics(gen, n, f0, rate, cutoff=600.0)
    else:
        raise ValueError(f"no synthetic model for phoneme {label!r}")
    return x * _fade(n, rate)


def synth_utterance(utterance_id: str, gender: str, seed: int, n_phonemes: int = 12,
                    rate: int = WORKING_RATE):
    """Return ``(Waveform, AlignmentTrack)`` for one CV-structured utterance."""
    gen = rng(seed, stream=7)
    vowels = tuple(VOWEL_FORMANTS)
    t = gen.uniform(0.10, 0.20)
    pieces = [np.zeros(int(round(t * rate)))]
    intervals = []
    for i in range(n_phonemes):
        if i % 2 == 0:
            label = CONSONANTS[int(gen.integers(len(CONSONANTS)))]
            dur = gen.uniform(0.06, 0.12)
        else:
            label = vowels[int(gen.integers(len(vowels)))]
            dur = gen.uniform(0.10, 0.20)
        n = int(round(dur * rate))
        start = sum(len(p) for p in pieces)
        pieces.append(phoneme_signal(label, n, gender, gen, rate))
        intervals.append(PhonemeInterval(label, start / rate, (start + n) / rate))
        if i % 4 == 3:
            pieces.append(np.zeros(int(round(gen.uniform(0.05, 0.12) * rate))))
    pieces.append(np.zeros(int(round(gen.uniform(0.10, 0.20) * rate))))
    x = np.concatenate(pieces)
    return Waveform(x, rate), AlignmentTrack(utterance_id, intervals)


def synth_rirs(seed: int, channels: int = 4, length: int = 1600, rate: int = WORKING_RATE,
               rt60: float = 0.25, lateral: bool = False) -> Waveform:
    """Exponentially decaying noise tails behind a direct path.

    ``lateral`` places the source off-axis: the far-ear channels get extra
    delay and attenuation.
    """
    gen = rng(seed, stream=11)
    decay = np.exp(-6.9 * np.arange(length) / (rt60 * rate))
    h = np.zeros((channels, length))
    for c in range(channels):
        far = lateral and c < channels // 2
        delay = 20 + (int(rate * 0.0006) if far else 0) + c % 2
        tail = 0.08 * gen.standard_normal(length) * decay
        tail[: delay + 1] = 0.0
        h[c] = tail
        h[c, delay] = 0.5 if far else 1.0
    return Waveform(h, rate)


BUILTIN_ALGORITHMS = ("passthrough", "oracle")


def build_corpus(out_dir, n_utterances: int = 4, snrs=(-5.0, 0.0, 5.0), seed: int = 0,
                 channels: int = 4, algorithms=BUILTIN_ALGORITHMS, ssn_seconds: float = 8.0) -> str:
    """Write a gender-balanced synthetic corpus and its manifest; return the manifest path.

    Layout: ``clean/``, ``align/``, ``noise/ssn.wav``, ``rir/{speech,noise}.wav``
    and ``manifest.csv`` whose enhanced columns point at built-in enhancers.
    """
    os.makedirs(out_dir, exist_ok=True)
    for sub in ("clean", "align", "noise", "rir"):
        os.makedirs(os.path.join(out_dir, sub), exist_ok=True)

    sources = [synth_utterance(f"ssn{g}{i}", g, seed * 1000 + 500 + 10 * i + (g == "F"))[0]
               for g in ("M", "F") for i in range(5)]
    ssn = generate_ssn(sources, int(ssn_seconds * WORKING_RATE), seed=seed)
    ssn = Waveform(ssn.samples * (0.1 / np.std(ssn.samples)), WORKING_RATE)
    write_wav(os.path.join(out_dir, "noise", "ssn.wav"), ssn, "float32")
    write_wav(os.path.join(out_dir, "rir", "speech.wav"), synth_rirs(seed, channels), "float32")
    write_wav(os.path.join(out_dir, "rir", "noise.wav"),
              synth_rirs(seed + 1, channels, lateral=True), "float32")

    rows = []
    for i in range(n_utterances):
        gender = "MF"[i % 2]
        utt = f"utt{i:03d}"
        wave, track = synth_utterance(utt, gender, seed * 1000 + i)
        write_wav(os.path.join(out_dir, "clean", f"{utt}.wav"), wave, "float32")
        with open(os.path.join(out_dir, "align", f"{utt}.TextGrid"), "w", encoding="utf-8") as fh:
            fh.write(textgrid_text(track, xmax=wave.duration))
        row = {
            "utterance_id": utt,
            "gender": gender,
            "clean_path": f"clean/{utt}.wav",
            "alignment_path": f"align/{utt}.TextGrid",
            "noise_path": "noise/ssn.wav",
            "rir_speech_path": "rir/speech.wav",
            "rir_noise_path": "rir/noise.wav",
            "snr_db": f"{float(snrs[(i // 2) % len(snrs)]):g}",
            "seed": str(seed * 1000 + i),
        }
        for alg in algorithms:
            row[f"enhanced:{alg}"] = f"@{alg}"
        rows.append(row)

    path = os.path.join(out_dir, "manifest.csv")
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(rows[0]), lineterminator="\n")
        writer.writeheader()
        writer.writerows(rows)
    return path
