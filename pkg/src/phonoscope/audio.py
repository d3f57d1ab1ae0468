"""Audio containers, WAV I/O and the DSP primitives shared by the pipeline."""

from __future__ import annotations

import os
import struct
from dataclasses import dataclass
from math import gcd

import numpy as np
from scipy import signal as sps

WORKING_RATE = 16000

_FORMAT_PCM = 0x0001
_FORMAT_FLOAT = 0x0003
_FORMAT_EXTENSIBLE = 0xFFFE


class WavError(Exception):
    """Base class for WAV decoding problems."""


class MalformedWavError(WavError):
    pass


class UnsupportedWavFormatError(WavError):
    pass


class SampleRateError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class Waveform:
    """Multichannel signal stored as a read-only ``(channels, n)`` float64 array."""

    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        data = np.array(self.samples, dtype=np.float64, copy=True)
        if data.ndim == 1:
            data = data[np.newaxis, :]
        if data.ndim != 2:
            raise ValueError(f"samples must be 1-D or 2-D, got shape {data.shape}")
        if data.shape[0] < 1:
            raise ValueError("a waveform needs at least one channel")
        if not np.all(np.isfinite(data)):
            raise ValueError("waveform contains NaN or Inf samples")
        if int(self.sample_rate) != self.sample_rate or self.sample_rate <= 0:
            raise ValueError(f"sample_rate must be a positive integer, got {self.sample_rate}")
        data.flags.writeable = False
        object.__setattr__(self, "samples", data)
        object.__setattr__(self, "sample_rate", int(self.sample_rate))

    @property
    def channels(self) -> int:
        return self.samples.shape[0]

    def __len__(self) -> int:
        return self.samples.shape[1]

    @property
    def duration(self) -> float:
        return len(self) / self.sample_rate

    def channel(self, index: int) -> np.ndarray:
        return self.samples[index].copy()

    @classmethod
    def mono(cls, samples, sample_rate: int) -> "Waveform":
        return cls(np.asarray(samples, dtype=np.float64).reshape(1, -1), sample_rate)


@dataclass(frozen=True, eq=False)
class Spectrum:
    bins: np.ndarray
    origin_length: int

    def __post_init__(self):
        if len(self.bins) != self.origin_length // 2 + 1:
            raise ValueError(
                f"{len(self.bins)} bins do not match a length-{self.origin_length} real DFT"
            )


def require_rate(wave: Waveform, rate: int = WORKING_RATE, what: str = "audio") -> Waveform:
    if wave.sample_rate != rate:
        raise SampleRateError(f"{what} is at {wave.sample_rate} Hz, expected {rate} Hz")
    return wave


# --------------------------------------------------------------------------
# WAV files
# --------------------------------------------------------------------------


def _parse_fmt(chunk: bytes):
    if len(chunk) < 16:
        raise MalformedWavError("fmt chunk shorter than 16 bytes")
    tag, channels, rate, _, block_align, bits = struct.unpack("<HHIIHH", chunk[:16])
    if tag == _FORMAT_EXTENSIBLE:
        if len(chunk) < 26:
            raise MalformedWavError("truncated WAVE_FORMAT_EXTENSIBLE fmt chunk")
        tag = struct.unpack("<H", chunk[24:26])[0]
    if channels < 1:
        raise MalformedWavError("fmt chunk declares zero channels")
    if rate < 1:
        raise MalformedWavError("fmt chunk declares a zero sample rate")
    if tag == _FORMAT_PCM:
        if bits not in (16, 24, 32):
            raise UnsupportedWavFormatError(f"{bits}-bit PCM is not supported")
    elif tag == _FORMAT_FLOAT:
        if bits != 32:
            raise UnsupportedWavFormatError(f"{bits}-bit float is not supported")
    else:
        raise UnsupportedWavFormatError(f"unsupported WAV codec tag 0x{tag:04x}")
    if block_align != channels * bits // 8:
        raise MalformedWavError(f"block align {block_align} inconsistent with {channels}x{bits} bit")
    return tag, channels, rate, bits


def _decode(data: bytes, tag: int, channels: int, bits: int) -> np.ndarray:
    width = bits // 8
    frames = len(data) // (width * channels)
    data = data[: frames * width * channels]
    if tag == _FORMAT_FLOAT:
        flat = np.frombuffer(data, dtype="<f4").astype(np.float64)
    elif bits == 16:
        flat = np.frombuffer(data, dtype="<i2").astype(np.float64) / 2**15
    elif bits == 32:
        flat = np.frombuffer(data, dtype="<i4").astype(np.float64) / 2**31
    else:
        raw = np.frombuffer(data, dtype=np.uint8).reshape(-1, 3).astype(np.int32)
        ints = raw[:, 0] | (raw[:, 1] << 8) | (raw[:, 2] << 16)
        ints = np.where(ints >= 2**23, ints - 2**24, ints)
        flat = ints.astype(np.float64) / 2**23
    return flat.reshape(frames, channels).T


def read_wav(path) -> Waveform:
    """Read a PCM (16/24/32-bit) or float32 WAV file.

    Integer formats are scaled to [-1, 1). Raises ``FileNotFoundError``,
    :class:`MalformedWavError` or :class:`UnsupportedWavFormatError`.
    """
    path = os.fspath(path)
    if not os.path.isfile(path):
        raise FileNotFoundError(f"no such WAV file: {path}")
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 12 or blob[:4] != b"RIFF" or blob[8:12] != b"WAVE":
        raise MalformedWavError(f"{path}: missing RIFF/WAVE header")

    fmt = None
    data = None
    pos = 12
    while pos + 8 <= len(blob):
        cid = blob[pos : pos + 4]
        size = struct.unpack("<I", blob[pos + 4 : pos + 8])[0]
        body = blob[pos + 8 : pos + 8 + size]
        if cid == b"fmt ":
            if len(body) < size:
                raise MalformedWavError(f"{path}: truncated fmt chunk")
            fmt = _parse_fmt(body)
        elif cid == b"data":
            data = body
            if fmt is None:
                raise MalformedWavError(f"{path}: data chunk precedes fmt chunk")
        pos += 8 + size + (size & 1)
    if fmt is None:
        raise MalformedWavError(f"{path}: no fmt chunk")
    if data is None:
        raise MalformedWavError(f"{path}: no data chunk")
    tag, channels, rate, bits = fmt
    return Waveform(_decode(data, tag, channels, bits), rate)


def write_wav(path, waveform: Waveform, format: str = "float32") -> dict:
    """Write ``waveform`` as int16 or float32 WAV.

    Returns metadata with the number of samples clipped on int16 output.
    """
    if not isinstance(waveform, Waveform):
        waveform = Waveform(waveform, WORKING_RATE)
    x = waveform.samples.T
    clipped = 0
    if format == "float32":
        payload = np.ascontiguousarray(x, dtype="<f4").tobytes()
        tag, bits = _FORMAT_FLOAT, 32
    elif format == "int16":
        clipped = int(np.count_nonzero(np.abs(x) > 1.0))
        q = np.clip(np.round(x * 2**15), -(2**15), 2**15 - 1)
        payload = np.ascontiguousarray(q, dtype="<i2").tobytes()
        tag, bits = _FORMAT_PCM, 16
    else:
        raise ValueError(f"unsupported output format {format!r}")

    channels = waveform.channels
    block = channels * bits // 8
    fmt = struct.pack(
        "<HHIIHH", tag, channels, waveform.sample_rate, waveform.sample_rate * block, block, bits
    )
    body = b"WAVE" + b"fmt " + struct.pack("<I", len(fmt)) + fmt
    body += b"data" + struct.pack("<I", len(payload)) + payload
    if len(payload) & 1:
        body += b"\x00"
    with open(os.fspath(path), "wb") as fh:
        fh.write(b"RIFF" + struct.pack("<I", len(body)) + body)
    return {"path": os.fspath(path), "format": format, "clipped": clipped}


# --------------------------------------------------------------------------
# DSP primitives
# --------------------------------------------------------------------------


def _as_1d(x, name="signal") -> np.ndarray:
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim != 1:
        raise ValueError(f"{name} must be one-dimensional")
    if arr.size == 0:
        raise ValueError(f"{name} is empty")
    return arr


def rfft(x) -> Spectrum:
    x = _as_1d(x)
    return Spectrum(np.fft.rfft(x), len(x))


def irfft(spectrum: Spectrum) -> np.ndarray:
    if len(spectrum.bins) == 0:
        raise ValueError("spectrum is empty")
    bins = np.asarray(spectrum.bins, dtype=np.complex128)
    scale = max(1.0, float(np.max(np.abs(bins))))
    tol = 1e-9 * scale
    if abs(bins[0].imag) > tol:
        raise ValueError("DC bin must be real for a real inverse")
    if spectrum.origin_length % 2 == 0 and abs(bins[-1].imag) > tol:
        raise ValueError("Nyquist bin must be real for a real inverse")
    return np.fft.irfft(bins, spectrum.origin_length)


def convolve(x, kernel, mode: str = "full") -> np.ndarray:
    """Linear convolution; ``truncate_to_signal`` keeps the first ``len(x)`` samples."""
    x = _as_1d(x)
    kernel = _as_1d(kernel, "kernel")
    if mode not in ("full", "truncate_to_signal"):
        raise ValueError(f"unknown convolution mode {mode!r}")
    y = sps.oaconvolve(x, kernel, mode="full")
    return y[: len(x)] if mode == "truncate_to_signal" else y


def _resampling_filter(up: int, down: int, taps_per_phase: int = 64, beta: float = 8.0):
    # cutoff at 0.45 x the lower sampling rate, expressed relative to the
    # Nyquist of the upsampled rate
    cutoff = 0.9 / max(up, down)
    return sps.firwin(taps_per_phase * up + 1, cutoff, window=("kaiser", beta))


def resample(wave: Waveform, target_rate: int) -> Waveform:
    if target_rate <= 0 or int(target_rate) != target_rate:
        raise ValueError(f"target_rate must be a positive integer, got {target_rate}")
    target_rate = int(target_rate)
    if target_rate == wave.sample_rate:
        return Waveform(wave.samples, target_rate)
    g = gcd(wave.sample_rate, target_rate)
    up, down = target_rate // g, wave.sample_rate // g
    h = _resampling_filter(up, down)
    out = sps.resample_poly(wave.samples, up, down, axis=1, window=h)
    return Waveform(out, target_rate)


def slice(wave: Waveform, start: int, end: int) -> Waveform:  # noqa: A001
    if not 0 <= start < end <= len(wave):
        raise IndexError(f"slice [{start}, {end}) outside [0, {len(wave)}]")
    return Waveform(wave.samples[:, start:end], wave.sample_rate)


def energy(x) -> float:
    x = np.asarray(x, dtype=np.float64)
    return float(np.dot(x.ravel(), x.ravel()))
