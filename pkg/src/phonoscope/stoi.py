"""Short-time objective intelligibility (utterance level)."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .audio import Waveform, resample

_TINY = np.finfo(np.float64).eps


@dataclass(frozen=True)
class StoiConfig:
    frame_length: int = 256
    fft_length: int = 512
    hop: int = 128
    num_bands: int = 15
    min_center_freq: float = 150.0
    analysis_window: int = 30
    dynamic_range_db: float = 40.0
    clip_sdr_db: float = -15.0
    internal_rate: int = 10000

    def __post_init__(self):
        for name in ("frame_length", "fft_length", "hop", "num_bands", "analysis_window",
                     "internal_rate"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.fft_length < self.frame_length:
            raise ValueError("fft_length must be at least frame_length")
        if self.internal_rate != 10000:
            raise ValueError("STOI is defined at a 10 kHz internal rate")


def band_centers(cfg: StoiConfig = StoiConfig()) -> np.ndarray:
    return cfg.min_center_freq * 2.0 ** (np.arange(cfg.num_bands) / 3.0)


def third_octave_matrix(cfg: StoiConfig = StoiConfig()) -> np.ndarray:
    """Rectangular (bands x bins) grouping of DFT bins into 1/3-octave bands."""
    freqs = np.arange(cfg.fft_length // 2 + 1) * cfg.internal_rate / cfg.fft_length
    k = np.arange(cfg.num_bands)
    lows = cfg.min_center_freq * 2.0 ** ((2 * k - 1) / 6.0)
    highs = cfg.min_center_freq * 2.0 ** ((2 * k + 1) / 6.0)
    obm = np.zeros((cfg.num_bands, len(freqs)))
    for i, (lo, hi) in enumerate(zip(lows, highs)):
        lo_bin = int(np.argmin((freqs - lo) ** 2))
        hi_bin = int(np.argmin((freqs - hi) ** 2))
        obm[i, lo_bin:hi_bin] = 1.0
    return obm


def _window(cfg):
    # Hann window without its zero end points
    return np.hanning(cfg.frame_length + 2)[1:-1]


def _frames(x, cfg):
    n = 1 + (len(x) - cfg.frame_length) // cfg.hop if len(x) >= cfg.frame_length else 0
    if n == 0:
        return np.zeros((0, cfg.frame_length))
    idx = np.arange(cfg.frame_length)[None, :] + cfg.hop * np.arange(n)[:, None]
    return x[idx] * _window(cfg)


def speech_frame_mask(frames: np.ndarray, dynamic_range_db: float) -> np.ndarray:
    level = 20.0 * np.log10(np.linalg.norm(frames, axis=1) + _TINY)
    return level > level.max() - dynamic_range_db


def band_envelopes(frames: np.ndarray, cfg: StoiConfig) -> np.ndarray:
    spec = np.fft.rfft(frames, n=cfg.fft_length, axis=1)
    return np.sqrt(third_octave_matrix(cfg) @ (np.abs(spec) ** 2).T)


def _safe_div(num, den):
    den = np.broadcast_to(den, np.broadcast_shapes(np.shape(num), np.shape(den)))
    out = np.zeros(den.shape)
    np.divide(num, den, out=out, where=den > 0)
    return out


def stoi(clean, processed, sample_rate: int = 16000, cfg: StoiConfig = StoiConfig(),
         remove_silence: bool = True) -> float:
    """STOI score of ``processed`` against ``clean``.

    Both signals are resampled to 10 kHz and framed identically; frames
    more than 40 dB below the loudest clean frame are dropped from both.
    Each 30-frame band trajectory of the processed signal is normalised to
    the clean energy, clipped at the -15 dB SDR bound and correlated with
    the clean one; the score is the mean correlation.
    """
    x = np.asarray(clean, dtype=np.float64).ravel()
    y = np.asarray(processed, dtype=np.float64).ravel()
    if len(x) != len(y):
        raise ValueError(f"length mismatch: clean {len(x)}, processed {len(y)}")
    if sample_rate != cfg.internal_rate:
        x = resample(Waveform.mono(x, sample_rate), cfg.internal_rate).samples[0]
        y = resample(Waveform.mono(y, sample_rate), cfg.internal_rate).samples[0]

    xf = _frames(x, cfg)
    yf = _frames(y, cfg)
    if len(xf) == 0 or not np.any(xf):
        raise ValueError("clean signal is silent or shorter than one frame")
    if remove_silence:
        keep = speech_frame_mask(xf, cfg.dynamic_range_db)
        xf, yf = xf[keep], yf[keep]
    N = cfg.analysis_window
    if len(xf) < N:
        raise ValueError(
            f"only {len(xf)} speech frames; STOI needs at least {N} ({N * cfg.hop / cfg.internal_rate:.3f} s)"
        )

    X = band_envelopes(xf, cfg)
    Y = band_envelopes(yf, cfg)
    # all analysis windows at once: (segments, bands, N)
    xs = np.lib.stride_tricks.sliding_window_view(X, N, axis=1).transpose(1, 0, 2)
    ys = np.lib.stride_tricks.sliding_window_view(Y, N, axis=1).transpose(1, 0, 2)

    norm_x = np.linalg.norm(xs, axis=2, keepdims=True)
    norm_y = np.linalg.norm(ys, axis=2, keepdims=True)
    y_norm = ys * _safe_div(norm_x, norm_y)
    bound = 1.0 + 10.0 ** (-cfg.clip_sdr_db / 20.0)
    y_clip = np.minimum(y_norm, xs * bound)

    xc = xs - xs.mean(axis=2, keepdims=True)
    yc = y_clip - y_clip.mean(axis=2, keepdims=True)
    xc = _safe_div(xc, np.linalg.norm(xc, axis=2, keepdims=True))
    yc = _safe_div(yc, np.linalg.norm(yc, axis=2, keepdims=True))
    corr = np.sum(xc * yc, axis=2)
    return float(np.clip(corr.mean(), -1.0, 1.0))


def delta_stoi(stoi_in: float, stoi_out: float) -> float:
    for v in (stoi_in, stoi_out):
        if not -1.0 <= v <= 1.0:
            raise ValueError(f"STOI value {v} outside [-1, 1]")
    return stoi_out - stoi_in
