import struct

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from phonoscope import audio
from phonoscope.audio import (
    MalformedWavError,
    UnsupportedWavFormatError,
    Waveform,
    convolve,
    energy,
    irfft,
    read_wav,
    resample,
    rfft,
    write_wav,
)


def naive_convolve(x, k):
    out = np.zeros(len(x) + len(k) - 1)
    for i, xi in enumerate(x):
        for j, kj in enumerate(k):
            out[i + j] += xi * kj
    return out


def _wav_bytes(fmt_tag, channels, rate, bits, payload):
    block = channels * bits // 8
    fmt = struct.pack("<HHIIHH", fmt_tag, channels, rate, rate * block, block, bits)
    body = b"WAVE" + b"fmt " + struct.pack("<I", len(fmt)) + fmt + b"data" + struct.pack("<I", len(payload)) + payload
    return b"RIFF" + struct.pack("<I", len(body)) + body


# -- Waveform ---------------------------------------------------------------


class TestWaveform:
    def test_mono_shape(self):
        w = Waveform(np.zeros(10), 16000)
        assert w.channels == 1 and len(w) == 10

    def test_rejects_nan(self):
        with pytest.raises(ValueError, match="NaN"):
            Waveform([0.0, np.nan], 16000)

    def test_rejects_zero_channels(self):
        with pytest.raises(ValueError, match="channel"):
            Waveform(np.zeros((0, 5)), 16000)

    def test_rejects_bad_rate(self):
        with pytest.raises(ValueError):
            Waveform(np.zeros(3), 0)

    def test_value_semantics(self):
        src = np.ones(4)
        w = Waveform(src, 16000)
        src[0] = 5.0
        assert w.samples[0, 0] == 1.0
        with pytest.raises(ValueError):
            w.samples[0, 0] = 2.0


# -- WAV I/O ----------------------------------------------------------------


class TestWav:
    def test_zero_mono_16k(self, tmp_path):
        p = tmp_path / "z.wav"
        p.write_bytes(_wav_bytes(1, 1, 16000, 16, b"\x00\x00" * 16000))
        w = read_wav(p)
        assert w.channels == 1 and len(w) == 16000 and w.sample_rate == 16000
        assert not np.any(w.samples)

    def test_four_channel(self, tmp_path):
        x = np.random.default_rng(0).uniform(-0.5, 0.5, (4, 300))
        write_wav(tmp_path / "rir.wav", Waveform(x, 16000))
        w = read_wav(tmp_path / "rir.wav")
        assert w.channels == 4 and w.samples.shape == (4, 300)

    def test_float32_round_trip_exact(self, tmp_path):
        x = np.random.default_rng(1).uniform(-1, 1, (2, 1001)).astype(np.float32).astype(np.float64)
        write_wav(tmp_path / "f.wav", Waveform(x, 16000), "float32")
        np.testing.assert_array_equal(read_wav(tmp_path / "f.wav").samples, x)

    def test_int16_round_trip_within_quantization(self, tmp_path):
        x = np.random.default_rng(2).uniform(-0.99, 0.99, 500)
        meta = write_wav(tmp_path / "i.wav", Waveform(x, 16000), "int16")
        assert meta["clipped"] == 0
        y = read_wav(tmp_path / "i.wav").samples[0]
        assert np.max(np.abs(y - x)) <= 0.5 / 2**15 + 1e-12

    def test_int16_clipping_reported(self, tmp_path):
        meta = write_wav(tmp_path / "c.wav", Waveform([0.0, 1.5, -0.2], 16000), "int16")
        assert meta["clipped"] == 1
        y = read_wav(tmp_path / "c.wav").samples[0]
        assert y[1] == (2**15 - 1) / 2**15

    def test_int24(self, tmp_path):
        vals = [0, 2**23 - 1, -(2**23), -1, 12345]
        payload = b"".join(struct.pack("<i", v)[:3] for v in vals)
        (tmp_path / "a.wav").write_bytes(_wav_bytes(1, 1, 16000, 24, payload))
        y = read_wav(tmp_path / "a.wav").samples[0]
        np.testing.assert_allclose(y, np.array(vals) / 2**23)

    def test_int32(self, tmp_path):
        vals = np.array([0, 2**31 - 1, -(2**31), 1000], dtype="<i4")
        (tmp_path / "b.wav").write_bytes(_wav_bytes(1, 1, 8000, 32, vals.tobytes()))
        w = read_wav(tmp_path / "b.wav")
        assert w.sample_rate == 8000
        np.testing.assert_allclose(w.samples[0], vals / 2**31)

    def test_missing_file(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            read_wav(tmp_path / "nope.wav")

    def test_truncated_header(self, tmp_path):
        p = tmp_path / "t.wav"
        p.write_bytes(b"RIFF\x10\x00")
        with pytest.raises(MalformedWavError):
            read_wav(p)

    def test_truncated_fmt_chunk(self, tmp_path):
        p = tmp_path / "t2.wav"
        p.write_bytes(_wav_bytes(1, 1, 16000, 16, b"")[:30])
        with pytest.raises(MalformedWavError):
            read_wav(p)

    def test_unsupported_codec(self, tmp_path):
        p = tmp_path / "alaw.wav"
        p.write_bytes(_wav_bytes(6, 1, 8000, 8, b"\x00" * 10))
        with pytest.raises(UnsupportedWavFormatError):
            read_wav(p)

    def test_unsupported_bit_depth(self, tmp_path):
        p = tmp_path / "u8.wav"
        p.write_bytes(_wav_bytes(1, 1, 8000, 8, b"\x80" * 10))
        with pytest.raises(UnsupportedWavFormatError):
            read_wav(p)

    def test_errors_are_distinct(self):
        assert not issubclass(MalformedWavError, UnsupportedWavFormatError)
        assert not issubclass(UnsupportedWavFormatError, MalformedWavError)

    def test_unknown_output_format(self, tmp_path):
        with pytest.raises(ValueError):
            write_wav(tmp_path / "x.wav", Waveform([0.0], 16000), "int8")


# -- FFT --------------------------------------------------------------------


class TestFFT:
    def test_impulse_is_flat(self):
        spec = rfft([1.0, 0.0, 0.0, 0.0])
        assert spec.origin_length == 4
        np.testing.assert_array_equal(spec.bins, np.ones(3, dtype=complex))

    def test_round_trip(self):
        x = np.random.default_rng(3).standard_normal(1024)
        y = irfft(rfft(x))
        assert np.sqrt(np.mean((y - x) ** 2)) / np.sqrt(np.mean(x**2)) < 1e-9

    def test_parseval_direct_sum(self):
        x = np.random.default_rng(4).standard_normal(512)
        X = rfft(x).bins
        n = len(x)
        # one-sided spectrum: interior bins count twice
        spec_energy = (abs(X[0]) ** 2 + abs(X[-1]) ** 2 + 2 * sum(abs(X[1:-1]) ** 2)) / n
        time_energy = sum(float(v) ** 2 for v in x)
        assert abs(spec_energy - time_energy) / time_energy < 1e-9

    @settings(max_examples=40, deadline=None)
    @given(n=st.one_of(st.sampled_from([2, 4, 64, 256, 1024]), st.integers(1, 999)), seed=st.integers(0, 10**6))
    def test_round_trip_and_parseval_property(self, n, seed):
        x = np.random.default_rng(seed).standard_normal(n)
        X = rfft(x).bins
        y = irfft(rfft(x))
        assert np.sqrt(np.sum((y - x) ** 2) / np.sum(x**2)) < 1e-9
        weights = np.full(len(X), 2.0)
        weights[0] = 1.0
        if n % 2 == 0:
            weights[-1] = 1.0
        assert abs(np.sum(weights * abs(X) ** 2) / n - np.sum(x**2)) / np.sum(x**2) < 1e-9

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            rfft([])

    def test_irfft_rejects_complex_dc(self):
        spec = audio.Spectrum(np.array([1 + 1j, 0, 0]), 4)
        with pytest.raises(ValueError, match="DC"):
            irfft(spec)

    def test_input_unmodified(self):
        x = np.arange(8.0)
        rfft(x)
        np.testing.assert_array_equal(x, np.arange(8.0))


# -- convolution ------------------------------------------------------------


class TestConvolve:
    def test_shift(self):
        np.testing.assert_allclose(convolve([1, 0, 0], [0, 1]), [0, 1, 0, 0], atol=1e-15)

    def test_identity(self):
        x = np.random.default_rng(5).standard_normal(50)
        np.testing.assert_allclose(convolve(x, [1.0]), x, atol=1e-14)

    def test_against_naive(self):
        g = np.random.default_rng(6)
        x, k = g.standard_normal(256), g.standard_normal(32)
        assert np.max(np.abs(convolve(x, k) - naive_convolve(x, k))) < 1e-9

    def test_truncate_mode(self):
        g = np.random.default_rng(7)
        x, k = g.standard_normal(40), g.standard_normal(9)
        y = convolve(x, k, "truncate_to_signal")
        assert len(y) == 40
        np.testing.assert_allclose(y, naive_convolve(x, k)[:40], atol=1e-12)

    @settings(max_examples=30, deadline=None)
    @given(n=st.integers(1, 512), m=st.integers(1, 64), seed=st.integers(0, 10**6))
    def test_property_naive(self, n, m, seed):
        g = np.random.default_rng(seed)
        x, k = g.standard_normal(n), g.standard_normal(m)
        y = convolve(x, k)
        ref = naive_convolve(x, k)
        assert len(y) == n + m - 1
        assert np.sqrt(np.sum((y - ref) ** 2)) <= 1e-9 * max(1.0, np.sqrt(np.sum(ref**2)))

    def test_empty(self):
        with pytest.raises(ValueError):
            convolve([], [1.0])


# -- resampling -------------------------------------------------------------


def _fit_sine(y, rate, f_guess):
    """Least-squares fit of a*sin + b*cos + c over a frequency grid around f_guess."""
    t = np.arange(len(y)) / rate
    best = None
    for f in np.linspace(f_guess - 1.0, f_guess + 1.0, 2001):
        A = np.column_stack([np.sin(2 * np.pi * f * t), np.cos(2 * np.pi * f * t), np.ones_like(t)])
        coef, res, *_ = np.linalg.lstsq(A, y, rcond=None)
        r = float(res[0]) if len(res) else float(np.sum((A @ coef - y) ** 2))
        if best is None or r < best[0]:
            best = (r, f, np.hypot(coef[0], coef[1]))
    return best[1], best[2]


class TestResample:
    def test_same_rate_identity(self):
        w = Waveform(np.random.default_rng(8).standard_normal((2, 100)), 16000)
        np.testing.assert_array_equal(resample(w, 16000).samples, w.samples)

    def test_sine_16k_to_10k(self):
        t = np.arange(16000) / 16000
        w = Waveform(0.5 * np.sin(2 * np.pi * 1000 * t), 16000)
        out = resample(w, 10000)
        assert out.sample_rate == 10000 and abs(len(out) - 10000) <= 1
        steady = out.samples[0][1000:-1000]
        f, amp = _fit_sine(steady, 10000, 1000.0)
        assert abs(f - 1000.0) < 0.1
        assert abs(20 * np.log10(amp / 0.5)) < 0.5

    def test_dc_preserved(self):
        out = resample(Waveform(np.full(8000, 0.5), 16000), 10000)
        steady = out.samples[0][500:-500]
        assert np.max(np.abs(steady - 0.5)) < 1e-3

    @pytest.mark.parametrize("freq", [250.0, 1733.0, 3500.0])
    def test_peak_location(self, freq):
        t = np.arange(32000) / 16000
        out = resample(Waveform(np.sin(2 * np.pi * freq * t), 16000), 10000).samples[0][2000:-2000]
        f, _ = _fit_sine(out, 10000, freq)
        assert abs(f - freq) < 0.1

    def test_bad_rate(self):
        with pytest.raises(ValueError):
            resample(Waveform(np.zeros(4), 16000), 0)


# -- slicing and energy -----------------------------------------------------


def test_slice_full_range():
    w = Waveform(np.arange(10.0), 16000)
    np.testing.assert_array_equal(audio.slice(w, 0, 10).samples, w.samples)


def test_slice_out_of_range():
    w = Waveform(np.arange(10.0), 16000)
    with pytest.raises(IndexError):
        audio.slice(w, 5, 11)
    with pytest.raises(IndexError):
        audio.slice(w, 4, 4)


def test_energy():
    assert energy([3, 4]) == 25
    assert energy(np.zeros(7)) == 0


def test_require_rate():
    with pytest.raises(audio.SampleRateError):
        audio.require_rate(Waveform(np.zeros(3), 8000))
