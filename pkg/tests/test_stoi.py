import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from phonoscope.audio import Waveform
from phonoscope.scenario import generate_ssn, scale_to_snr
from phonoscope.stoi import (
    StoiConfig,
    band_centers,
    delta_stoi,
    speech_frame_mask,
    stoi,
    third_octave_matrix,
)
from phonoscope.synth import synth_utterance

RATE = 16000


@pytest.fixture(scope="module")
def utterances():
    return [synth_utterance(f"u{i}", "MF"[i % 2], seed=i)[0] for i in range(4)]


def _noisy(clean, ssn, snr):
    noise = Waveform(ssn.samples[0][: len(clean)], RATE)
    return clean.samples[0] + scale_to_snr(clean, noise, snr).samples[0]


def test_identity(utterances):
    x = utterances[0].samples[0]
    assert abs(stoi(x, x) - 1.0) < 1e-9


@pytest.mark.parametrize("alpha", [0.25, 4.0, 1e-3])
def test_scale_invariance(utterances, alpha):
    x = utterances[1].samples[0]
    y = x + 0.3 * np.random.default_rng(0).standard_normal(len(x))
    assert abs(stoi(x, alpha * y) - stoi(x, y)) < 1e-9


def test_monotone_in_snr(utterances):
    ssn = generate_ssn(utterances, 4 * RATE, seed=0)
    means = [np.mean([stoi(u.samples[0], _noisy(u, ssn, snr)) for u in utterances])
             for snr in (-10, -5, 0, 5, 10)]
    assert all(a < b for a, b in zip(means, means[1:]))


def test_range(utterances):
    x = utterances[2].samples[0]
    y = np.random.default_rng(1).standard_normal(len(x))
    assert -1.0 <= stoi(x, y) <= 1.0


def test_internal_rate_input(utterances):
    x = utterances[0].samples[0][: RATE]
    from phonoscope.audio import resample
    x10 = resample(Waveform(x, RATE), 10000).samples[0]
    assert abs(stoi(x10, x10, 10000) - 1.0) < 1e-9


def test_band_centers():
    c = band_centers()
    assert len(c) == 15 and c[0] == 150.0
    assert np.allclose(c[1:] / c[:-1], 2 ** (1 / 3))
    assert c[-1] == pytest.approx(150 * 2 ** (14 / 3))


def test_band_matrix_disjoint_and_ordered():
    obm = third_octave_matrix()
    assert obm.shape == (15, 257)
    assert obm.sum(axis=0).max() == 1.0
    starts = [np.flatnonzero(row)[0] for row in obm]
    assert starts == sorted(starts)


@given(st.integers(0, 2**32 - 1), st.floats(10.0, 60.0))
@settings(max_examples=40, deadline=None)
def test_mask_idempotent(seed, rng_db):
    g = np.random.default_rng(seed)
    frames = g.standard_normal((50, 16)) * (10 ** g.uniform(-4, 0, 50))[:, None]
    keep = speech_frame_mask(frames, rng_db)
    kept = frames[keep]
    assert speech_frame_mask(kept, rng_db).all()


def test_errors(utterances):
    x = utterances[0].samples[0]
    with pytest.raises(ValueError, match="length"):
        stoi(x, x[:-1])
    with pytest.raises(ValueError, match="silent"):
        stoi(np.zeros(RATE), np.ones(RATE))
    with pytest.raises(ValueError, match="speech frames"):
        stoi(x[:3000], x[:3000])
    with pytest.raises(ValueError):
        StoiConfig(internal_rate=16000)


@pytest.mark.parametrize("a,b,d", [(0.57, 0.75, 0.18), (0.46, 0.61, 0.15)])
def test_delta(a, b, d):
    assert delta_stoi(a, b) == pytest.approx(d, abs=1e-12)


def test_delta_range():
    with pytest.raises(ValueError):
        delta_stoi(1.2, 0.5)


def test_reference_implementation_agreement(utterances):
    """Loose cross-check against an independent implementation.

    Silence removal differs (frame domain here, overlap-add there), so the
    scores are only expected to agree to a couple of hundredths.
    """
    pystoi = pytest.importorskip("pystoi")
    ssn = generate_ssn(utterances, 4 * RATE, seed=1)
    for u in utterances:
        for snr in (-5, 5):
            y = _noisy(u, ssn, snr)
            ours = stoi(u.samples[0], y)
            ref = pystoi.stoi(u.samples[0], y, RATE)
            assert abs(ours - ref) < 0.02
