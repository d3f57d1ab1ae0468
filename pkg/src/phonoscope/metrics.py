"""Scale-invariant interference/artifact metrics at utterance and phoneme level."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from .alignment import AlignmentTrack, CategoryMap, DEFAULT_MIN_DURATION, categorize, to_sample_ranges
from .audio import Waveform

EPS = 1e-12
CLAMP_DB = 100.0
COLLINEAR_TOL = 1e-10


@dataclass(frozen=True)
class SegmentDecomposition:
    e_target: float
    e_interf: float
    e_artif: float
    e_estimate: float
    collinear: bool = False


@dataclass
class SegmentMetrics:
    utterance_id: str
    segment_index: int
    level: str  # "utterance" or "phoneme"
    label: str
    category: str
    broad_class: str
    gender: str
    snr_db: float
    algorithm_id: str
    sir_in: float
    sir_out: float
    sar_out: float
    duration_s: float
    stoi_in: float | None = None
    stoi_out: float | None = None
    flags: str = ""
    extra: dict = field(default_factory=dict)

    def as_dict(self) -> dict:
        d = asdict(self)
        d.update(d.pop("extra"))
        return d


def clamp_db(value: float) -> float:
    return float(min(CLAMP_DB, max(-CLAMP_DB, value)))


def _ratio_db(num: float, den: float) -> float:
    return clamp_db(10.0 * np.log10(num / den))


def _check_inputs(estimate, ref_speech, ref_noise):
    e = np.asarray(estimate, dtype=np.float64)
    s = np.asarray(ref_speech, dtype=np.float64)
    n = np.asarray(ref_noise, dtype=np.float64)
    if not (e.ndim == s.ndim == n.ndim == 1):
        raise ValueError("decomposition inputs must be one-dimensional")
    if not (len(e) == len(s) == len(n)):
        raise ValueError(f"length mismatch: estimate {len(e)}, speech {len(s)}, noise {len(n)}")
    if len(e) < 2:
        raise ValueError("segments need at least two samples")
    return e, s, n


def projections(estimate, ref_speech, ref_noise):
    """Return ``(s_target, p_sn, collinear)`` for the decomposition.

    ``p_sn`` is the least-squares projection onto span{speech, noise},
    obtained by orthogonalising the noise reference against the speech
    reference (same result as solving the 2x2 Gram system).
    """
    e, s, n = _check_inputs(estimate, ref_speech, ref_noise)
    ss = float(np.dot(s, s))
    if ss == 0.0:
        raise ValueError("speech reference has zero energy")
    s_target = (np.dot(e, s) / ss) * s
    nn = float(np.dot(n, n))
    n_perp = n - (np.dot(n, s) / ss) * s
    pp = float(np.dot(n_perp, n_perp))
    # normalised Gram determinant = |n_perp|^2 / |n|^2
    if nn == 0.0 or pp / nn < COLLINEAR_TOL:
        return s_target, s_target.copy(), True
    p_sn = s_target + (np.dot(e, n_perp) / pp) * n_perp
    return s_target, p_sn, False


def si_decompose(estimate, ref_speech, ref_noise) -> SegmentDecomposition:
    e = np.asarray(estimate, dtype=np.float64)
    s_target, p_sn, collinear = projections(e, ref_speech, ref_noise)
    interf = p_sn - s_target
    artif = e - p_sn
    return SegmentDecomposition(
        e_target=float(np.dot(s_target, s_target)),
        e_interf=float(np.dot(interf, interf)),
        e_artif=float(np.dot(artif, artif)),
        e_estimate=float(np.dot(e, e)),
        collinear=collinear,
    )


def _floor(d: SegmentDecomposition) -> float:
    # relative to the estimate energy so the floor scales with the estimate
    return EPS * d.e_estimate if d.e_estimate > 0 else EPS


def sir_out(d: SegmentDecomposition) -> float:
    f = _floor(d)
    return _ratio_db(d.e_target + f, d.e_interf + f)


def sar_out(d: SegmentDecomposition) -> float:
    f = _floor(d)
    return _ratio_db(d.e_target + d.e_interf + f, d.e_artif + f)


def sir_in(speech_image_seg, noise_image_seg, method: str = "energy") -> float:
    """Input SIR of a segment.

    ``energy`` is the plain image energy ratio. ``projection`` runs the
    unprocessed mixture (speech + noise) through :func:`si_decompose`, so
    it equals ``sir_out`` of a passthrough estimate exactly.
    """
    s = np.asarray(speech_image_seg, dtype=np.float64)
    n = np.asarray(noise_image_seg, dtype=np.float64)
    if s.shape != n.shape:
        raise ValueError(f"segment shapes differ: {s.shape} vs {n.shape}")
    if method == "energy":
        return _ratio_db(float(np.dot(s, s)) + EPS, float(np.dot(n, n)) + EPS)
    if method == "projection":
        return sir_out(si_decompose(s + n, s, n))
    raise ValueError(f"unknown sir_in method {method!r}")


# --------------------------------------------------------------------------
# Utterance evaluation
# --------------------------------------------------------------------------


def align_enhanced(enhanced: np.ndarray, reference: np.ndarray, length: int,
                   delay_tolerance: int = 0, search: int = 0) -> np.ndarray:
    """Bring an enhanced signal to ``length`` samples.

    Length differences up to ``delay_tolerance`` are zero-padded or cropped
    at the end. With ``search > 0`` the lag maximising cross-correlation
    with ``reference`` within +/- ``search`` samples is removed first.
    """
    y = np.asarray(enhanced, dtype=np.float64)
    if abs(len(y) - length) > delay_tolerance:
        raise ValueError(
            f"enhanced signal has {len(y)} samples, expected {length} "
            f"(tolerance {delay_tolerance})"
        )
    out = np.zeros(length)
    m = min(length, len(y))
    out[:m] = y[:m]
    if search > 0:
        best, best_lag = -np.inf, 0
        for lag in range(-search, search + 1):
            if lag >= 0:
                c = np.dot(out[lag:], reference[: length - lag])
            else:
                c = np.dot(out[: length + lag], reference[-lag:])
            if c > best:
                best, best_lag = c, lag
        if best_lag > 0:
            out = np.concatenate([out[best_lag:], np.zeros(best_lag)])
        elif best_lag < 0:
            out = np.concatenate([np.zeros(-best_lag), out[: length + best_lag]])
    return out


def evaluate_utterance(
    bundle,
    enhanced: Waveform,
    track: AlignmentTrack,
    cmap: CategoryMap,
    gender: str,
    snr_db: float | None = None,
    algorithm_id: str = "",
    reference_channel: int = 0,
    min_duration: float = DEFAULT_MIN_DURATION,
    delay_tolerance: int = 0,
    align_search: int = 0,
    sir_in_method: str = "projection",
    utterance_scope: str = "full",
    stoi_in: float | None = None,
    compute_stoi: bool = True,
):
    """Evaluate one enhanced output against its mixture bundle.

    Returns ``(utterance_record, phoneme_records, excluded_segments)``.
    """
    from .stoi import stoi as stoi_fn

    if enhanced.channels != 1:
        raise ValueError(f"enhanced signal must be single-channel, got {enhanced.channels}")
    rate = bundle.speech_image.sample_rate
    if enhanced.sample_rate != rate:
        raise ValueError(f"enhanced signal at {enhanced.sample_rate} Hz, images at {rate} Hz")
    if not 0 <= reference_channel < bundle.speech_image.channels:
        raise ValueError(f"reference channel {reference_channel} out of range")
    length = len(bundle.speech_image)
    if track.end * rate > length + 0.5:
        raise ValueError(
            f"alignment ends at {track.end:.3f} s beyond the {length / rate:.3f} s signal"
        )
    s = bundle.speech_image.samples[reference_channel]
    n = bundle.noise_image.samples[reference_channel]
    y = align_enhanced(enhanced.samples[0], s, length, delay_tolerance, align_search)
    snr = bundle.snr_db if snr_db is None else snr_db

    def record(index, level, label, category, broad, lo, hi):
        d = si_decompose(y[lo:hi], s[lo:hi], n[lo:hi])
        return SegmentMetrics(
            utterance_id=track.utterance_id,
            segment_index=index,
            level=level,
            label=label,
            category=category,
            broad_class=broad,
            gender=gender,
            snr_db=float(snr),
            algorithm_id=algorithm_id,
            sir_in=sir_in(s[lo:hi], n[lo:hi], sir_in_method),
            sir_out=sir_out(d),
            sar_out=sar_out(d),
            duration_s=(hi - lo) / rate,
            flags="collinear" if d.collinear else "",
        )

    kept, excluded = to_sample_ranges(track, rate, min_duration)
    phonemes = []
    for seg in kept:
        if not np.any(s[seg.start : seg.end]):
            excluded.append(type(seg)(seg.index, seg.start, seg.end, seg.label, "silent speech reference"))
            continue
        cat = categorize(seg.label, cmap)
        phonemes.append(record(seg.index, "phoneme", seg.label, cat.name, cat.broad, seg.start, seg.end))

    if utterance_scope == "full":
        utt = record(-1, "utterance", "", "utterance", "", 0, length)
    elif utterance_scope == "speech":
        idx = np.concatenate([np.arange(p.start, p.end) for p in kept]) if kept else np.arange(length)
        d = si_decompose(y[idx], s[idx], n[idx])
        utt = SegmentMetrics(
            track.utterance_id, -1, "utterance", "", "utterance", "", gender, float(snr),
            algorithm_id, sir_in(s[idx], n[idx], sir_in_method), sir_out(d), sar_out(d),
            len(idx) / rate, flags="collinear" if d.collinear else "",
        )
    else:
        raise ValueError(f"unknown utterance scope {utterance_scope!r}")

    if compute_stoi:
        utt.stoi_in = stoi_fn(s, bundle.mixture.samples[reference_channel], rate) if stoi_in is None else stoi_in
        utt.stoi_out = stoi_fn(s, y, rate)
    excluded.sort(key=lambda seg: seg.index)
    return utt, phonemes, excluded
