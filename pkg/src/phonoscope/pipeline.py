"""Manifest-driven batch evaluation."""

from __future__ import annotations

import csv
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from .alignment import DEFAULT_MIN_DURATION, DEFAULT_SILENCE, PHONE_TIER, default_category_map, load_category_map, parse_textgrid
from .audio import Waveform, read_wav, require_rate
from .metrics import evaluate_utterance
from .report import record_sort_key
from .scenario import RIRSet, make_mixture
from .stoi import stoi

log = logging.getLogger("phonoscope")

ENHANCED_PREFIX = "enhanced:"
GENDERS = ("M", "F")


class ManifestError(ValueError):
    def __init__(self, problems):
        self.problems = list(problems)
        super().__init__("invalid manifest:\n  " + "\n  ".join(self.problems))


@dataclass(frozen=True)
class CorpusRow:
    utterance_id: str
    gender: str
    clean_path: str
    alignment_path: str
    noise_path: str
    rir_speech_path: str
    rir_noise_path: str
    snr_db: float
    seed: int
    enhanced: tuple = ()  # ((algorithm_id, path or @builtin), ...)


@dataclass(frozen=True)
class EvalOptions:
    reference_channel: int = 0
    min_duration: float = DEFAULT_MIN_DURATION
    delay_tolerance: int = 0
    align_search: int = 0
    sir_in_method: str = "projection"
    utterance_scope: str = "full"
    compute_stoi: bool = True
    tier: str = PHONE_TIER
    silence: frozenset = DEFAULT_SILENCE
    category_map_text: str | None = None
    default_noise: str = ""
    oracle_residual: float = 0.1


def _resolve(base, value):
    value = (value or "").strip()
    if not value or value.startswith("@"):
        return value
    return value if os.path.isabs(value) else os.path.normpath(os.path.join(base, value))


def read_corpus_manifest(path, default_noise: str = "", check_files: bool = True) -> list[CorpusRow]:
    """Parse and validate a corpus manifest, collecting every problem before raising."""
    base = os.path.dirname(os.path.abspath(path))
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.DictReader(fh)
            fields = reader.fieldnames or []
            raw = list(reader)
    except FileNotFoundError:
        raise ManifestError([f"manifest not found: {path}"]) from None
    problems = []
    required = ("utterance_id", "gender", "clean_path", "alignment_path", "snr_db", "seed")
    missing_cols = [c for c in required if c not in fields]
    if missing_cols:
        raise ManifestError([f"missing columns: {', '.join(missing_cols)}"])
    alg_cols = [c for c in fields if c.startswith(ENHANCED_PREFIX)]
    if not alg_cols:
        problems.append(f"no '{ENHANCED_PREFIX}<algorithm>' columns")

    rows, seen = [], {}
    for lineno, r in enumerate(raw, 2):
        where = f"line {lineno}"
        utt = (r.get("utterance_id") or "").strip()
        if not utt:
            problems.append(f"{where}: empty utterance_id")
        elif utt in seen:
            problems.append(f"{where}: duplicate utterance_id {utt!r} (first on line {seen[utt]})")
        else:
            seen[utt] = lineno
        gender = (r.get("gender") or "").strip()
        if gender not in GENDERS:
            problems.append(f"{where}: gender must be M or F, got {gender!r}")
        try:
            snr = float(r["snr_db"])
        except (TypeError, ValueError):
            problems.append(f"{where}: bad snr_db {r.get('snr_db')!r}")
            snr = float("nan")
        try:
            seed = int(r["seed"])
        except (TypeError, ValueError):
            problems.append(f"{where}: bad seed {r.get('seed')!r}")
            seed = 0
        paths = {k: _resolve(base, r.get(k)) for k in
                 ("clean_path", "alignment_path", "noise_path", "rir_speech_path", "rir_noise_path")}
        if not paths["noise_path"]:
            paths["noise_path"] = default_noise
        enhanced = tuple((c[len(ENHANCED_PREFIX):], _resolve(base, r.get(c))) for c in alg_cols)
        for key in ("clean_path", "alignment_path", "noise_path"):
            if not paths[key]:
                problems.append(f"{where}: {key} is empty")
        if bool(paths["rir_speech_path"]) != bool(paths["rir_noise_path"]):
            problems.append(f"{where}: give both RIR paths or neither")
        if check_files:
            for key, p in list(paths.items()) + [(f"enhanced:{a}", p) for a, p in enhanced]:
                if p and not p.startswith("@") and not os.path.isfile(p):
                    problems.append(f"{where}: {key} not found: {p}")
        for alg, p in enhanced:
            if not p:
                problems.append(f"{where}: no enhanced signal for {alg!r}")
            elif p.startswith("@") and p[1:] not in BUILTINS:
                problems.append(f"{where}: unknown built-in enhancer {p!r}")
        rows.append(CorpusRow(utt, gender, snr_db=snr, seed=seed, enhanced=enhanced, **paths))
    if not raw:
        problems.append("manifest has no rows")
    if problems:
        raise ManifestError(problems)
    return rows


# --------------------------------------------------------------------------
# Built-in enhancers
# --------------------------------------------------------------------------


def passthrough(bundle, channel=0, **_):
    return Waveform(bundle.mixture.samples[channel], bundle.mixture.sample_rate)


def oracle_residual(bundle, channel=0, residual=0.1, **_):
    """Speech image plus a fixed fraction of the noise image."""
    x = bundle.speech_image.samples[channel] + residual * bundle.noise_image.samples[channel]
    return Waveform(x, bundle.speech_image.sample_rate)


def clean_image(bundle, channel=0, **_):
    return Waveform(bundle.speech_image.samples[channel], bundle.speech_image.sample_rate)


BUILTINS = {"passthrough": passthrough, "oracle": oracle_residual, "clean": clean_image}


# --------------------------------------------------------------------------
# Evaluation
# --------------------------------------------------------------------------


def _mono(path, what):
    w = require_rate(read_wav(path), what=f"{what} {path}")
    if w.channels != 1:
        raise ValueError(f"{what} {path} has {w.channels} channels, expected 1")
    return w


def build_bundle(row: CorpusRow):
    speech = _mono(row.clean_path, "clean speech")
    noise = _mono(row.noise_path, "noise")
    if row.rir_speech_path:
        rirs = RIRSet.from_files(row.rir_speech_path, row.rir_noise_path)
    else:
        rirs = RIRSet.identity(1, speech.sample_rate)
    return make_mixture(speech, noise, rirs, row.snr_db, row.seed)


def evaluate_row(row: CorpusRow, options: EvalOptions = EvalOptions()) -> list[dict]:
    """All utterance and phoneme records of one manifest row (every algorithm)."""
    cmap = (load_category_map(options.category_map_text) if options.category_map_text
            else default_category_map())
    bundle = build_bundle(row)
    with open(row.alignment_path, "rb") as fh:
        track = parse_textgrid(fh.read(), row.utterance_id, options.tier, options.silence)
    ch = options.reference_channel
    stoi_in = None
    if options.compute_stoi:
        stoi_in = stoi(bundle.speech_image.samples[ch], bundle.mixture.samples[ch],
                       bundle.speech_image.sample_rate)
    records = []
    for alg, source in row.enhanced:
        if source.startswith("@"):
            enhanced = BUILTINS[source[1:]](bundle, channel=ch, residual=options.oracle_residual)
        else:
            enhanced = _mono(source, f"enhanced signal ({alg})")
        utt, phonemes, excluded = evaluate_utterance(
            bundle, enhanced, track, cmap, row.gender, row.snr_db, alg,
            reference_channel=ch,
            min_duration=options.min_duration,
            delay_tolerance=options.delay_tolerance,
            align_search=options.align_search,
            sir_in_method=options.sir_in_method,
            utterance_scope=options.utterance_scope,
            stoi_in=stoi_in,
            compute_stoi=options.compute_stoi,
        )
        unmapped = sum(1 for p in phonemes if p.category == "unmapped")
        if unmapped:
            log.warning("%d unmapped phoneme segments", unmapped, extra={"utt": row.utterance_id})
        if excluded:
            log.info("%d segments excluded (%s)", len(excluded),
                     ", ".join(sorted({e.reason for e in excluded})), extra={"utt": row.utterance_id})
        records.append(utt.as_dict())
        records.extend(p.as_dict() for p in phonemes)
    return records


def _evaluate_job(args):
    row, options = args
    return evaluate_row(row, options)


def resolve_jobs(jobs: int | None) -> int:
    if jobs is None:
        jobs = int(os.environ.get("PHONOSCOPE_JOBS", "1") or 1)
    if jobs < 1:
        raise ValueError("jobs must be >= 1")
    return jobs


def evaluate_corpus(rows, options: EvalOptions = EvalOptions(), jobs: int | None = None) -> list[dict]:
    """Evaluate every row; output order depends only on record keys."""
    jobs = resolve_jobs(jobs)
    rows = list(rows)
    if jobs == 1 or len(rows) <= 1:
        chunks = [evaluate_row(r, options) for r in rows]
    else:
        with ProcessPoolExecutor(max_workers=min(jobs, len(rows))) as pool:
            chunks = list(pool.map(_evaluate_job, [(r, options) for r in rows]))
    records = [rec for chunk in chunks for rec in chunk]
    records.sort(key=record_sort_key)
    return records


def gender_totals(rows) -> dict:
    """Total clean-speech seconds per gender (for the balance report)."""
    totals = {g: 0.0 for g in GENDERS}
    for r in rows:
        w = read_wav(r.clean_path)
        totals[r.gender] += w.duration
    return totals


def trend_check(records, alpha: float = 0.05) -> dict:
    """Consonant vs vowel SIR_in: means per (gender, SNR) and a test per gender."""
    from .stats import mann_whitney_u

    phon = [r for r in records if r.get("level") == "phoneme" and r.get("broad_class")]
    if not phon:
        raise ValueError("no categorised phoneme records")
    # each segment's SIR_in is independent of the algorithm; keep one copy
    seen, unique = set(), []
    for r in phon:
        k = (r["utterance_id"], r["segment_index"])
        if k not in seen:
            seen.add(k)
            unique.append(r)
    out = {"means": {}, "tests": {}}
    for g in sorted({r["gender"] for r in unique}):
        for snr in sorted({r["snr_db"] for r in unique}):
            cell = [r for r in unique if r["gender"] == g and r["snr_db"] == snr]
            c = [r["sir_in"] for r in cell if r["broad_class"] == "consonant"]
            v = [r["sir_in"] for r in cell if r["broad_class"] == "vowel"]
            if c and v:
                out["means"][(g, snr)] = (float(np.mean(c)), float(np.mean(v)))
        c = [r["sir_in"] for r in unique if r["gender"] == g and r["broad_class"] == "consonant"]
        v = [r["sir_in"] for r in unique if r["gender"] == g and r["broad_class"] == "vowel"]
        if c and v:
            out["tests"][g] = mann_whitney_u(c, v, alpha=alpha)
    return out
