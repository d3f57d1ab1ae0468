"""Command-line entry point: ``phonoscope {ssn,mix,eval,stats,report,demo}``."""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys

from . import __version__
from .alignment import DEFAULT_MIN_DURATION, TextGridError, CategoryMapError
from .audio import WORKING_RATE, WavError, SampleRateError, Waveform, read_wav, require_rate, write_wav
from .pipeline import EvalOptions, ManifestError, evaluate_corpus, gender_totals, read_corpus_manifest
from .report import (
    ReportError,
    derive_deltas,
    gender_snr_table,
    load_records,
    merge_external_scores,
    metric_table,
    records_to_csv,
    stats_to_csv,
    table_to_csv,
    violin_summary,
)
from .scenario import RIRSet, generate_ssn, make_mixture, read_mixture_manifest, rng
from .stats import compare_groups

log = logging.getLogger("phonoscope")

PERCEPTUAL_METRICS = ("wer", "stoi_in", "stoi_out", "delta_stoi", "pesq_in", "pesq_out",
                      "delta_pesq", "haspi")
FIELD_ALIASES = {"snr": "snr_db", "algorithm": "algorithm_id", "class": "broad_class"}

EXIT_USAGE = 2
EXIT_INPUT = 3
EXIT_ANALYSIS = 4


class _Formatter(logging.Formatter):
    def format(self, record):
        utt = getattr(record, "utt", "-")
        return f"level={record.levelname} utt={utt} msg={json.dumps(record.getMessage(), ensure_ascii=False)}"


def _setup_logging(verbose: bool):
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(_Formatter())
    log.handlers[:] = [handler]
    log.setLevel(logging.DEBUG if verbose else logging.INFO)
    log.propagate = False


def _fields(text):
    return tuple(FIELD_ALIASES.get(f.strip(), f.strip()) for f in text.split(",") if f.strip())


def _write_text(path, text):
    if path in (None, "-"):
        sys.stdout.write(text)
    else:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)


# --------------------------------------------------------------------------
# commands
# --------------------------------------------------------------------------


def _speech_files(root, gender):
    names = {"M": ("M", "male"), "F": ("F", "female")}[gender]
    for name in names:
        d = os.path.join(root, name)
        if os.path.isdir(d):
            return sorted(os.path.join(d, f) for f in os.listdir(d) if f.lower().endswith(".wav"))
    return []


def cmd_ssn(args):
    picked = []
    gen = rng(args.seed, stream=2)
    for gender, count in (("M", args.count_male), ("F", args.count_female)):
        files = _speech_files(args.speech, gender)
        if len(files) < count:
            raise ValueError(
                f"need {count} {gender} speech files under {args.speech}/{gender}/, found {len(files)}"
            )
        idx = sorted(gen.choice(len(files), size=count, replace=False).tolist()) if count else []
        picked += [(gender, files[i]) for i in idx]
    if not picked:
        raise ValueError("no speech sources selected")
    sources = []
    for _, path in picked:
        w = require_rate(read_wav(path), what=path)
        if w.channels != 1:
            raise ValueError(f"{path}: SSN sources must be mono")
        sources.append(w)
    ssn = generate_ssn(sources, int(round(args.length * WORKING_RATE)), seed=args.seed)
    if args.level is not None:
        ssn = Waveform(ssn.samples * (args.level / max(float(abs(ssn.samples).max()), 1e-12)),
                       ssn.sample_rate)
    meta = write_wav(args.out, ssn, args.format)
    provenance = {
        "seed": args.seed,
        "length_s": args.length,
        "sample_rate": WORKING_RATE,
        "format": args.format,
        "clipped_samples": meta["clipped"],
        "sources": [{"gender": g, "path": os.path.relpath(p, os.path.dirname(os.path.abspath(args.out)))}
                    for g, p in picked],
    }
    _write_text(os.path.splitext(args.out)[0] + ".json", json.dumps(provenance, indent=2) + "\n")
    log.info("wrote %s from %d sources", args.out, len(picked))
    return 0


def cmd_mix(args):
    rows = read_mixture_manifest(args.manifest)
    os.makedirs(args.out_dir, exist_ok=True)
    for row in rows:
        speech = require_rate(read_wav(row["speech_path"]), what=row["speech_path"])
        noise = require_rate(read_wav(row["noise_path"]), what=row["noise_path"])
        if row["rir_speech_path"]:
            rirs = RIRSet.from_files(row["rir_speech_path"], row["rir_noise_path"])
        else:
            rirs = RIRSet.identity(1, speech.sample_rate)
        bundle = make_mixture(speech, noise, rirs, row["snr_db"], row["seed"])
        d = os.path.join(args.out_dir, row["utterance_id"])
        os.makedirs(d, exist_ok=True)
        for name in ("mixture", "speech_image", "noise_image"):
            write_wav(os.path.join(d, f"{name}.wav"), getattr(bundle, name), "float32")
        log.info("mixed at %g dB", row["snr_db"], extra={"utt": row["utterance_id"]})
    return 0


def cmd_eval(args):
    rows = read_corpus_manifest(args.manifest, default_noise=args.noise or "")
    cmap_text = None
    if args.category_map:
        with open(args.category_map, encoding="utf-8") as fh:
            cmap_text = fh.read()
    options = EvalOptions(
        reference_channel=args.reference_channel,
        min_duration=args.min_duration,
        delay_tolerance=args.delay_tolerance,
        align_search=int(round(args.align_search_ms * WORKING_RATE / 1000.0)),
        sir_in_method=args.sir_in,
        utterance_scope=args.utterance_scope,
        compute_stoi=not args.no_stoi,
        tier=args.tier,
        category_map_text=cmap_text,
        oracle_residual=args.oracle_residual,
    )
    totals = gender_totals(rows)
    log.info("corpus: %d utterances, M %.1f s, F %.1f s", len(rows), totals["M"], totals["F"])
    records = evaluate_corpus(rows, options, jobs=args.jobs)
    _write_text(args.out, records_to_csv(records))
    log.info("wrote %d records", len(records))
    return 0


def cmd_stats(args):
    records = [derive_deltas(r) for r in load_records(args.records)]
    groups = tuple(g.strip() for g in args.groups.split(",")) if args.groups else None
    if groups is not None and len(groups) != 2:
        raise ReportError("--groups takes exactly two comma-separated values")
    results = compare_groups(
        records, FIELD_ALIASES.get(args.metric, args.metric), FIELD_ALIASES.get(args.group, args.group),
        _fields(args.strata) if args.strata else (), groups=groups,
        level=None if args.level == "all" else args.level, alpha=args.alpha,
    )
    _write_text(args.out, stats_to_csv(results))
    return 0


def cmd_report(args):
    records = [derive_deltas(r) for r in load_records(args.records)]
    if args.external:
        with open(args.external, newline="", encoding="utf-8") as fh:
            records, unmatched = merge_external_scores(records, fh)
        for u in unmatched:
            log.warning("external score for unknown utterance %s", u)
    if args.table:
        if args.table == "perceptual":
            table = metric_table(records, PERCEPTUAL_METRICS)
        else:
            table = gender_snr_table(records, FIELD_ALIASES.get(args.table, args.table), rows=args.rows)
        _write_text(args.out, table_to_csv(table))
    elif args.violin:
        level = None if args.level == "all" else args.level
        _write_text(args.out, violin_summary(records, args.violin, _fields(args.group_by), level=level))
    elif args.merged:
        _write_text(args.out, records_to_csv(records))
    return 0


def cmd_demo(args):
    from .synth import build_corpus

    path = build_corpus(args.out, n_utterances=args.utterances, seed=args.seed)
    log.info("demo corpus manifest: %s", path)
    print(path)
    return 0


# --------------------------------------------------------------------------
# parser
# --------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    fmt = argparse.ArgumentDefaultsHelpFormatter
    p = argparse.ArgumentParser(prog="phonoscope", description=__doc__, formatter_class=fmt)
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("ssn", help="synthesize speech-shaped noise", formatter_class=fmt)
    s.add_argument("--speech", required=True, help="directory with M/ and F/ subfolders of mono WAVs")
    s.add_argument("--count-male", type=int, default=5)
    s.add_argument("--count-female", type=int, default=5)
    s.add_argument("--length", type=float, default=60.0, help="seconds")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--level", type=float, default=None, help="peak amplitude of the output")
    s.add_argument("--format", choices=("float32", "int16"), default="float32")
    s.add_argument("--out", required=True, help="output WAV; provenance goes next to it as .json")
    s.set_defaults(func=cmd_ssn)

    s = sub.add_parser("mix", help="render mixtures from a mixture manifest", formatter_class=fmt)
    s.add_argument("--manifest", required=True)
    s.add_argument("--out-dir", required=True)
    s.set_defaults(func=cmd_mix)

    s = sub.add_parser("eval", help="evaluate enhanced signals per utterance and phoneme",
                       formatter_class=fmt)
    s.add_argument("--manifest", required=True)
    s.add_argument("--out", default="-", help="records CSV")
    s.add_argument("--jobs", type=int, default=None,
                   help="worker processes (default: $PHONOSCOPE_JOBS or 1)")
    s.add_argument("--noise", default=None, help="noise WAV for rows without noise_path")
    s.add_argument("--category-map", default=None, help="TSV label/category/class map")
    s.add_argument("--tier", default="phones")
    s.add_argument("--min-duration", type=float, default=DEFAULT_MIN_DURATION, help="seconds")
    s.add_argument("--reference-channel", type=int, default=0)
    s.add_argument("--delay-tolerance", type=int, default=0, help="samples")
    s.add_argument("--align-search-ms", type=float, default=0.0,
                   help="cross-correlation lag search for enhanced signals (0 = off)")
    s.add_argument("--sir-in", choices=("projection", "energy"), default="projection")
    s.add_argument("--utterance-scope", choices=("full", "speech"), default="full")
    s.add_argument("--oracle-residual", type=float, default=0.1,
                   help="noise fraction kept by the @oracle enhancer")
    s.add_argument("--no-stoi", action="store_true")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("stats", help="Mann-Whitney U tests between two groups", formatter_class=fmt)
    s.add_argument("--records", required=True)
    s.add_argument("--metric", required=True)
    s.add_argument("--group", default="gender")
    s.add_argument("--groups", default=None, help="the two group values, e.g. M,F")
    s.add_argument("--strata", default="category,snr_db")
    s.add_argument("--level", choices=("phoneme", "utterance", "all"), default="all")
    s.add_argument("--alpha", type=float, default=0.05)
    s.add_argument("--out", default="-")
    s.set_defaults(func=cmd_stats)

    s = sub.add_parser("report", help="tables and violin summaries", formatter_class=fmt)
    s.add_argument("--records", required=True)
    s.add_argument("--external", default=None, help="CSV utterance_id,metric_name,value[,algorithm_id]")
    what = s.add_mutually_exclusive_group(required=True)
    what.add_argument("--table", metavar="METRIC", help="gender x SNR table of a metric, or 'perceptual'")
    what.add_argument("--violin", metavar="METRIC", help="distribution summary JSON")
    what.add_argument("--merged", action="store_true", help="records with external scores merged")
    s.add_argument("--rows", choices=("broad", "categories", "utterance"), default="broad")
    s.add_argument("--group-by", default="category,gender")
    s.add_argument("--level", choices=("phoneme", "utterance", "all"), default="all")
    s.add_argument("--out", default="-")
    s.set_defaults(func=cmd_report)

    s = sub.add_parser("demo", help="write the synthetic demo corpus", formatter_class=fmt)
    s.add_argument("--out", required=True)
    s.add_argument("--utterances", type=int, default=4)
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_demo)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    _setup_logging(args.verbose)
    try:
        return args.func(args)
    except ManifestError as exc:
        for problem in exc.problems:
            log.error("manifest: %s", problem)
        return EXIT_USAGE
    except (FileNotFoundError, WavError, SampleRateError, TextGridError, CategoryMapError) as exc:
        log.error("input: %s", exc)
        return EXIT_INPUT
    except (ReportError, KeyError) as exc:
        log.error("analysis: %s", exc)
        return EXIT_ANALYSIS
    except ValueError as exc:
        log.error("invalid: %s", exc)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
