"""Aggregation of evaluation records into table/figure layouts and CSV/JSON files."""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass
from importlib import resources

import numpy as np

from .metrics import CLAMP_DB

RECORD_COLUMNS = (
    "utterance_id",
    "segment_index",
    "label",
    "category",
    "broad_class",
    "level",
    "gender",
    "snr_db",
    "algorithm_id",
    "sir_in",
    "sir_out",
    "sar_out",
    "duration_s",
    "stoi_in",
    "stoi_out",
    "flags",
)
EXTERNAL_METRICS = ("pesq_in", "pesq_out", "haspi", "wer")
DERIVED_METRICS = ("delta_pesq", "delta_stoi")
OPTIONAL_COLUMNS = EXTERNAL_METRICS + DERIVED_METRICS
_INT_FIELDS = {"segment_index"}
_FLOAT_FIELDS = {"snr_db", "sir_in", "sir_out", "sar_out", "duration_s", "stoi_in", "stoi_out",
                 *OPTIONAL_COLUMNS}
DB_METRICS = {"sir_in", "sir_out", "sar_out"}
UNIT_METRICS = {"stoi_in", "stoi_out", "delta_stoi"}
EMPTY_CELL = "NA"
HIST_BINS = 32


class ReportError(ValueError):
    pass


# --------------------------------------------------------------------------
# Records CSV
# --------------------------------------------------------------------------


def _to_dict(rec) -> dict:
    if isinstance(rec, dict):
        return dict(rec)
    return rec.as_dict()


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


def record_sort_key(rec: dict):
    return (str(rec["utterance_id"]), str(rec["algorithm_id"]), int(rec["segment_index"]))


def write_records(records, fh) -> None:
    rows = [_to_dict(r) for r in records]
    extra = [c for c in OPTIONAL_COLUMNS if any(r.get(c) is not None for r in rows)]
    writer = csv.writer(fh, lineterminator="\n")
    writer.writerow(RECORD_COLUMNS + tuple(extra))
    for r in sorted(rows, key=record_sort_key):
        writer.writerow([_fmt(r.get(c)) for c in RECORD_COLUMNS + tuple(extra)])


def records_to_csv(records) -> str:
    buf = io.StringIO()
    write_records(records, buf)
    return buf.getvalue()


def _parse_value(name, text):
    if text == "":
        return None if name in _FLOAT_FIELDS or name in _INT_FIELDS else ""
    if name in _INT_FIELDS:
        return int(text)
    if name in _FLOAT_FIELDS:
        return float(text)
    return text


def read_records(fh) -> list[dict]:
    reader = csv.DictReader(fh)
    if reader.fieldnames is None:
        raise ReportError("records file is empty")
    missing = [c for c in RECORD_COLUMNS if c not in reader.fieldnames]
    if missing:
        raise ReportError(f"records file lacks columns: {', '.join(missing)}")
    out = []
    for lineno, row in enumerate(reader, 2):
        try:
            out.append({k: _parse_value(k, v or "") for k, v in row.items()})
        except ValueError as exc:
            raise ReportError(f"records line {lineno}: {exc}") from None
    return out


def load_records(path) -> list[dict]:
    with open(path, newline="", encoding="utf-8") as fh:
        return read_records(fh)


# --------------------------------------------------------------------------
# Aggregation
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class GroupSummary:
    key: dict
    count: int
    mean: float
    median: float
    q1: float
    q3: float
    p5: float
    p95: float
    hist_edges: list
    hist_counts: list

    def as_json(self) -> dict:
        d = asdict(self)
        d["histogram"] = {"edges": d.pop("hist_edges"), "counts": d.pop("hist_counts")}
        return d


def histogram_range(metric: str, values) -> tuple[float, float]:
    if metric in DB_METRICS:
        return -CLAMP_DB, CLAMP_DB
    if metric in UNIT_METRICS:
        return -1.0, 1.0
    lo, hi = float(np.min(values)), float(np.max(values))
    if lo == hi:
        lo, hi = lo - 0.5, hi + 0.5
    return lo, hi


def _value(rec, metric):
    if metric not in rec:
        raise ReportError(f"unknown field {metric!r}")
    return rec[metric]


def _group_key(value):
    if isinstance(value, (int, float)):
        return (0, float(value), "")
    return (1, 0.0, str(value))


def aggregate(records, group_by, metric: str, duration_weighted: bool = False,
              level: str | None = None) -> list[GroupSummary]:
    """Distribution summary of ``metric`` per group; records lacking the metric are skipped."""
    rows = [_to_dict(r) for r in records]
    if not rows:
        raise ReportError("no records to aggregate")
    group_by = tuple(group_by)
    groups: dict[tuple, list] = {}
    for r in rows:
        value = _value(r, metric)
        for g in group_by:
            _value(r, g)
        if level and r.get("level") != level:
            continue
        if value is None or value == "":
            continue
        key = tuple(r[g] for g in group_by)
        groups.setdefault(key, []).append((float(value), float(r.get("duration_s") or 0.0)))

    out = []
    for key in sorted(groups, key=lambda k: tuple(_group_key(v) for v in k)):
        # sorted pairs and exact sums keep the result independent of record order
        pairs = sorted(groups[key])
        vals = np.array([v for v, _ in pairs])
        wsum = math.fsum(d for _, d in pairs)
        if duration_weighted and wsum > 0:
            mean = math.fsum(v * d for v, d in pairs) / wsum
        else:
            mean = math.fsum(vals) / len(vals)
        p5, q1, med, q3, p95 = np.percentile(vals, [5, 25, 50, 75, 95])
        lo, hi = histogram_range(metric, vals)
        counts, edges = np.histogram(np.clip(vals, lo, hi), bins=HIST_BINS, range=(lo, hi))
        out.append(GroupSummary(
            key=dict(zip(group_by, key)), count=len(vals), mean=mean, median=float(med),
            q1=float(q1), q3=float(q3), p5=float(p5), p95=float(p95),
            hist_edges=[float(e) for e in edges], hist_counts=[int(c) for c in counts],
        ))
    return out


def _snr_label(snr) -> str:
    return f"{float(snr):g}"


def gender_snr_table(records, metric: str, rows: str = "broad", snrs=None, genders=("M", "F"),
                     duration_weighted: bool = False, digits: int = 2) -> list[list[str]]:
    """Rows x (SNR x gender) table of means.

    ``rows`` is ``broad`` (consonants, vowels), ``categories`` (one row per
    phoneme category present) or ``utterance`` (a single utterance-level row).
    """
    recs = [_to_dict(r) for r in records]
    if not recs:
        raise ReportError("cannot build a table from an empty record set")
    if rows == "broad":
        row_field, level = "broad_class", "phoneme"
    elif rows == "categories":
        row_field, level = "category", "phoneme"
    elif rows == "utterance":
        row_field, level = "level", "utterance"
    else:
        raise ReportError(f"unknown row layout {rows!r}")
    summaries = aggregate(recs, (row_field, "snr_db", "gender"), metric, duration_weighted, level)
    means = {(s.key[row_field], float(s.key["snr_db"]), s.key["gender"]): s.mean for s in summaries}
    if snrs is None:
        snrs = sorted({float(r["snr_db"]) for r in recs if r.get("snr_db") is not None})
    row_values = sorted({r[row_field] for r in recs if r.get("level") == level and r.get(row_field)},
                        key=str)
    labels = {"consonant": "Consonants", "vowel": "Vowels", "utterance": "Utterance"}

    header = [metric] + [f"{_snr_label(s)} dB {g}" for s in snrs for g in genders]
    table = [header]
    for rv in row_values:
        line = [labels.get(rv, rv)]
        for s in snrs:
            for g in genders:
                m = means.get((rv, float(s), g))
                line.append(EMPTY_CELL if m is None else f"{m:.{digits}f}")
        table.append(line)
    return table


def metric_table(records, metrics, snrs=None, genders=("M", "F"), digits: int = 2):
    """Utterance-level means, one row per metric (the perceptual/ASR table layout)."""
    recs = [_to_dict(r) for r in records if _to_dict(r).get("level") == "utterance"]
    if not recs:
        raise ReportError("no utterance-level records")
    if snrs is None:
        snrs = sorted({float(r["snr_db"]) for r in recs})
    table = [["metric"] + [f"{_snr_label(s)} dB {g}" for s in snrs for g in genders]]
    for metric in metrics:
        present = [r for r in recs if r.get(metric) is not None]
        means = {}
        if present:
            for s in aggregate(present, ("snr_db", "gender"), metric):
                means[(float(s.key["snr_db"]), s.key["gender"])] = s.mean
        table.append([metric] + [
            EMPTY_CELL if (float(s), g) not in means else f"{means[(float(s), g)]:.{digits}f}"
            for s in snrs for g in genders
        ])
    return table


def table_to_csv(table) -> str:
    buf = io.StringIO()
    csv.writer(buf, lineterminator="\n").writerows(table)
    return buf.getvalue()


def violin_schema() -> dict:
    text = resources.files("phonoscope").joinpath("data/violin.schema.json").read_text("utf-8")
    return json.loads(text)


def violin_summary(records, metric: str, group_by, duration_weighted: bool = False,
                   level: str | None = None) -> str:
    summaries = aggregate(records, group_by, metric, duration_weighted, level)
    doc = {
        "metric": metric,
        "group_by": list(group_by),
        "histogram_bins": HIST_BINS,
        "groups": [s.as_json() for s in summaries],
    }
    return json.dumps(doc, indent=2, sort_keys=True, ensure_ascii=False) + "\n"


# --------------------------------------------------------------------------
# External scores
# --------------------------------------------------------------------------


def read_external_scores(fh) -> dict:
    """Parse ``utterance_id,metric_name,value[,algorithm_id]`` rows.

    Returns ``{(utterance_id, algorithm_id or None, metric): value}``.
    """
    reader = csv.DictReader(fh)
    cols = reader.fieldnames or []
    missing = [c for c in ("utterance_id", "metric_name", "value") if c not in cols]
    if missing:
        raise ReportError(f"external scores lack columns: {', '.join(missing)}")
    scores = {}
    for lineno, row in enumerate(reader, 2):
        utt = (row["utterance_id"] or "").strip()
        name = (row["metric_name"] or "").strip()
        alg = (row.get("algorithm_id") or "").strip() or None
        if not utt:
            raise ReportError(f"external scores line {lineno}: empty utterance_id")
        if name not in EXTERNAL_METRICS:
            raise ReportError(f"external scores line {lineno}: unknown metric {name!r}")
        try:
            value = float(row["value"])
        except (TypeError, ValueError):
            raise ReportError(f"external scores line {lineno}: bad value {row['value']!r}") from None
        if not math.isfinite(value):
            raise ReportError(f"external scores line {lineno}: non-finite value")
        key = (utt, alg, name)
        if key in scores:
            where = f"({utt}, {name})" if alg is None else f"({utt}, {alg}, {name})"
            raise ReportError(f"duplicate external score {where}")
        scores[key] = value
    return scores


def derive_deltas(rec: dict) -> dict:
    if rec.get("pesq_in") is not None and rec.get("pesq_out") is not None:
        rec["delta_pesq"] = rec["pesq_out"] - rec["pesq_in"]
    if rec.get("stoi_in") is not None and rec.get("stoi_out") is not None:
        rec["delta_stoi"] = rec["stoi_out"] - rec["stoi_in"]
    return rec


def merge_external_scores(records, scores):
    """Attach external utterance scores; returns ``(records, unmatched_ids)``.

    ``scores`` is a mapping from :func:`read_external_scores`, a file
    object, or CSV text. Rows without ``algorithm_id`` apply to every
    algorithm's utterance record.
    """
    if isinstance(scores, str):
        scores = read_external_scores(io.StringIO(scores))
    elif not isinstance(scores, dict):
        scores = read_external_scores(scores)
    out = [_to_dict(r) for r in records]
    utt_records = [r for r in out if r.get("level") == "utterance"]
    matched = set()
    for (utt, alg, name), value in sorted(scores.items(), key=lambda kv: (kv[0][0], kv[0][1] or "", kv[0][2])):
        hits = [r for r in utt_records
                if r["utterance_id"] == utt and (alg is None or r["algorithm_id"] == alg)]
        for r in hits:
            r[name] = value
        if hits:
            matched.add((utt, alg))
    for r in utt_records:
        derive_deltas(r)
    unmatched = sorted({utt if alg is None else f"{utt}/{alg}"
                        for (utt, alg, _) in scores if (utt, alg) not in matched})
    return out, unmatched


# --------------------------------------------------------------------------
# Stats CSV
# --------------------------------------------------------------------------

STATS_COLUMNS = ("metric", "group_key", "group_a", "group_b", "stratum", "n_a", "n_b",
                 "u_statistic", "p_value", "method", "significant", "skipped")


def stratum_label(strata, key) -> str:
    if not strata:
        return "all"
    return ";".join(f"{s}={_fmt(v)}" for s, v in zip(strata, key))


def stats_to_csv(comparisons) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(STATS_COLUMNS)
    for c in comparisons:
        r = c.result
        w.writerow([
            c.metric, c.group_key, c.group_a, c.group_b, stratum_label(c.strata, c.stratum),
            "" if r is None else r.n_a, "" if r is None else r.n_b,
            "" if r is None else repr(r.u_statistic), "" if r is None else repr(r.p_value),
            "" if r is None else r.method, "" if r is None else str(r.significant).lower(),
            c.skipped,
        ])
    return buf.getvalue()
