"""Forced-alignment input: Praat TextGrid parsing and phoneme categories."""

from __future__ import annotations

import codecs
import re
import unicodedata
from dataclasses import dataclass, field
from importlib import resources

DEFAULT_SILENCE = frozenset({"", "sil", "sp", "spn"})
DEFAULT_MIN_DURATION = 0.010
PHONE_TIER = "phones"


class TextGridError(ValueError):
    pass


class CategoryMapError(ValueError):
    pass


@dataclass(frozen=True)
class PhonemeInterval:
    label: str
    start: float
    end: float

    def __post_init__(self):
        if not (0 <= self.start < self.end):
            raise TextGridError(f"invalid interval [{self.start}, {self.end}] for {self.label!r}")
        if not self.label:
            raise TextGridError("interval label is empty")


@dataclass(frozen=True)
class AlignmentTrack:
    utterance_id: str
    intervals: tuple[PhonemeInterval, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "intervals", tuple(self.intervals))
        for prev, cur in zip(self.intervals, self.intervals[1:]):
            if cur.start < prev.start:
                raise TextGridError("intervals are not sorted by start time")
            if prev.end > cur.start:
                raise TextGridError(
                    f"overlapping intervals {prev.label!r} [{prev.start}, {prev.end}] and "
                    f"{cur.label!r} [{cur.start}, {cur.end}]"
                )

    @property
    def end(self) -> float:
        return self.intervals[-1].end if self.intervals else 0.0

    def __len__(self):
        return len(self.intervals)


# --------------------------------------------------------------------------
# TextGrid
# --------------------------------------------------------------------------

_TOKEN = re.compile(
    r'"(?:[^"]|"")*"'  # quoted string, "" escapes a quote
    r"|<[A-Za-z]+>"  # <exists> / <absent>
    r"|\[[^\]\n]*\]"  # item [1]: indices in the long form, dropped
    r"|[-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?"
    r"|!.*"  # comment to end of line
)


@dataclass
class _Token:
    kind: str  # "str", "num", "flag"
    value: object
    line: int


def _decode_text(data) -> str:
    if isinstance(data, str):
        return data.lstrip("﻿")
    if data.startswith(codecs.BOM_UTF8):
        return data[len(codecs.BOM_UTF8) :].decode("utf-8")
    if data.startswith(codecs.BOM_UTF16_LE) or data.startswith(codecs.BOM_UTF16_BE):
        return data.decode("utf-16")
    try:
        return data.decode("utf-8")
    except UnicodeDecodeError as exc:
        raise TextGridError(f"cannot decode TextGrid bytes: {exc}") from None


def _tokenize(text: str) -> list[_Token]:
    tokens = []
    line = 1
    last = 0
    for m in _TOKEN.finditer(text):
        line += text.count("\n", last, m.start())
        last = m.start()
        tok = m.group(0)
        if tok.startswith("[") or tok.startswith("!"):
            continue
        if tok.startswith('"'):
            tokens.append(_Token("str", tok[1:-1].replace('""', '"'), line))
        elif tok.startswith("<"):
            tokens.append(_Token("flag", tok, line))
        else:
            tokens.append(_Token("num", float(tok), line))
    return tokens


class _Reader:
    def __init__(self, tokens):
        self.tokens = tokens
        self.pos = 0

    def _next(self, kind, what):
        if self.pos >= len(self.tokens):
            last = self.tokens[-1].line if self.tokens else 1
            raise TextGridError(f"unexpected end of file after line {last}: expected {what}")
        tok = self.tokens[self.pos]
        if tok.kind != kind:
            raise TextGridError(
                f"line {tok.line}, token {self.pos + 1}: expected {what}, got {tok.value!r}"
            )
        self.pos += 1
        return tok.value

    def string(self, what):
        return self._next("str", what)

    def number(self, what):
        return self._next("num", what)

    def count(self, what):
        value = self.number(what)
        if value < 0 or value != int(value):
            tok = self.tokens[self.pos - 1]
            raise TextGridError(f"line {tok.line}: {what} must be a non-negative integer")
        return int(value)

    def optional_flag(self):
        if self.pos < len(self.tokens) and self.tokens[self.pos].kind == "flag":
            return self._next("flag", "flag")
        return None


def read_tiers(data) -> dict[str, list[tuple[float, float, str]]]:
    """Return every interval tier of a TextGrid (long or short text form)."""
    reader = _Reader(_tokenize(_decode_text(data)))
    if reader.string("file type") != "ooTextFile":
        raise TextGridError("line 1: not an ooTextFile")
    if reader.string("object class") != "TextGrid":
        raise TextGridError("line 2: object class is not TextGrid")
    reader.number("xmin")
    reader.number("xmax")
    if reader.optional_flag() == "<absent>":
        return {}
    tiers = {}
    for _ in range(reader.count("tier count")):
        tier_class = reader.string("tier class")
        name = reader.string("tier name")
        reader.number("tier xmin")
        reader.number("tier xmax")
        n = reader.count("interval count")
        if tier_class == "IntervalTier":
            rows = []
            for _ in range(n):
                lo = reader.number("interval xmin")
                hi = reader.number("interval xmax")
                rows.append((lo, hi, reader.string("interval text")))
            tiers.setdefault(name, rows)
        elif tier_class == "TextTier":
            for _ in range(n):
                reader.number("point time")
                reader.string("point mark")
        else:
            raise TextGridError(f"unknown tier class {tier_class!r}")
    return tiers


def parse_textgrid(
    data,
    utterance_id: str = "",
    tier: str = PHONE_TIER,
    silence=DEFAULT_SILENCE,
) -> AlignmentTrack:
    """Parse the phone tier of a TextGrid into an :class:`AlignmentTrack`.

    Silence labels are dropped. Labels are NFC-normalised. Adjacent
    intervals may share a boundary; overlapping ones raise
    :class:`TextGridError`.
    """
    tiers = read_tiers(data)
    if tier not in tiers:
        found = ", ".join(repr(t) for t in tiers) or "none"
        raise TextGridError(f"no interval tier named {tier!r} (found: {found})")
    intervals = []
    for lo, hi, text in tiers[tier]:
        label = unicodedata.normalize("NFC", text.strip())
        if label in silence:
            continue
        intervals.append(PhonemeInterval(label, float(lo), float(hi)))
    intervals.sort(key=lambda iv: iv.start)
    return AlignmentTrack(utterance_id, intervals)


def textgrid_text(track: AlignmentTrack, xmax: float | None = None, tier: str = PHONE_TIER) -> str:
    """Render a track as a long-form TextGrid, filling gaps with silence.

    Used to write the synthetic corpora; not a general TextGrid writer.
    """
    xmax = track.end if xmax is None else xmax
    rows = []
    t = 0.0
    for iv in track.intervals:
        if iv.start > t:
            rows.append((t, iv.start, ""))
        rows.append((iv.start, iv.end, iv.label))
        t = iv.end
    if xmax > t:
        rows.append((t, xmax, ""))
    lines = [
        'File type = "ooTextFile"',
        'Object class = "TextGrid"',
        "",
        "xmin = 0",
        f"xmax = {xmax!r}",
        "tiers? <exists>",
        "size = 1",
        "item []:",
        "    item [1]:",
        '        class = "IntervalTier"',
        f'        name = "{tier}"',
        "        xmin = 0",
        f"        xmax = {xmax!r}",
        f"        intervals: size = {len(rows)}",
    ]
    for i, (lo, hi, text) in enumerate(rows, 1):
        lines += [
            f"        intervals [{i}]:",
            f"            xmin = {lo!r}",
            f"            xmax = {hi!r}",
            '            text = "{}"'.format(text.replace('"', '""')),
        ]
    return "\n".join(lines) + "\n"


# --------------------------------------------------------------------------
# Categories
# --------------------------------------------------------------------------

BROAD_CLASSES = ("consonant", "vowel")


@dataclass(frozen=True)
class PhonemeCategory:
    name: str
    broad: str  # "consonant" or "vowel"


class _Unmapped:
    name = "unmapped"
    broad = ""

    def __repr__(self):
        return "UNMAPPED"

    def __bool__(self):
        return False


UNMAPPED = _Unmapped()


@dataclass(frozen=True)
class CategoryMap:
    entries: dict = field(default_factory=dict)

    def lookup(self, label: str):
        return categorize(label, self)

    @property
    def categories(self) -> list[PhonemeCategory]:
        return sorted(set(self.entries.values()), key=lambda c: (c.broad, c.name))

    def __len__(self):
        return len(self.entries)


def load_category_map(text: str) -> CategoryMap:
    """Parse ``label<TAB>category<TAB>consonant|vowel`` lines.

    Blank lines and lines starting with ``#`` are ignored.
    """
    entries = {}
    broad_of = {}
    for lineno, raw in enumerate(text.lstrip("﻿").splitlines(), 1):
        if not raw.strip() or raw.lstrip().startswith("#"):
            continue
        parts = raw.rstrip("\r\n").split("\t")
        if len(parts) != 3:
            raise CategoryMapError(f"line {lineno}: expected 3 tab-separated fields, got {len(parts)}")
        label, name, broad = (unicodedata.normalize("NFC", p.strip()) for p in parts)
        if broad not in BROAD_CLASSES:
            raise CategoryMapError(f"line {lineno}: unknown flag {broad!r} (consonant|vowel)")
        if label in entries:
            raise CategoryMapError(f"line {lineno}: duplicate label {label!r}")
        if broad_of.setdefault(name, broad) != broad:
            raise CategoryMapError(f"line {lineno}: category {name!r} tagged both consonant and vowel")
        entries[label] = PhonemeCategory(name, broad)
    return CategoryMap(entries)


def default_category_map() -> CategoryMap:
    text = resources.files("phonoscope").joinpath("data/ipa_categories.tsv").read_text("utf-8")
    return load_category_map(text)


def categorize(label: str, cmap: CategoryMap):
    return cmap.entries.get(unicodedata.normalize("NFC", label), UNMAPPED)


# --------------------------------------------------------------------------
# Sample ranges
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class SampleSegment:
    index: int
    start: int
    end: int
    label: str
    reason: str | None = None

    @property
    def length(self) -> int:
        return self.end - self.start


def to_sample_ranges(track: AlignmentTrack, sample_rate: int, min_duration: float = DEFAULT_MIN_DURATION):
    """Convert intervals to half-open sample ranges.

    Returns ``(kept, excluded)``; excluded segments carry a ``reason``.
    """
    if sample_rate <= 0:
        raise ValueError("sample_rate must be positive")
    if min_duration < 0:
        raise ValueError("min_duration must be non-negative")
    limit = int(round(track.end * sample_rate))
    min_len = min_duration * sample_rate
    kept, excluded = [], []
    for i, iv in enumerate(track.intervals):
        s = min(int(round(iv.start * sample_rate)), limit)
        e = min(int(round(iv.end * sample_rate)), limit)
        seg = SampleSegment(i, s, e, iv.label)
        if e - s <= 0 or e - s < min_len - 1e-9:
            excluded.append(SampleSegment(i, s, e, iv.label, "below minimum duration"))
        else:
            kept.append(seg)
    return kept, excluded
