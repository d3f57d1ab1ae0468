"""Mann-Whitney U testing between groups of evaluation records."""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

ALPHA = 0.05
EXACT_MAX_PRODUCT = 400


@dataclass(frozen=True)
class StatTestResult:
    u_statistic: float
    p_value: float
    n_a: int
    n_b: int
    method: str  # "exact" or "normal_approximation"
    significant: bool


def rankdata(values) -> np.ndarray:
    """1-based ranks, ties receive the mean of their positions."""
    values = np.asarray(values, dtype=np.float64)
    order = np.argsort(values, kind="mergesort")
    ranks = np.empty(len(values))
    sorted_vals = values[order]
    i = 0
    while i < len(values):
        j = i
        while j + 1 < len(values) and sorted_vals[j + 1] == sorted_vals[i]:
            j += 1
        ranks[order[i : j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


@lru_cache(maxsize=256)
def u_distribution(n_a: int, n_b: int) -> tuple[int, ...]:
    """Number of orderings giving each U in ``0..n_a*n_b`` (no ties).

    Uses f(i, j) = f(i-1, j) shifted by j + f(i, j-1), the count of
    arrangements of i a-values and j b-values by number of (a > b) pairs.
    """
    prev = [np.array([1], dtype=np.int64) for _ in range(n_b + 1)]  # i = 0
    for i in range(1, n_a + 1):
        cur = [np.array([1], dtype=np.int64)]  # j = 0
        for j in range(1, n_b + 1):
            out = np.zeros(i * j + 1, dtype=np.int64)
            left = prev[j]  # last element is an a-value greater than all j b-values
            out[j : j + len(left)] += left
            below = cur[j - 1]  # last element is a b-value
            out[: len(below)] += below
            cur.append(out)
        prev = cur
    return tuple(int(c) for c in prev[n_b])


def _norm_cdf(z: float) -> float:
    return 0.5 * math.erfc(-z / math.sqrt(2.0))


def mann_whitney_u(a, b, exact_max_product: int = EXACT_MAX_PRODUCT, alpha: float = ALPHA
                   ) -> StatTestResult:
    """Two-sided Mann-Whitney U test; U is reported for sample ``a``.

    Tie-free samples with ``n_a * n_b <= exact_max_product`` use the exact
    null distribution, otherwise a tie-corrected normal approximation with
    continuity correction.
    """
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    if len(a) == 0 or len(b) == 0:
        raise ValueError("both samples must be non-empty")
    if not (np.all(np.isfinite(a)) and np.all(np.isfinite(b))):
        raise ValueError("samples contain non-finite values")
    n_a, n_b = len(a), len(b)
    ranks = rankdata(np.concatenate([a, b]))
    u = float(ranks[:n_a].sum() - n_a * (n_a + 1) / 2.0)
    _, tie_counts = np.unique(np.concatenate([a, b]), return_counts=True)
    has_ties = bool(np.any(tie_counts > 1))

    if not has_ties and n_a * n_b <= exact_max_product:
        counts = u_distribution(n_a, n_b)
        total = math.comb(n_a + n_b, n_a)
        k = int(round(u))
        lower = sum(counts[: k + 1]) / total
        upper = sum(counts[k:]) / total
        p = min(1.0, 2.0 * min(lower, upper))
        method = "exact"
    else:
        n = n_a + n_b
        tie_term = float(np.sum(tie_counts.astype(np.float64) ** 3 - tie_counts)) / (n * (n - 1)) if n > 1 else 0.0
        var = n_a * n_b / 12.0 * ((n + 1) - tie_term)
        mu = n_a * n_b / 2.0
        if var <= 0.0:
            p = 1.0
        else:
            sd = math.sqrt(var)
            lower = _norm_cdf((u + 0.5 - mu) / sd)
            upper = 1.0 - _norm_cdf((u - 0.5 - mu) / sd)
            p = min(1.0, 2.0 * min(lower, upper))
        method = "normal_approximation"
    return StatTestResult(u, float(p), n_a, n_b, method, bool(p < alpha))


# --------------------------------------------------------------------------
# Stratified comparisons
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class StratumComparison:
    metric: str
    group_key: str
    group_a: str
    group_b: str
    strata: tuple[str, ...]
    stratum: tuple
    result: StatTestResult | None
    skipped: str = ""


def _field(record, name):
    if isinstance(record, dict):
        if name not in record:
            raise KeyError(name)
        return record[name]
    d = record.as_dict() if hasattr(record, "as_dict") else vars(record)
    if name not in d:
        raise KeyError(name)
    return d[name]


def _sort_key(value):
    # numbers before strings, each in natural order
    if isinstance(value, (int, float)):
        return (0, float(value), "")
    return (1, 0.0, str(value))


def compare_groups(
    records,
    metric: str,
    group_key: str = "gender",
    strata=("category", "snr_db"),
    groups=None,
    level: str | None = None,
    alpha: float = ALPHA,
    exact_max_product: int = EXACT_MAX_PRODUCT,
) -> list[StratumComparison]:
    """One Mann-Whitney test of ``group_a`` vs ``group_b`` per stratum.

    ``groups`` fixes the pair of group values; by default the two distinct
    values found in the records are used in sorted order. ``level``
    restricts the records to ``utterance`` or ``phoneme`` rows. Records
    whose metric is missing (None) are ignored.
    """
    records = list(records)
    strata = tuple(strata or ())
    rows = []
    for rec in records:
        try:
            value = _field(rec, metric)
            g = _field(rec, group_key)
            key = tuple(_field(rec, s) for s in strata)
            lvl = _field(rec, "level") if level else None
        except KeyError as exc:
            raise ValueError(f"unknown record field {exc.args[0]!r}") from None
        if level and lvl != level:
            continue
        if value is None or value == "":
            continue
        rows.append((key, g, float(value)))

    if groups is None:
        found = sorted({g for _, g, _ in rows}, key=_sort_key)
        if len(found) != 2:
            raise ValueError(
                f"{group_key!r} takes {len(found)} values {found}; pass groups=(a, b) explicitly"
            )
        groups = tuple(found)
    group_a, group_b = groups

    by_stratum: dict[tuple, tuple[list, list]] = {}
    for key, g, value in rows:
        bucket = by_stratum.setdefault(key, ([], []))
        if g == group_a:
            bucket[0].append(value)
        elif g == group_b:
            bucket[1].append(value)

    out = []
    for key in sorted(by_stratum, key=lambda k: tuple(_sort_key(v) for v in k)):
        xa, xb = by_stratum[key]
        missing = [str(g) for g, xs in ((group_a, xa), (group_b, xb)) if not xs]
        if missing:
            out.append(StratumComparison(metric, group_key, str(group_a), str(group_b), strata, key,
                                         None, f"no records for group {', '.join(missing)}"))
            continue
        res = mann_whitney_u(xa, xb, exact_max_product=exact_max_product, alpha=alpha)
        out.append(StratumComparison(metric, group_key, str(group_a), str(group_b), strata, key, res))
    return out
