"""One-way ANOVA with F-distribution p-values, and Tukey box-plot summaries."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from .dataset import FACTORS, DatasetRow
from .metrics import ASR_ERRORS_METRIC, ASR_WORDS_METRIC

_CF_EPS = 1e-16
_CF_TINY = 1e-300
_CF_MAX_ITER = 100000
WER_METRIC = "wer"
NOISE_ORDER = ("idle", "city", "highway")


def _betacf(a: float, b: float, x: float) -> float:
    """Continued fraction for I_x(a, b), modified Lentz evaluation."""
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    if abs(d) < _CF_TINY:
        d = _CF_TINY
    d = 1.0 / d
    h = d
    for m in range(1, _CF_MAX_ITER):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        d = _CF_TINY if abs(d) < _CF_TINY else d
        c = 1.0 + aa / c
        c = _CF_TINY if abs(c) < _CF_TINY else c
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        d = _CF_TINY if abs(d) < _CF_TINY else d
        c = 1.0 + aa / c
        c = _CF_TINY if abs(c) < _CF_TINY else c
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < _CF_EPS:
            return h
    raise ArithmeticError(f"incomplete beta continued fraction did not converge (a={a}, b={b}, x={x})")


def betainc(a: float, b: float, x: float) -> float:
    """Regularized incomplete beta function I_x(a, b)."""
    if a <= 0 or b <= 0:
        raise ValueError("betainc needs a, b > 0")
    if not 0.0 <= x <= 1.0:
        raise ValueError(f"betainc needs 0 <= x <= 1, got {x}")
    if x == 0.0 or x == 1.0:
        return x
    log_front = (math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b)
                 + a * math.log(x) + b * math.log1p(-x))
    if x < (a + 1.0) / (a + b + 2.0):
        return math.exp(log_front) * _betacf(a, b, x) / a
    return 1.0 - math.exp(log_front) * _betacf(b, a, 1.0 - x) / b


def _check_dfs(d1: float, d2: float) -> None:
    if not (d1 >= 1 and d2 >= 1):
        raise ValueError(f"degrees of freedom must be >= 1, got ({d1}, {d2})")


def f_cdf(x: float, d1: float, d2: float) -> float:
    """CDF of the F(d1, d2) distribution."""
    _check_dfs(d1, d2)
    if x < 0 or math.isnan(x):
        raise ValueError(f"f_cdf needs x >= 0, got {x}")
    if math.isinf(x):
        return 1.0
    return betainc(d1 / 2.0, d2 / 2.0, d1 * x / (d1 * x + d2))


def f_sf(x: float, d1: float, d2: float) -> float:
    """Upper tail 1 - f_cdf(x), evaluated without cancellation."""
    _check_dfs(d1, d2)
    if x < 0 or math.isnan(x):
        raise ValueError(f"f_sf needs x >= 0, got {x}")
    if math.isinf(x):
        return 0.0
    return betainc(d2 / 2.0, d1 / 2.0, d2 / (d2 + d1 * x))


@dataclass(frozen=True)
class AnovaResult:
    f_stat: float
    p_value: float
    df_between: int
    df_within: int
    group_means: tuple[float, ...] = ()
    group_counts: tuple[int, ...] = ()
    group_labels: tuple[str, ...] = field(default=(), compare=False)


def anova_oneway(groups: Sequence[Sequence[float]], labels: Sequence[str] = ()) -> AnovaResult:
    """One-way ANOVA over ``groups`` (each a list of values).

    F = (SSB/(k-1)) / (SSW/(N-k)) and p is its F(k-1, N-k) upper tail.
    Zero within-group variance gives F=0, p=1 when the means agree too and
    F=inf, p=0 otherwise.
    """
    arrays = [np.asarray(g, dtype=np.float64).ravel() for g in groups]
    k = len(arrays)
    if k < 2:
        raise ValueError(f"ANOVA needs at least 2 groups, got {k}")
    for i, g in enumerate(arrays):
        if g.size < 2:
            raise ValueError(f"group {labels[i] if labels else i} has {g.size} value(s), need >= 2")
        if not np.all(np.isfinite(g)):
            raise ValueError(f"group {labels[i] if labels else i} has non-finite values")
    n = sum(g.size for g in arrays)
    df_b, df_w = k - 1, n - k
    means = [math.fsum(g) / g.size for g in arrays]
    grand = math.fsum(math.fsum(g) for g in arrays) / n
    ssb = math.fsum(g.size * (m - grand) ** 2 for g, m in zip(arrays, means))
    ssw = math.fsum(math.fsum((g - m) ** 2) for g, m in zip(arrays, means))
    if ssw == 0.0:
        f, p = (0.0, 1.0) if ssb == 0.0 else (math.inf, 0.0)
    else:
        f = (ssb / df_b) / (ssw / df_w)
        p = f_sf(f, df_b, df_w)
    return AnovaResult(f, p, df_b, df_w, tuple(means), tuple(g.size for g in arrays), tuple(labels))


@dataclass(frozen=True)
class BoxSummary:
    median: float
    q1: float
    q3: float
    whisker_lo: float
    whisker_hi: float
    outliers: tuple[float, ...]
    count: int


def box_summary(values: Iterable[float]) -> BoxSummary:
    """Quartiles by linear interpolation of order statistics, Tukey 1.5*IQR whiskers.

    A whisker falls back to its quartile when no data point lies between
    the quartile and the fence.
    """
    x = np.sort(np.asarray(list(values), dtype=np.float64))
    if x.size == 0:
        raise ValueError("box_summary needs at least one value")
    q1, med, q3 = (float(v) for v in np.percentile(x, [25, 50, 75]))
    iqr = q3 - q1
    lo_fence, hi_fence = q1 - 1.5 * iqr, q3 + 1.5 * iqr
    inside = x[(x >= lo_fence) & (x <= hi_fence)]
    w_lo = min(float(inside[0]), q1) if inside.size else q1
    w_hi = max(float(inside[-1]), q3) if inside.size else q3
    outliers = tuple(float(v) for v in x[(x < lo_fence) | (x > hi_fence)])
    return BoxSummary(med, q1, q3, w_lo, w_hi, outliers, int(x.size))


# ------------------------------------------------------------ dataset views


def parse_filter(text: str | None) -> dict[str, str]:
    """``"hp_fc=350;peak_fc=-1"`` -> ``{"hp_fc": "350", "peak_fc": "-1"}``."""
    out = {}
    if not text:
        return out
    for part in text.replace(",", ";").split(";"):
        part = part.strip()
        if not part:
            continue
        key, sep, value = part.partition("=")
        key, value = key.strip(), value.strip()
        if not sep or key not in FACTORS:
            raise ValueError(f"bad filter term {part!r}; use <column>=<value> with column in {', '.join(FACTORS)}")
        if key == "peak_q":
            value = f"{float(value):g}"
        out[key] = value
    return out


def format_filter(filters: Mapping[str, str]) -> str:
    return ";".join(f"{k}={v}" for k, v in filters.items()) or "all"


def metric_rows(rows: Iterable[DatasetRow], metric: str) -> list[DatasetRow]:
    """Rows for ``metric``; ``wer`` is derived as one pooled value per condition."""
    rows = list(rows)
    if metric != WER_METRIC:
        return [r for r in rows if r.metric == metric]
    errors: dict[str, float] = {}
    words: dict[str, float] = {}
    first: dict[str, DatasetRow] = {}
    for r in rows:
        if r.metric == ASR_ERRORS_METRIC:
            errors[r.condition_id] = errors.get(r.condition_id, 0.0) + r.value
            first.setdefault(r.condition_id, r)
        elif r.metric == ASR_WORDS_METRIC:
            words[r.condition_id] = words.get(r.condition_id, 0.0) + r.value
    return [r.with_metric(-1, WER_METRIC, errors[cid] / words[cid])
            for cid, r in first.items() if words.get(cid)]


def _sort_key(factor: str, label: str):
    if factor == "noise" and label in NOISE_ORDER:
        return (0, NOISE_ORDER.index(label), "")
    try:
        return (1, float(label), "")
    except ValueError:
        return (2, 0.0, label)


def factor_levels(rows: Sequence[DatasetRow], factor: str) -> list[str]:
    """Distinct levels in natural order: noise by severity, numbers ascending, cars as first seen."""
    seen = list(dict.fromkeys(r.factor(factor) for r in rows))
    if factor in ("car", "condition_id"):
        return seen
    return sorted(seen, key=lambda s: _sort_key(factor, s))


def filter_rows(rows: Iterable[DatasetRow], filters: Mapping[str, str]) -> list[DatasetRow]:
    return [r for r in rows if all(r.factor(k) == v for k, v in filters.items())]


def group_values(rows: Iterable[DatasetRow], metric: str, by: str,
                 filters: Mapping[str, str] | None = None) -> dict[str, list[float]]:
    """Values of ``metric`` grouped by factor ``by`` after applying ``filters``.

    Infinite values (silent-noise SNR) are excluded.
    """
    if by not in FACTORS:
        raise ValueError(f"unknown grouping {by!r}; choose from {', '.join(FACTORS)}")
    sel = filter_rows(metric_rows(rows, metric), filters or {})
    out = {level: [] for level in factor_levels(sel, by)}
    for r in sel:
        if math.isfinite(r.value):
            out[r.factor(by)].append(r.value)
    return out


def anova_by(rows: Iterable[DatasetRow], metric: str, by: str,
             filters: Mapping[str, str] | None = None) -> AnovaResult:
    groups = group_values(rows, metric, by, filters)
    if not groups:
        raise ValueError(f"no {metric} values for grouping {by} with filter {format_filter(filters or {})}")
    return anova_oneway(list(groups.values()), labels=list(groups))
