"""Report emitters: SVG boxplots, ANOVA/box-summary/WER tables and an index file.

Everything written here is a pure function of the dataset and the
manifest digest, so regenerating a report gives identical bytes.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence
from xml.sax.saxutils import escape

from .dataset import DatasetRow, format_value
from .metrics import ASR_ERRORS_METRIC, ASR_WORDS_METRIC
from .stats import (WER_METRIC, BoxSummary, anova_by, box_summary, factor_levels, filter_rows,
                    format_filter, metric_rows)

PALETTE = ("#4c72b0", "#dd8452", "#55a868", "#c44e52", "#8172b3",
           "#937860", "#da8bc3", "#8c8c8c", "#ccb974", "#64b5cd")
METRIC_LABELS = {
    "snr_a": "A-weighted SNR [dB]",
    "s_mos": "S-MOS",
    "n_mos": "N-MOS",
    "g_mos": "G-MOS",
    "listening_effort": "Listening effort",
    "wer": "WER",
}
FACTOR_LABELS = {
    "car": "car", "noise": "noise", "hp_fc": "HP2 corner [Hz]", "lp_fc": "LP2 corner [Hz]",
    "peak_fc": "PK2 centre [Hz]", "peak_q": "PK2 q", "condition_id": "condition",
}


@dataclass(frozen=True)
class PlotSpec:
    metric: str
    x: str
    hue: str | None = None
    filters: Mapping[str, str] = field(default_factory=dict)
    output: Path | str | None = None
    title: str = ""


def _fmt(v: float) -> str:
    s = f"{v:.2f}"
    return "0.00" if s == "-0.00" else s


def _tick_label(v: float, step: float) -> str:
    digits = max(0, -int(math.floor(math.log10(step)))) if step < 1 else 0
    s = f"{v:.{digits}f}"
    return s[1:] if s.startswith("-") and float(s) == 0 else s


def _nice_ticks(lo: float, hi: float, target: int = 6) -> list[float]:
    if hi <= lo:
        pad = max(abs(lo) * 0.1, 0.5)
        lo, hi = lo - pad, hi + pad
    raw = (hi - lo) / target
    mag = 10.0 ** math.floor(math.log10(raw))
    step = next(m * mag for m in (1, 2, 2.5, 5, 10) if m * mag >= raw)
    start = math.floor(lo / step) * step
    ticks = []
    v = start
    while v < hi + step * 0.999:
        ticks.append(round(v / step) * step)
        v += step
    return ticks


def _cells(rows: Sequence[DatasetRow], spec: PlotSpec):
    """[(x level, hue level or None, values)] in plotting order, non-empty cells only."""
    sel = filter_rows(metric_rows(rows, spec.metric), spec.filters)
    out = []
    hue_levels = factor_levels(sel, spec.hue) if spec.hue else [None]
    for xl in factor_levels(sel, spec.x):
        sub = [r for r in sel if r.factor(spec.x) == xl]
        for hl in hue_levels:
            vals = [r.value for r in sub if (hl is None or r.factor(spec.hue) == hl) and math.isfinite(r.value)]
            if vals:
                out.append((xl, hl, vals))
    return out, hue_levels


def plot_cells(rows: Sequence[DatasetRow], spec: PlotSpec) -> list[tuple[str, str | None, BoxSummary]]:
    cells, _ = _cells(rows, spec)
    return [(xl, hl, box_summary(v)) for xl, hl, v in cells]


def boxplot_svg(rows: Sequence[DatasetRow], spec: PlotSpec, digest: str = "") -> str:
    """Render ``spec`` as a self-contained SVG document string."""
    cells, hue_levels = _cells(rows, spec)
    if not cells:
        raise ValueError(f"no {spec.metric} data for x={spec.x} hue={spec.hue} filter={format_filter(spec.filters)}")
    boxes = [(xl, hl, box_summary(v)) for xl, hl, v in cells]
    x_levels = list(dict.fromkeys(xl for xl, _, _ in boxes))
    n_hue = len(hue_levels)

    lo = min(min(b.whisker_lo, *b.outliers) if b.outliers else b.whisker_lo for _, _, b in boxes)
    hi = max(max(b.whisker_hi, *b.outliers) if b.outliers else b.whisker_hi for _, _, b in boxes)
    ticks = _nice_ticks(lo, hi)
    y0, y1 = ticks[0], ticks[-1]
    step = ticks[1] - ticks[0] if len(ticks) > 1 else 1.0

    band = max(60.0, 28.0 * n_hue + 20.0)
    left, right, top, bottom = 70.0, 20.0 + (120.0 if spec.hue else 0.0), 40.0, 60.0
    plot_w, plot_h = band * len(x_levels), 300.0
    width, height = left + plot_w + right, top + plot_h + bottom

    def ypix(v: float) -> float:
        return top + plot_h - (v - y0) / (y1 - y0) * plot_h

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{_fmt(width)}" height="{_fmt(height)}" '
        f'viewBox="0 0 {_fmt(width)} {_fmt(height)}" font-family="sans-serif" font-size="11">',
    ]
    if digest:
        out.append(f"<!-- manifest sha256 {escape(digest)} -->")
    title = spec.title or f"{spec.metric} by {spec.x}" + (f" and {spec.hue}" if spec.hue else "")
    if spec.filters:
        title += f" ({format_filter(spec.filters)})"
    out.append(f'<text x="{_fmt(width / 2)}" y="20" text-anchor="middle" font-size="13">{escape(title)}</text>')
    out.append(f'<rect x="{_fmt(left)}" y="{_fmt(top)}" width="{_fmt(plot_w)}" height="{_fmt(plot_h)}" '
               'fill="none" stroke="#000000"/>')
    for t in ticks:
        y = ypix(t)
        out.append(f'<line x1="{_fmt(left - 4)}" y1="{_fmt(y)}" x2="{_fmt(left + plot_w)}" y2="{_fmt(y)}" '
                   'stroke="#dddddd"/>')
        out.append(f'<text x="{_fmt(left - 6)}" y="{_fmt(y + 4)}" text-anchor="end">{_tick_label(t, step)}</text>')
    ylabel = METRIC_LABELS.get(spec.metric, spec.metric)
    out.append(f'<text x="16" y="{_fmt(top + plot_h / 2)}" text-anchor="middle" '
               f'transform="rotate(-90 16 {_fmt(top + plot_h / 2)})">{escape(ylabel)}</text>')
    out.append(f'<text x="{_fmt(left + plot_w / 2)}" y="{_fmt(height - 12)}" text-anchor="middle">'
               f'{escape(FACTOR_LABELS.get(spec.x, spec.x))}</text>')

    box_w = (band - 20.0) / n_hue
    for i, xl in enumerate(x_levels):
        cx = left + band * (i + 0.5)
        out.append(f'<text x="{_fmt(cx)}" y="{_fmt(top + plot_h + 18)}" text-anchor="middle">{escape(xl)}</text>')
    for xl, hl, b in boxes:
        i = x_levels.index(xl)
        j = hue_levels.index(hl)
        x_left = left + band * i + 10.0 + box_w * j + 2.0
        w = box_w - 4.0
        mid = x_left + w / 2
        color = PALETTE[j % len(PALETTE)]
        out.append(f'<g class="box" data-x="{escape(xl)}"' + (f' data-hue="{escape(hl)}"' if hl is not None else "")
                   + f' data-n="{b.count}">')
        out.append(f'<line x1="{_fmt(mid)}" y1="{_fmt(ypix(b.whisker_lo))}" x2="{_fmt(mid)}" '
                   f'y2="{_fmt(ypix(b.q1))}" stroke="#000000"/>')
        out.append(f'<line x1="{_fmt(mid)}" y1="{_fmt(ypix(b.q3))}" x2="{_fmt(mid)}" '
                   f'y2="{_fmt(ypix(b.whisker_hi))}" stroke="#000000"/>')
        for wv in (b.whisker_lo, b.whisker_hi):
            out.append(f'<line x1="{_fmt(mid - w / 4)}" y1="{_fmt(ypix(wv))}" x2="{_fmt(mid + w / 4)}" '
                       f'y2="{_fmt(ypix(wv))}" stroke="#000000"/>')
        out.append(f'<rect x="{_fmt(x_left)}" y="{_fmt(ypix(b.q3))}" width="{_fmt(w)}" '
                   f'height="{_fmt(ypix(b.q1) - ypix(b.q3))}" fill="{color}" stroke="#000000"/>')
        out.append(f'<line class="median" x1="{_fmt(x_left)}" y1="{_fmt(ypix(b.median))}" '
                   f'x2="{_fmt(x_left + w)}" y2="{_fmt(ypix(b.median))}" stroke="#000000" stroke-width="2"/>')
        for o in b.outliers:
            out.append(f'<circle cx="{_fmt(mid)}" cy="{_fmt(ypix(o))}" r="2" fill="none" stroke="#000000"/>')
        out.append("</g>")
    if spec.hue:
        lx = left + plot_w + 15.0
        out.append(f'<text x="{_fmt(lx)}" y="{_fmt(top + 10)}">{escape(FACTOR_LABELS.get(spec.hue, spec.hue))}</text>')
        for j, hl in enumerate(hue_levels):
            y = top + 24.0 + 16.0 * j
            out.append(f'<rect x="{_fmt(lx)}" y="{_fmt(y - 9)}" width="10" height="10" '
                       f'fill="{PALETTE[j % len(PALETTE)]}" stroke="#000000"/>')
            out.append(f'<text x="{_fmt(lx + 15)}" y="{_fmt(y)}">{escape(str(hl))}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def emit_boxplot_svg(rows: Sequence[DatasetRow], spec: PlotSpec, digest: str = "") -> Path:
    if spec.output is None:
        raise ValueError("PlotSpec.output is required")
    path = Path(spec.output)
    path.write_text(boxplot_svg(rows, spec, digest), encoding="utf-8", newline="\n")
    return path


# (grouping, filter, description) for the standard analyses; bandwidth
# analyses use flat profiles only.
STANDARD_ANALYSES = (
    ("noise", {}, "all conditions by noise class"),
    ("car", {}, "all conditions by car"),
    ("lp_fc", {"peak_fc": "-1"}, "LP2 corner, all HP2 corners, flat profiles"),
    ("lp_fc", {"hp_fc": "350", "peak_fc": "-1"}, "LP2 corner with HP2 = 350 Hz, flat profiles"),
    ("hp_fc", {"peak_fc": "-1"}, "HP2 corner, all LP2 corners, flat profiles"),
    ("hp_fc", {"lp_fc": "8000", "peak_fc": "-1"}, "HP2 corner with LP2 = 8 kHz, flat profiles"),
    ("peak_fc", {"lp_fc": "20000"}, "PK2 centre (-1 = no peak), full band"),
    ("peak_q", {"lp_fc": "20000"}, "PK2 q (-1 = no peak), full band"),
)

STANDARD_FIGURES = (
    ("car", "noise", {}, "by car, hue noise"),
    ("noise", "car", {}, "by noise, hue car"),
    ("lp_fc", "hp_fc", {"peak_fc": "-1"}, "LP2 corner, hue HP2 corner, flat profiles"),
    ("peak_fc", "peak_q", {"lp_fc": "20000"}, "PK2 centre, hue q, full band"),
)

_HIDDEN_METRICS = {ASR_ERRORS_METRIC, ASR_WORDS_METRIC}


def report_metrics(rows: Sequence[DatasetRow]) -> list[str]:
    names = list(dict.fromkeys(r.metric for r in rows if r.metric not in _HIDDEN_METRICS))
    if any(r.metric == ASR_ERRORS_METRIC for r in rows):
        names.append(WER_METRIC)
    return names


def _write_csv(path: Path, header: Sequence[str], body: Sequence[Sequence]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(body)


def anova_table(rows: Sequence[DatasetRow], metrics: Sequence[str]):
    """Rows for anova_report.csv plus notes on analyses that could not run."""
    body, notes = [], []
    for metric in metrics:
        for grouping, filters, _ in STANDARD_ANALYSES:
            label = format_filter(filters)
            try:
                res = anova_by(rows, metric, grouping, filters)
            except ValueError as exc:
                notes.append(f"skipped ANOVA {metric} by {grouping} [{label}]: {exc}")
                continue
            body.append((metric, grouping, label, format_value(res.p_value), format_value(res.f_stat),
                         res.df_between, res.df_within))
    return body, notes


def wer_table(rows: Sequence[DatasetRow]):
    body = []
    errors: dict[str, float] = {}
    for r in rows:
        if r.metric == ASR_ERRORS_METRIC:
            errors[r.condition_id] = errors.get(r.condition_id, 0.0) + r.value
    words: dict[str, float] = {}
    for r in rows:
        if r.metric == ASR_WORDS_METRIC:
            words[r.condition_id] = words.get(r.condition_id, 0.0) + r.value
    for r in metric_rows(rows, WER_METRIC):
        body.append([r.factor(c) for c in ("condition_id", "car", "noise", "hp_fc", "lp_fc", "peak_fc", "peak_q")]
                    + [int(errors[r.condition_id]), int(words[r.condition_id]), format_value(r.value)])
    return body


def emit_report(rows: Sequence[DatasetRow], out_dir, digest: str = "") -> Path:
    """Write ANOVA, box-summary and WER tables, standard figures and ``index.txt``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rows = list(rows)
    metrics = report_metrics(rows)
    entries: list[tuple[str, str]] = []
    notes: list[str] = []

    body, anova_notes = anova_table(rows, metrics)
    notes.extend(anova_notes)
    if body:
        _write_csv(out / "anova_report.csv", ("metric", "grouping", "filter", "p", "F", "df1", "df2"), body)
        entries.append(("anova_report.csv", "one-way ANOVA per metric and grouping (p, F, dfs)"))
    else:
        notes.append("anova_report.csv omitted: no analysis had at least two groups of two values")

    box_body = []
    figures = []
    for metric in metrics:
        for x, hue, filters, desc in STANDARD_FIGURES:
            spec = PlotSpec(metric, x, hue, filters)
            cells = plot_cells(rows, spec)
            name = f"fig_{metric}_{x}_by_{hue}.svg"
            if not cells:
                notes.append(f"{name} omitted: no {metric} data for {desc}")
                continue
            for xl, hl, b in cells:
                box_body.append((metric, f"{x}|{hue}", format_filter(filters), xl, hl, b.count,
                                 format_value(b.median), format_value(b.q1), format_value(b.q3),
                                 format_value(b.whisker_lo), format_value(b.whisker_hi), len(b.outliers)))
            emit_boxplot_svg(rows, PlotSpec(metric, x, hue, filters, out / name), digest)
            figures.append((name, f"boxplot of {metric} {desc}"))
    if box_body:
        _write_csv(out / "box_summaries.csv",
                   ("metric", "figure", "filter", "x", "hue", "count", "median", "q1", "q3",
                    "whisker_lo", "whisker_hi", "n_outliers"), box_body)
        entries.append(("box_summaries.csv", "box-plot statistics behind every figure cell"))
    else:
        notes.append("box_summaries.csv omitted: no plottable metric values")

    wer_body = wer_table(rows)
    if wer_body:
        _write_csv(out / "wer_by_condition.csv",
                   ("condition_id", "car", "noise", "hp_fc", "lp_fc", "peak_fc", "peak_q", "errors", "words", "wer"),
                   wer_body)
        entries.append(("wer_by_condition.csv", "pooled WER per condition with transcripts"))
    else:
        notes.append("wer_by_condition.csv omitted: no ASR transcripts ingested")
    entries.extend(figures)

    lines = ["micsweep report", f"manifest sha256: {digest or 'unknown'}",
             f"dataset rows: {len(rows)}", f"metrics: {', '.join(metrics) or 'none'}", "", "files:"]
    lines += [f"  {name}: {desc}" for name, desc in entries]
    if notes:
        lines += ["", "notes:"] + [f"  {n}" for n in notes]
    index = out / "index.txt"
    index.write_text("\n".join(lines) + "\n", encoding="utf-8", newline="\n")
    return index
