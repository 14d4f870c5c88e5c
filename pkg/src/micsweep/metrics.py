"""Per-sentence metrics: segmentation, A-weighted SNR, WER and external score ingestion."""
from __future__ import annotations

import csv
import functools
import math
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, NamedTuple, Sequence

import numpy as np
from scipy import signal

from .audio_io import AudioBuffer, write_wav
from .dsp import a_weighting_cascade
from .fixtures import StimulusLayout

SNR_FLOOR = 1e-20
SNR_METRIC = "snr_a"
ASR_ERRORS_METRIC = "asr_errors"
ASR_WORDS_METRIC = "asr_words"
MOS_RANGE = (1.0, 5.0)


@dataclass(frozen=True)
class SentenceRecord:
    condition_id: str
    sentence_idx: int
    metric: str
    value: float


@dataclass(frozen=True, eq=False)
class SentenceSlice:
    index: int
    lead: np.ndarray
    active: np.ndarray
    trail: np.ndarray
    sample_rate: int

    def samples(self) -> np.ndarray:
        return np.concatenate([self.lead, self.active, self.trail])


def segment(x: AudioBuffer, layout: StimulusLayout) -> list[SentenceSlice]:
    """Cut ``x`` into fixed-time sentence windows of (lead silence, active, trail silence)."""
    n_sent, n_lead, n_trail = layout.samples(x.sample_rate)
    expected = layout.sentence_count * n_sent
    if len(x) != expected:
        raise ValueError(f"buffer has {len(x)} samples, layout needs exactly {expected}")
    s = x.samples
    out = []
    for i in range(layout.sentence_count):
        a = i * n_sent
        out.append(SentenceSlice(i, s[a:a + n_lead], s[a + n_lead:a + n_sent - n_trail],
                                 s[a + n_sent - n_trail:a + n_sent], x.sample_rate))
    return out


@functools.lru_cache(maxsize=8)
def _a_weighting_sos(sample_rate: int) -> np.ndarray:
    return a_weighting_cascade(sample_rate).sos()


def snr_a_weighted(sl: SentenceSlice) -> float:
    """A-weighted SNR (dB) of one sentence window, silence-referenced.

    The whole window is A-weighted, then
    ``10*log10(max(P_active - P_noise, 1e-20) / P_noise)`` where P_noise is the
    mean power over both silences. Returns ``inf`` when the silences are
    exactly zero before weighting (the filter tail would otherwise leak
    speech into the trailing silence).
    """
    if sl.lead.size + sl.trail.size == 0 or sl.active.size == 0:
        raise ValueError("sentence slice needs nonempty silence and active regions")
    if not np.any(sl.lead) and not np.any(sl.trail):
        return math.inf
    y = signal.sosfilt(_a_weighting_sos(sl.sample_rate), sl.samples())
    n_lead, n_active = sl.lead.size, sl.active.size
    active = y[n_lead:n_lead + n_active]
    silence = np.concatenate([y[:n_lead], y[n_lead + n_active:]])
    p_noise = float(np.mean(silence * silence))
    if p_noise == 0.0:
        return math.inf
    p_active = float(np.mean(active * active))
    return 10.0 * math.log10(max(p_active - p_noise, SNR_FLOOR) / p_noise)


_PUNCT = re.compile(r"[^\w\s']+")
_EDGE_APOSTROPHES = re.compile(r"(?<!\w)'+|'+(?!\w)")


def normalize_text(s: str) -> list[str]:
    """Lowercase, drop punctuation (intra-word apostrophes survive), split on whitespace."""
    s = _PUNCT.sub(" ", s.lower().replace("_", " "))
    s = _EDGE_APOSTROPHES.sub(" ", s)
    return s.split()


class WerCounts(NamedTuple):
    substitutions: int
    deletions: int
    insertions: int
    ref_words: int

    @property
    def errors(self) -> int:
        return self.substitutions + self.deletions + self.insertions

    @property
    def rate(self) -> float:
        return self.errors / self.ref_words


def wer(ref: Sequence[str], hyp: Sequence[str]) -> WerCounts:
    """Minimal unit-cost edit alignment of ``hyp`` against ``ref``.

    Ties between equal-cost alignments prefer substitutions, then
    deletions, then insertions, so the S/D/I split is deterministic.
    """
    n, m = len(ref), len(hyp)
    if n == 0:
        raise ValueError("reference must contain at least one word")
    # cost[j] holds (total, S, D, I) for the current DP row.
    prev = [(j, 0, 0, j) for j in range(m + 1)]
    for i in range(1, n + 1):
        cur = [(i, 0, i, 0)]
        for j in range(1, m + 1):
            diag = prev[j - 1]
            if ref[i - 1] == hyp[j - 1]:
                sub = diag
            else:
                sub = (diag[0] + 1, diag[1] + 1, diag[2], diag[3])
            up = prev[j]
            dele = (up[0] + 1, up[1], up[2] + 1, up[3])
            left = cur[j - 1]
            ins = (left[0] + 1, left[1], left[2], left[3] + 1)
            cur.append(min((sub, dele, ins), key=lambda c: c[0]))
        prev = cur
    _, s, d, ins = prev[m]
    return WerCounts(s, d, ins, n)


def wer_aggregate(references: Sequence[Sequence[str]], hypotheses: Mapping[int, Sequence[str]]) -> float:
    """Pooled WER over one condition's sentences: sum of errors over sum of reference words.

    A sentence without a hypothesis counts as fully deleted.
    """
    if not hypotheses:
        raise ValueError("no transcripts for this condition")
    unknown = set(hypotheses) - set(range(len(references)))
    if unknown:
        raise ValueError(f"hypotheses for unknown sentence indices {sorted(unknown)}")
    errors = words = 0
    for i, ref in enumerate(references):
        c = wer(ref, hypotheses.get(i, ()))
        errors += c.errors
        words += c.ref_words
    return errors / words


def read_csv_rows(path, required: Sequence[str]) -> list[dict]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or [f.strip() for f in reader.fieldnames][:len(required)] != list(required):
            raise ValueError(f"{path}: expected header {','.join(required)}, got {reader.fieldnames}")
        return list(reader)


def ingest_external_metrics(csv_path, known_conditions: Iterable[str],
                            sentence_count: int = 20) -> list[SentenceRecord]:
    """Validate a ``condition_id,sentence_idx,metric,value`` CSV of externally computed scores.

    Metric names pass through unchanged; any metric ending in ``_mos`` must
    lie in [1, 5].
    """
    known = set(known_conditions)
    out, seen = [], {}
    rows = read_csv_rows(csv_path, ("condition_id", "sentence_idx", "metric", "value"))
    for lineno, row in enumerate(rows, start=2):
        where = f"{csv_path}:{lineno}"
        try:
            cid = row["condition_id"].strip()
            idx = int(row["sentence_idx"])
            metric = row["metric"].strip()
            value = float(row["value"])
        except (TypeError, ValueError, AttributeError) as exc:
            raise ValueError(f"{where}: malformed row {row!r}") from exc
        if cid not in known:
            raise ValueError(f"{where}: unknown condition_id {cid!r}")
        if not 0 <= idx < sentence_count:
            raise ValueError(f"{where}: sentence_idx {idx} out of range")
        if not metric or not math.isfinite(value):
            raise ValueError(f"{where}: malformed row {row!r}")
        if metric.endswith("_mos") and not MOS_RANGE[0] <= value <= MOS_RANGE[1]:
            raise ValueError(f"{where}: {metric}={value} outside the MOS scale 1..5")
        key = (cid, idx, metric)
        if key in seen:
            raise ValueError(f"{where}: duplicate ({cid}, {idx}, {metric}), first seen on line {seen[key]}")
        seen[key] = lineno
        out.append(SentenceRecord(cid, idx, metric, value))
    return out


JOBS_HEADER = ("condition_id", "sentence_idx", "wav_path", "reference")
HYPOTHESES_HEADER = ("condition_id", "sentence_idx", "hypothesis")


def export_asr_batch(renders: Iterable[tuple[str, AudioBuffer]], layout: StimulusLayout,
                     references: Sequence[str], out_dir) -> Path:
    """Write each sentence window to ``asr/<condition_id>/<idx>.wav`` plus ``asr/jobs.csv``.

    ``wav_path`` in jobs.csv is relative to the ``asr`` directory.
    """
    if len(references) != layout.sentence_count:
        raise ValueError(f"{len(references)} reference sentences for {layout.sentence_count} sentences")
    asr = Path(out_dir) / "asr"
    asr.mkdir(parents=True, exist_ok=True)
    jobs = asr / "jobs.csv"
    with open(jobs, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(JOBS_HEADER)
        for cid, buf in renders:
            cdir = asr / cid
            cdir.mkdir(exist_ok=True)
            for sl in segment(buf, layout):
                rel = f"{cid}/{sl.index}.wav"
                write_wav(asr / rel, AudioBuffer(sl.samples(), sl.sample_rate), "float32")
                w.writerow((cid, sl.index, rel, references[sl.index]))
    return jobs


def read_jobs(path) -> list[dict]:
    return read_csv_rows(path, JOBS_HEADER)


def read_hypotheses(path) -> dict[tuple[str, int], list[str]]:
    out = {}
    for lineno, row in enumerate(read_csv_rows(path, HYPOTHESES_HEADER), start=2):
        try:
            key = (row["condition_id"].strip(), int(row["sentence_idx"]))
        except (TypeError, ValueError, AttributeError) as exc:
            raise ValueError(f"{path}:{lineno}: malformed row {row!r}") from exc
        if key in out:
            raise ValueError(f"{path}:{lineno}: duplicate hypothesis for {key}")
        out[key] = normalize_text(row["hypothesis"] or "")
    return out


def asr_records(hypotheses: Mapping[tuple[str, int], Sequence[str]], references: Sequence[str],
                condition_ids: Iterable[str]) -> list[SentenceRecord]:
    """Per-sentence error and reference-word counts for every condition with transcripts.

    Conditions with at least one hypothesis get rows for all sentences
    (missing sentences as full deletions); others get none.
    """
    refs = [normalize_text(r) for r in references]
    known = set(condition_ids)
    stray = sorted({cid for cid, _ in hypotheses} - known)
    if stray:
        raise ValueError(f"hypotheses for unknown conditions: {', '.join(stray[:5])}")
    with_hyp = {cid for cid, _ in hypotheses}
    out = []
    for cid in condition_ids:
        if cid not in with_hyp:
            continue
        for i, ref in enumerate(refs):
            c = wer(ref, hypotheses.get((cid, i), ()))
            out.append(SentenceRecord(cid, i, ASR_ERRORS_METRIC, float(c.errors)))
            out.append(SentenceRecord(cid, i, ASR_WORDS_METRIC, float(c.ref_words)))
    return out
