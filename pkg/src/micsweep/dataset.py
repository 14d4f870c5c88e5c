"""The long-format metric dataset (one row per condition, sentence and metric)."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Iterable

COLUMNS = ("condition_id", "car", "noise", "hp_fc", "lp_fc", "peak_fc", "peak_q",
           "sentence_idx", "metric", "value")
# Columns a grouping or filter may refer to.
FACTORS = ("condition_id", "car", "noise", "hp_fc", "lp_fc", "peak_fc", "peak_q")


def format_value(v: float) -> str:
    return repr(float(v))


@dataclass(frozen=True)
class DatasetRow:
    condition_id: str
    car: str
    noise: str
    hp_fc: int
    lp_fc: int
    peak_fc: int
    peak_q: float
    sentence_idx: int
    metric: str
    value: float

    @classmethod
    def for_condition(cls, cond, sentence_idx: int, metric: str, value: float) -> "DatasetRow":
        mic = cond.mic
        return cls(cond.id, cond.car, cond.noise.value, mic.hp_fc, mic.lp_fc,
                   mic.peak_fc if mic.has_peak else -1, mic.peak_q if mic.has_peak else -1.0,
                   sentence_idx, metric, float(value))

    def factor(self, name: str) -> str:
        """String form of a factor column, as written to CSV."""
        if name == "peak_q":
            return f"{self.peak_q:g}"
        return str(getattr(self, name))

    def with_metric(self, sentence_idx: int, metric: str, value: float) -> "DatasetRow":
        return DatasetRow(self.condition_id, self.car, self.noise, self.hp_fc, self.lp_fc, self.peak_fc,
                          self.peak_q, sentence_idx, metric, float(value))

    def cells(self) -> list[str]:
        return [self.factor(c) for c in FACTORS] + [str(self.sentence_idx), self.metric, format_value(self.value)]


def write_dataset(rows: Iterable[DatasetRow], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(COLUMNS)
        for r in rows:
            w.writerow(r.cells())


def read_dataset(path) -> list[DatasetRow]:
    rows = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(header) != COLUMNS:
            raise ValueError(f"{path}: expected header {','.join(COLUMNS)}")
        for lineno, cells in enumerate(reader, start=2):
            if len(cells) != len(COLUMNS):
                raise ValueError(f"{path}:{lineno}: expected {len(COLUMNS)} fields, got {len(cells)}")
            try:
                value = float(cells[9])
                row = DatasetRow(cells[0], cells[1], cells[2], int(cells[3]), int(cells[4]), int(cells[5]),
                                 float(cells[6]), int(cells[7]), cells[8], value)
            except ValueError as exc:
                raise ValueError(f"{path}:{lineno}: {exc}") from exc
            if math.isnan(value):
                raise ValueError(f"{path}:{lineno}: NaN value")
            rows.append(row)
    return rows


def condition_rows(rows: Iterable[DatasetRow]) -> dict[str, DatasetRow]:
    """First row seen for each condition id, in dataset order."""
    out = {}
    for r in rows:
        out.setdefault(r.condition_id, r)
    return out
