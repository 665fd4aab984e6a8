"""Per-checkpoint metric records shared by all training loops."""
from __future__ import annotations

import math
from typing import Iterable, Sequence

import numpy as np


def is_checkpoint(t: int, T: int) -> bool:
    """Powers of two plus the final iteration."""
    return t == T or (t > 0 and (t & (t - 1)) == 0)


def format_value(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    v = float(v)
    if math.isnan(v):
        return "nan"
    return repr(v)


class MetricLog:
    """Ordered checkpoint records.  ``iteration`` must strictly increase."""

    def __init__(self, columns: Sequence[str] = ("iteration",)):
        columns = list(columns)
        if "iteration" not in columns:
            columns.insert(0, "iteration")
        self.columns = columns
        self.records: list = []
        self.info: dict = {}

    def append(self, **row):
        it = row.get("iteration")
        if it is None:
            raise ValueError("record needs an iteration")
        if self.records and it <= self.records[-1]["iteration"]:
            raise ValueError("iterations must strictly increase")
        for key in row:
            if key not in self.columns:
                self.columns.append(key)
        self.records.append(dict(row))

    def __len__(self):
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def column(self, name) -> np.ndarray:
        return np.array([r.get(name, np.nan) for r in self.records], dtype=float)

    @property
    def last(self) -> dict:
        return self.records[-1] if self.records else {}

    def rows(self):
        for r in self.records:
            yield [r.get(c) for c in self.columns]

    def to_csv(self, header: Iterable[str] = ()) -> str:
        lines = [f"# {h}" for h in header]
        lines.append(",".join(self.columns))
        for r in self.rows():
            lines.append(",".join(format_value(v) for v in r))
        return "\n".join(lines) + "\n"
