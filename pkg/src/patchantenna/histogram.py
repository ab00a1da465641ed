"""TCSPC decay histograms and their CSV form (``time_ns, counts``)."""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .exceptions import HistogramParseError, ValidationError

# 2.5 MHz laser repetition
DEFAULT_WINDOW = 400.0
HEADER = ("time_ns", "counts")


@dataclass(frozen=True, eq=False)
class DecayHistogram:
    bin_start: np.ndarray
    counts: np.ndarray
    window: float = DEFAULT_WINDOW

    def __post_init__(self):
        t = np.asarray(self.bin_start, dtype=float)
        c = np.asarray(self.counts)
        if t.ndim != 1 or t.shape != c.shape or t.size < 2:
            raise ValidationError("bin_start and counts must be 1-D arrays of equal length >= 2")
        if np.any(c < 0):
            raise ValidationError("counts must be non-negative")
        if not np.all(np.asarray(c) == np.round(c)):
            raise ValidationError("counts must be integers")
        check_uniform(t)
        object.__setattr__(self, "bin_start", t)
        object.__setattr__(self, "counts", c.astype(np.int64))

    @property
    def bin_width(self):
        return float(self.bin_start[1] - self.bin_start[0])

    @property
    def edges(self):
        return np.append(self.bin_start, self.bin_start[-1] + self.bin_width)

    @property
    def total(self):
        return int(self.counts.sum())

    def __len__(self):
        return self.bin_start.size


def check_uniform(t, rtol=1e-6):
    dt = np.diff(t)
    if np.any(dt <= 0):
        raise ValidationError("bin times must be strictly increasing")
    if np.max(np.abs(dt - dt[0])) > rtol * dt[0]:
        raise ValidationError(f"bins are not uniform (max width deviation > {rtol:g} relative)")


def format_float(x):
    """17 significant digits: round-trips every double exactly."""
    return f"{float(x):.17g}"


def histogram_to_csv(hist: DecayHistogram) -> str:
    buf = io.StringIO()
    buf.write(",".join(HEADER) + "\n")
    for t, c in zip(hist.bin_start, hist.counts):
        buf.write(f"{format_float(t)},{int(c)}\n")
    return buf.getvalue()


def write_histogram(hist: DecayHistogram, path):
    Path(path).write_text(histogram_to_csv(hist))


def read_histogram(path, window=DEFAULT_WINDOW) -> DecayHistogram:
    """Parse a ``time_ns, counts`` CSV with header row."""
    path = Path(path)
    if not path.is_file():
        raise ValidationError(f"no such histogram file: {path}")
    with path.open(newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or tuple(c.strip() for c in rows[0]) != HEADER:
        raise HistogramParseError("expected header 'time_ns,counts'", line=1)
    times, counts = [], []
    for lineno, row in enumerate(rows[1:], start=2):
        if not row or not "".join(row).strip():
            continue
        if len(row) != 2:
            raise HistogramParseError(f"expected 2 columns, got {len(row)}", line=lineno)
        try:
            t = float(row[0])
            c = float(row[1])
        except ValueError:
            raise HistogramParseError(f"not numeric: {row!r}", line=lineno) from None
        if c < 0:
            raise HistogramParseError(f"negative count {row[1].strip()}", line=lineno)
        if c != int(c):
            raise HistogramParseError(f"non-integer count {row[1].strip()}", line=lineno)
        times.append(t)
        counts.append(int(c))
    if len(times) < 2:
        raise HistogramParseError("need at least two bins")
    return DecayHistogram(np.array(times), np.array(counts, dtype=np.int64), window)
