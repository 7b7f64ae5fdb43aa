"""Dice scoring, the per-epoch metrics table, and final reporting.

Metrics files are plain CSV with a fixed header.  Floats are written
with ``repr`` so that identical runs produce byte-identical files.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .validation import check_labels

CSV_HEADER = "epoch,mode,seed,l_gda,l_kt,l_cor,l_total,clean_fraction,test_dice"


def dice_score(pred, gt, foreground=1):
    """Overlap score in percent; two empty masks count as perfect."""
    p = check_labels(pred, name="pred")
    g = check_labels(gt, name="gt")
    if p.shape != g.shape:
        raise ValueError(f"shape mismatch: pred {p.shape} vs gt {g.shape}")
    a = p == foreground
    b = g == foreground
    denom = int(a.sum()) + int(b.sum())
    if denom == 0:
        return 100.0
    return 100.0 * 2.0 * int((a & b).sum()) / denom


@dataclass
class MetricRow:
    epoch: int
    mode: str
    seed: int
    l_gda: float
    l_kt: float
    l_cor: float
    l_total: float
    clean_fraction: float
    test_dice: float

    def to_csv(self):
        return ",".join([
            str(self.epoch), self.mode, str(self.seed),
            repr(float(self.l_gda)), repr(float(self.l_kt)), repr(float(self.l_cor)),
            repr(float(self.l_total)), repr(float(self.clean_fraction)),
            repr(float(self.test_dice)),
        ])

    @classmethod
    def from_csv(cls, line):
        parts = line.split(",")
        if len(parts) != 9:
            raise ValueError(f"expected 9 csv fields, got {len(parts)}: {line!r}")
        return cls(int(parts[0]), parts[1], int(parts[2]), *map(float, parts[3:]))


def write_metrics(path, rows):
    with open(path, "w") as fh:
        fh.write(CSV_HEADER + "\n")
        for r in rows:
            fh.write(r.to_csv() + "\n")


def read_metrics(path):
    lines = Path(path).read_text().splitlines()
    if not lines or lines[0] != CSV_HEADER:
        raise ValueError(f"{path}: missing metrics header")
    return [MetricRow.from_csv(line) for line in lines[1:] if line.strip()]


@dataclass
class FinalReport:
    """Mean and population std of test Dice over the last epochs."""

    mean: float
    std: float
    n_epochs: int
    truncated: bool  # fewer epochs were available than requested


def final_report(rows, last=10):
    if last < 1:
        raise ValueError(f"last must be >= 1, got {last}")
    if not rows:
        raise ValueError("no metric rows")
    tail = rows[-last:]
    vals = np.array([r.test_dice for r in tail], dtype=np.float64)
    return FinalReport(
        mean=float(vals.mean()),
        std=float(vals.std()),  # population std, matching reporting convention
        n_epochs=len(tail),
        truncated=len(tail) < last,
    )
