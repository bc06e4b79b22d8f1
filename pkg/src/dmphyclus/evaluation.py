"""Partition agreement and recovery summaries."""
from __future__ import annotations

import csv
from dataclasses import asdict, dataclass

import numpy as np

from .errors import ValidationError


def _labels(p):
    labels = getattr(p, "labels", p)
    if isinstance(labels, dict):
        return labels
    return list(labels)


def adjusted_rand_index(p1, p2) -> float:
    """Pair-counting Rand index corrected for chance (Hubert & Arabie).

    Partitions may be label sequences, ClusterAssignments, or dicts mapping
    element -> cluster id (which must share the same keys).
    """
    a, b = _labels(p1), _labels(p2)
    if isinstance(a, dict) or isinstance(b, dict):
        if not (isinstance(a, dict) and isinstance(b, dict)) or set(a) != set(b):
            raise ValidationError("partitions cover different element sets")
        keys = sorted(a)
        a, b = [a[k] for k in keys], [b[k] for k in keys]
    if len(a) != len(b):
        raise ValidationError(f"partitions have different sizes: {len(a)} vs {len(b)}")
    n = len(a)
    if n < 2:
        return 1.0
    _, ia = np.unique(a, return_inverse=True)
    _, ib = np.unique(b, return_inverse=True)
    table = np.zeros((ia.max() + 1, ib.max() + 1), dtype=np.int64)
    np.add.at(table, (ia.ravel(), ib.ravel()), 1)

    def pairs(x):
        return int((x * (x - 1) // 2).sum())

    # integer pair counts; the chance correction is formed as one exact ratio
    sum_ij = pairs(table)
    sum_a = pairs(table.sum(axis=1))
    sum_b = pairs(table.sum(axis=0))
    total = n * (n - 1) // 2
    num = 2 * (sum_ij * total - sum_a * sum_b)
    den = (sum_a + sum_b) * total - 2 * sum_a * sum_b
    if den == 0:
        # both partitions trivial (all-in-one or all singletons) and identical
        return 1.0
    return num / den


@dataclass(frozen=True)
class RecoverySummary:
    min: float
    max: float
    p10: float
    median: float
    p90: float
    mean: float
    sd: float
    se: float

    def as_row(self, ndigits: int = 3) -> list[str]:
        return [f"{v:.{ndigits}f}" for v in asdict(self).values()]


SUMMARY_HEADER = ["Min.", "Max.", "10th perc.", "Median", "90th perc.", "Mean", "SD", "SE"]


def summarize_recovery(values) -> RecoverySummary:
    """Table-style summary; percentiles use linear interpolation."""
    x = np.asarray(list(values), dtype=float)
    if x.size == 0:
        raise ValidationError("cannot summarize an empty list")
    sd = float(x.std(ddof=1)) if x.size > 1 else 0.0
    return RecoverySummary(
        float(x.min()), float(x.max()),
        float(np.percentile(x, 10, method="linear")),
        float(np.median(x)),
        float(np.percentile(x, 90, method="linear")),
        float(x.mean()), sd, sd / np.sqrt(x.size))


def write_summary_csv(rows: dict, path) -> None:
    """``rows`` maps a row name (e.g. estimator) to a RecoverySummary."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["Estimate"] + SUMMARY_HEADER)
        for name, summ in rows.items():
            w.writerow([name] + summ.as_row())
