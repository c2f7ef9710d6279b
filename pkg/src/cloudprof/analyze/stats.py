"""Boxplot statistics over groups of durations.

Quartiles use linear interpolation between closest ranks (numpy's default
``linear`` method): for sorted ``x`` of length ``n`` the ``p`` quantile sits at
position ``p * (n - 1)``. Whiskers reach to the most extreme point inside
``[q1 - 1.5 IQR, q3 + 1.5 IQR]``; anything beyond is an outlier.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Iterable

import numpy as np

WHISKER = 1.5


class NoDataError(ValueError):
    pass


@dataclass(frozen=True)
class LatencyStats:
    group: str
    locality: str
    count: int
    min: float
    q1: float
    median: float
    q3: float
    max: float
    mean: float
    whisker_lo: float
    whisker_hi: float
    outliers: list = field(default_factory=list)

    @property
    def iqr(self) -> float:
        return self.q3 - self.q1

    def to_dict(self) -> dict:
        d = asdict(self)
        d["iqr"] = self.iqr
        return d


STATS_COLUMNS = ("group", "locality", "count", "min", "whisker_lo", "q1", "median", "q3", "whisker_hi", "max", "mean", "outliers")


def stats(values: Iterable[float], group: str = "", locality: str = "") -> LatencyStats:
    x = np.sort(np.asarray(list(values) if not isinstance(values, np.ndarray) else values, dtype=np.float64))
    if x.size == 0:
        raise NoDataError(f"no durations in group {group!r} ({locality})")
    q1, med, q3 = (float(v) for v in np.percentile(x, [25, 50, 75], method="linear"))
    fence_lo = q1 - WHISKER * (q3 - q1)
    fence_hi = q3 + WHISKER * (q3 - q1)
    inside = x[(x >= fence_lo) & (x <= fence_hi)]
    out = x[(x < fence_lo) | (x > fence_hi)]
    return LatencyStats(
        group,
        locality,
        int(x.size),
        float(x[0]),
        q1,
        med,
        q3,
        float(x[-1]),
        float(x.mean()),
        float(inside[0]),
        float(inside[-1]),
        [float(v) for v in out],
    )


def stats_row(s: LatencyStats) -> list:
    return [s.group, s.locality, s.count, s.min, s.whisker_lo, s.q1, s.median, s.q3, s.whisker_hi, s.max, s.mean, len(s.outliers)]


def histogram(values, bins: int = 50) -> list[tuple[float, float, int]]:
    """(left edge, right edge, count) rows for external density plots."""
    x = np.asarray(values, dtype=np.float64)
    if x.size == 0:
        return []
    counts, edges = np.histogram(x, bins=bins)
    return [(float(edges[i]), float(edges[i + 1]), int(c)) for i, c in enumerate(counts)]
