"""
How the learned radius b relates to local crowding and goal proximity.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np
from scipy import stats

from harness.metrics import MetricsRecord, RecordKind

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class Correlation:
    """
    Attributes:
        r (float): Pearson coefficient; 0 for a constant series.
        p_value (float): Two-sided p-value from the t approximation; nan below three samples.
        n (int): Number of pairs used.
        degenerate (bool): True when either series is constant.
    """
    r: float
    p_value: float
    n: int
    degenerate: bool = False

    def to_dict(self) -> dict:
        return {"r": self.r, "p_value": self.p_value, "n": self.n, "degenerate": self.degenerate}


def pearson(x, y) -> Correlation:
    """
    Pearson r of two equally long series with p = 2 * sf_t(|t|, n - 2), t = r * sqrt((n - 2) / (1 - r^2)).

    Raises:
        ValueError: If the series differ in length or hold fewer than two points.
    """
    x = np.asarray(x, dtype=np.float64).ravel()
    y = np.asarray(y, dtype=np.float64).ravel()
    if x.shape != y.shape:
        raise ValueError(f"Invalid series: Expected equal lengths, but got {x.size} and {y.size}.")
    n = int(x.size)
    if n < 2:
        raise ValueError(f"Invalid series: Expected at least 2 pairs, but got {n}.")
    dx = x - x.mean()
    dy = y - y.mean()
    sxx = float(dx @ dx)
    syy = float(dy @ dy)
    if sxx == 0.0 or syy == 0.0:
        return Correlation(0.0, 1.0 if n > 2 else math.nan, n, degenerate=True)
    r = float(np.clip((dx @ dy) / math.sqrt(sxx * syy), -1.0, 1.0))
    if n <= 2:
        return Correlation(r, math.nan, n)
    if abs(r) == 1.0:
        return Correlation(r, 0.0, n)
    t = r * math.sqrt((n - 2) / (1.0 - r * r))
    return Correlation(r, float(2.0 * stats.t.sf(abs(t), n - 2)), n)


def b_samples(records) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(b, neighbor_count, goal_proximity) over agent-step records that carry a finite b."""
    b, counts, proximity = [], [], []
    for record in records:
        if isinstance(record, dict):
            record = MetricsRecord.from_dict(record)
        if record.kind is not RecordKind.AGENT_STEP:
            continue
        data = record.data
        if data.get("b") is None or data.get("goal_distance") is None:
            continue
        b.append(data["b"])
        counts.append(data["neighbor_count"])
        proximity.append(-data["goal_distance"])
    return np.asarray(b, dtype=np.float64), np.asarray(counts, dtype=np.float64), np.asarray(proximity, dtype=np.float64)


def b_diagnostics(records) -> dict:
    """
    Correlations of b with the neighbor count and with goal proximity (minus the goal distance).

    Args:
        records: MetricsRecord objects or their dictionaries; only agent steps with a b value count.

    Returns:
        dict: {"neighbor_count": Correlation dict, "goal_proximity": Correlation dict, "samples": n}.
    """
    b, counts, proximity = b_samples(records)
    if b.size < 2:
        logger.warning("Only %d agent-steps carry a radius; no correlation computed", b.size)
        empty = Correlation(0.0, math.nan, int(b.size), degenerate=True).to_dict()
        return {"neighbor_count": empty, "goal_proximity": dict(empty), "samples": int(b.size)}
    return {
        "neighbor_count": pearson(b, counts).to_dict(),
        "goal_proximity": pearson(b, proximity).to_dict(),
        "samples": int(b.size),
    }
