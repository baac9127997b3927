"""Point-set reconstruction metrics: Chamfer distance and F-score.

Chamfer here is the symmetric mean of (non-squared) L2 nearest-neighbor
distances, reported x100.  F-score is the harmonic mean of precision and
recall at threshold tau, also x100.  Both come in a KD-tree-accelerated form
and a brute-force O(n^2) form used as the oracle for the accelerated one.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

DEFAULT_FSCORE_TAU = 0.02
DEFAULT_METRIC_SAMPLES = 100_000


@dataclass
class MetricReport:
    chamfer_x100: float
    fscore_x100: float
    samples_a: int
    samples_b: int
    tau: float

    def to_dict(self):
        return {
            "chamfer_x100": self.chamfer_x100,
            "fscore_x100": self.fscore_x100,
            "samples_a": self.samples_a,
            "samples_b": self.samples_b,
            "tau": self.tau,
        }


def _check(a, b):
    a = np.asarray(a, dtype=np.float64).reshape(-1, 3)
    b = np.asarray(b, dtype=np.float64).reshape(-1, 3)
    if len(a) == 0 or len(b) == 0:
        raise ValueError("point sets must be nonempty")
    return a, b


def nearest_distances(a, b):
    """For each point in a, the distance to its nearest neighbor in b."""
    d, _ = cKDTree(b).query(a, k=1)
    return d


def nearest_distances_bruteforce(a, b):
    """O(n^2) oracle for nearest_distances."""
    diff = a[:, None, :] - b[None, :, :]
    return np.sqrt((diff**2).sum(-1)).min(axis=1)


def chamfer(a, b, x100: bool = True) -> float:
    """Symmetric mean nearest-neighbor L2 distance (x100 by default)."""
    a, b = _check(a, b)
    value = 0.5 * nearest_distances(a, b).mean() + 0.5 * nearest_distances(b, a).mean()
    return float(value * (100.0 if x100 else 1.0))


def chamfer_bruteforce(a, b, x100: bool = True) -> float:
    a, b = _check(a, b)
    value = (
        0.5 * nearest_distances_bruteforce(a, b).mean()
        + 0.5 * nearest_distances_bruteforce(b, a).mean()
    )
    return float(value * (100.0 if x100 else 1.0))


def fscore(a, b, tau: float = DEFAULT_FSCORE_TAU) -> float:
    """Harmonic mean of precision and recall at threshold tau, x100."""
    if tau <= 0:
        raise ValueError("tau must be positive")
    a, b = _check(a, b)
    precision = float((nearest_distances(a, b) <= tau).mean())
    recall = float((nearest_distances(b, a) <= tau).mean())
    if precision + recall == 0.0:
        return 0.0
    return 100.0 * 2.0 * precision * recall / (precision + recall)


def metric_report(a, b, tau: float = DEFAULT_FSCORE_TAU) -> MetricReport:
    a, b = _check(a, b)
    return MetricReport(
        chamfer_x100=chamfer(a, b),
        fscore_x100=fscore(a, b, tau),
        samples_a=len(a),
        samples_b=len(b),
        tau=tau,
    )
