"""Labeled query-point sampling for occupancy training.

A training record holds a surface point cloud plus two labeled query pools:
volume queries drawn uniformly from the bounding sphere of radius sqrt(3)
(covers the whole [-1,1]^3 cube) and near-surface queries made by Gaussian
jitter of surface points at two scales (0.005 and 0.05).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .geometry import TriangleMesh, sample_surface_points
from .occupancy import occupancy_label_detailed

BOUNDING_RADIUS = math.sqrt(3.0)
NEAR_JITTER_SCALES = (0.005, 0.05)
NEAR_WEIGHT = 0.1

POOL_VOL = 0
POOL_NEAR = 1


@dataclass
class SampledShape:
    """One shape's training record. Coordinates are float32, labels bool."""

    surface_points: np.ndarray  # (N_s, 3)
    vol_queries: np.ndarray     # (N_v, 3)
    vol_labels: np.ndarray      # (N_v,)
    near_queries: np.ndarray    # (N_n, 3)
    near_labels: np.ndarray     # (N_n,)

    def __post_init__(self):
        self.surface_points = np.ascontiguousarray(self.surface_points, dtype=np.float32)
        self.vol_queries = np.ascontiguousarray(self.vol_queries, dtype=np.float32)
        self.near_queries = np.ascontiguousarray(self.near_queries, dtype=np.float32)
        self.vol_labels = np.ascontiguousarray(self.vol_labels, dtype=bool)
        self.near_labels = np.ascontiguousarray(self.near_labels, dtype=bool)
        if len(self.vol_queries) != len(self.vol_labels):
            raise ValueError("vol query/label length mismatch")
        if len(self.near_queries) != len(self.near_labels):
            raise ValueError("near query/label length mismatch")


def sample_volume_points(count: int, rng) -> np.ndarray:
    """Uniform samples in the ball of radius sqrt(3).

    Directions from normalized Gaussians, radius sqrt(3) * U^(1/3).
    """
    if count <= 0:
        raise ValueError("count must be positive")
    pts = rng.standard_normal((count, 3))
    pts = pts / np.linalg.norm(pts, axis=1)[:, None] * BOUNDING_RADIUS
    pts = pts * np.power(rng.random(count), 1.0 / 3.0)[:, None]
    return pts


def sample_near_points(surface_points: np.ndarray, rng) -> np.ndarray:
    """Gaussian-jittered surface points at both scales, concatenated (2N, 3)."""
    surface_points = np.asarray(surface_points, dtype=np.float64).reshape(-1, 3)
    if len(surface_points) == 0:
        raise ValueError("need at least one surface point")
    parts = [
        surface_points + rng.normal(scale=s, size=surface_points.shape)
        for s in NEAR_JITTER_SCALES
    ]
    return np.concatenate(parts)


@dataclass
class ShapeSamplingConfig:
    surface_count: int = 8192     # encoder input cloud
    volume_count: int = 250_000
    near_base_count: int = 125_000  # jittered at 2 scales -> 2x near queries
    verify_labels: bool = False


@dataclass
class SamplingReport:
    n_unreliable_vol: int = 0
    n_unreliable_near: int = 0

    @property
    def n_unreliable(self):
        return self.n_unreliable_vol + self.n_unreliable_near


def sample_shape(mesh: TriangleMesh, cfg: ShapeSamplingConfig, rng) -> tuple:
    """Build the full training record for one normalized mesh.

    Returns (SampledShape, SamplingReport).  The mesh must already be inside
    the unit sphere and watertight; unreliable labels are only counted, not
    fixed.
    """
    surface = sample_surface_points(mesh, cfg.surface_count, rng)
    vol = sample_volume_points(cfg.volume_count, rng)
    near_base = sample_surface_points(mesh, cfg.near_base_count, rng)
    near = sample_near_points(near_base, rng)

    vol_res = occupancy_label_detailed(mesh, vol, verify=cfg.verify_labels)
    near_res = occupancy_label_detailed(mesh, near, verify=cfg.verify_labels)
    shape = SampledShape(
        surface_points=surface,
        vol_queries=vol,
        vol_labels=vol_res.inside,
        near_queries=near,
        near_labels=near_res.inside,
    )
    report = SamplingReport(
        n_unreliable_vol=int(vol_res.unreliable.sum()),
        n_unreliable_near=int(near_res.unreliable.sum()),
    )
    return shape, report


@dataclass
class BalancedBatch:
    points: np.ndarray     # (B, 3) float32
    labels: np.ndarray     # (B,) bool
    pool_tags: np.ndarray  # (B,) int8, POOL_VOL or POOL_NEAR
    balanced: bool = True
    note: str = ""


def balanced_query_batch(shape: SampledShape, batch: int, rng) -> BalancedBatch:
    """Draw batch/2 positive and batch/2 negative queries from the pooled
    vol+near queries.

    When one sign is underpopulated the batch falls back to everything
    available on that side (topped up from the other) and reports it; it
    never silently returns an unbalanced batch as balanced.
    """
    if batch % 2 != 0:
        raise ValueError("batch must be even")
    points = np.concatenate([shape.vol_queries, shape.near_queries])
    labels = np.concatenate([shape.vol_labels, shape.near_labels])
    tags = np.concatenate(
        [
            np.full(len(shape.vol_queries), POOL_VOL, dtype=np.int8),
            np.full(len(shape.near_queries), POOL_NEAR, dtype=np.int8),
        ]
    )
    pos_idx = np.flatnonzero(labels)
    neg_idx = np.flatnonzero(~labels)
    half = batch // 2

    n_pos = min(half, len(pos_idx))
    n_neg = min(half, len(neg_idx))
    balanced = n_pos == half and n_neg == half
    note = ""
    if not balanced:
        short = "positives" if n_pos < half else "negatives"
        note = f"insufficient {short}: {n_pos} positive / {n_neg} negative available for batch {batch}"
        # top up from the majority side so the batch size is kept
        if n_pos < half:
            n_neg = min(batch - n_pos, len(neg_idx))
        else:
            n_pos = min(batch - n_neg, len(pos_idx))

    take_pos = rng.choice(pos_idx, size=n_pos, replace=False) if n_pos else np.empty(0, dtype=np.int64)
    take_neg = rng.choice(neg_idx, size=n_neg, replace=False) if n_neg else np.empty(0, dtype=np.int64)
    sel = np.concatenate([take_pos, take_neg])
    return BalancedBatch(
        points=points[sel],
        labels=labels[sel],
        pool_tags=tags[sel],
        balanced=balanced,
        note=note,
    )
