"""Inside/outside labeling of query points against watertight meshes.

Ray-parity test: a query is inside iff a ray from it crosses the surface an
odd number of times.  Rays that graze an edge/vertex or run parallel to a
triangle are unreliable; such queries are re-cast along fallback directions.
An optional verify mode casts all three directions and majority-votes, which
detects inconsistent parity (the signature of a non-watertight mesh).
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .geometry import TriangleMesh

# first direction is +x; fallbacks are irrational-ish to avoid axis-aligned grazing
RAY_DIRECTIONS = np.array(
    [
        [1.0, 0.0, 0.0],
        [0.358568, 0.861198, 0.360203],
        [-0.237964, 0.416869, 0.877303],
    ]
)
_TIE_EPS = 1e-9


@dataclass
class OccupancyLabels:
    inside: np.ndarray      # (K,) bool
    unreliable: np.ndarray  # (K,) bool

    def __iter__(self):
        return iter((self.inside, self.unreliable))


def _ray_parity(corners, queries, direction, chunk_elems=4_000_000):
    """Crossing parity per query along one direction.

    Returns (parity, tainted): tainted marks queries with a near-degenerate
    intersection (grazing hit, parallel triangle, query on the surface) whose
    parity cannot be trusted.

    Moeller-Trumbore over all query x triangle pairs, chunked over triangles.
    """
    K = len(queries)
    T = len(corners)
    crossings = np.zeros(K, dtype=np.int64)
    tainted = np.zeros(K, dtype=bool)
    d = direction.astype(np.float64)

    tri_chunk = max(1, int(chunk_elems // max(K, 1)))
    for start in range(0, T, tri_chunk):
        c = corners[start : start + tri_chunk]  # (t, 3, 3)
        e1 = c[:, 1] - c[:, 0]  # (t, 3)
        e2 = c[:, 2] - c[:, 0]
        pvec = np.cross(d, e2)  # (t, 3)
        det = np.einsum("tj,tj->t", e1, pvec)  # (t,)
        near_parallel = np.abs(det) < _TIE_EPS
        inv_det = 1.0 / np.where(near_parallel, 1.0, det)

        tvec = queries[:, None, :] - c[None, :, 0, :]  # (K, t, 3)
        u = np.einsum("ktj,tj->kt", tvec, pvec) * inv_det
        qvec = np.cross(tvec, e1[None, :, :])  # (K, t, 3)
        v = np.einsum("ktj,j->kt", qvec, d) * inv_det
        w = 1.0 - u - v
        t_hit = np.einsum("ktj,tj->kt", qvec, e2) * inv_det

        interior = (u > _TIE_EPS) & (v > _TIE_EPS) & (w > _TIE_EPS) & (t_hit > _TIE_EPS)
        grazing = (
            (np.abs(u) <= _TIE_EPS)
            | (np.abs(v) <= _TIE_EPS)
            | (np.abs(w) <= _TIE_EPS)
            | (np.abs(t_hit) <= _TIE_EPS)
        )
        # a grazing value only taints if the hit is plausibly on the triangle
        plausible = (u > -1e-6) & (v > -1e-6) & (w > -1e-6) & (t_hit > -1e-6)
        crossings += (interior & ~near_parallel[None, :]).sum(axis=1)
        tainted |= ((grazing & plausible) | (near_parallel[None, :] & plausible)).any(axis=1)

    return (crossings % 2).astype(bool), tainted


def occupancy_label_detailed(mesh: TriangleMesh, queries, verify: bool = False) -> OccupancyLabels:
    """Labels plus an unreliable mask.

    Default path: parity along +x, re-casting degenerate queries along the
    fallback directions; unreliable means no direction produced a clean
    parity.  With verify=True every query is tested along all three
    directions and majority-voted; disagreement among clean parities also
    marks the query unreliable.
    """
    queries = np.asarray(queries, dtype=np.float64).reshape(-1, 3)
    K = len(queries)
    corners = mesh.triangle_corners().astype(np.float64)

    if verify:
        parities = np.zeros((3, K), dtype=bool)
        clean = np.zeros((3, K), dtype=bool)
        for i, direction in enumerate(RAY_DIRECTIONS):
            p, tainted = _ray_parity(corners, queries, direction)
            parities[i] = p
            clean[i] = ~tainted
        n_clean = clean.sum(axis=0)
        votes = (parities & clean).sum(axis=0)
        inside = votes * 2 > n_clean
        unanimous = (votes == 0) | (votes == n_clean)
        unreliable = (n_clean == 0) | ~unanimous
        return OccupancyLabels(inside=inside, unreliable=unreliable)

    inside = np.zeros(K, dtype=bool)
    resolved = np.zeros(K, dtype=bool)
    pending = np.arange(K)
    for direction in RAY_DIRECTIONS:
        if len(pending) == 0:
            break
        parity, tainted = _ray_parity(corners, queries[pending], direction)
        ok = ~tainted
        inside[pending[ok]] = parity[ok]
        resolved[pending[ok]] = True
        pending = pending[tainted]
    return OccupancyLabels(inside=inside, unreliable=~resolved)


def occupancy_label(mesh: TriangleMesh, queries, verify: bool = False) -> np.ndarray:
    """Boolean inside labels; warns when any label is unreliable."""
    result = occupancy_label_detailed(mesh, queries, verify=verify)
    n_bad = int(result.unreliable.sum())
    if n_bad:
        warnings.warn(
            f"{n_bad} of {len(result.inside)} occupancy labels unreliable "
            "(mesh may not be watertight)",
            stacklevel=2,
        )
    return result.inside
