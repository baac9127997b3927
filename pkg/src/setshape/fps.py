"""Greedy farthest point sampling."""

from __future__ import annotations

import torch


def fps(points: torch.Tensor, target: int, seed_index: int = 0) -> torch.Tensor:
    """Select `target` indices by greedy farthest-point sampling.

    points: (N, 3) or (B, N, 3).  Selection starts at seed_index and each
    step adds the point farthest from the selected set.  Returns indices in
    selection order, shape (target,) or (B, target).  Deterministic; distance
    ties resolve to the lowest index.
    """
    squeeze = points.dim() == 2
    if squeeze:
        points = points.unsqueeze(0)
    B, N, _ = points.shape
    if not (1 <= target <= N):
        raise ValueError(f"target {target} outside [1, {N}]")
    if not (0 <= seed_index < N):
        raise ValueError(f"seed_index {seed_index} outside [0, {N})")

    idx = torch.empty(B, target, dtype=torch.long, device=points.device)
    idx[:, 0] = seed_index
    batch = torch.arange(B, device=points.device)
    dist = ((points - points[:, seed_index].unsqueeze(1)) ** 2).sum(-1)  # (B, N)
    for k in range(1, target):
        nxt = dist.argmax(dim=1)
        idx[:, k] = nxt
        d_new = ((points - points[batch, nxt].unsqueeze(1)) ** 2).sum(-1)
        dist = torch.minimum(dist, d_new)
    return idx[0] if squeeze else idx


def gather_points(points: torch.Tensor, idx: torch.Tensor) -> torch.Tensor:
    """points: (B, N, C), idx: (B, M) -> (B, M, C)  (or unbatched)."""
    if points.dim() == 2:
        return points[idx]
    B = points.shape[0]
    batch = torch.arange(B, device=points.device).unsqueeze(1)
    return points[batch, idx]
