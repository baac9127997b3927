"""Occupancy training loss: pool-weighted binary cross entropy.

Volume queries carry full weight, near-surface queries 0.1.  Both terms are
per-pool means of the numerically stable logit BCE.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn.functional as F

from .queries import NEAR_WEIGHT, POOL_NEAR, POOL_VOL


@dataclass
class LossBreakdown:
    vol_bce: float
    near_bce: float
    total: float
    positives_fraction: float
    note: str = ""

    def __repr__(self):
        return (
            f"LossBreakdown(total={self.total:.4f}, vol={self.vol_bce:.4f}, "
            f"near={self.near_bce:.4f}, pos={self.positives_fraction:.3f})"
        )


def bce_occupancy_loss(logits, labels, pool_tags):
    """Return (loss tensor for backward, LossBreakdown).

    logits/labels/pool_tags are flat or batched tensors of equal shape;
    labels boolean or {0,1}, pool_tags POOL_VOL / POOL_NEAR.  An empty pool
    contributes 0 with a diagnostic note.
    """
    logits = logits.reshape(-1)
    labels = labels.reshape(-1).to(logits.dtype)
    pool_tags = pool_tags.reshape(-1)
    if not (logits.shape == labels.shape == pool_tags.shape):
        raise ValueError("logits, labels and pool_tags must have equal lengths")

    per_point = F.binary_cross_entropy_with_logits(logits, labels, reduction="none")
    vol_mask = pool_tags == POOL_VOL
    near_mask = pool_tags == POOL_NEAR

    notes = []
    if vol_mask.any():
        vol = per_point[vol_mask].mean()
    else:
        vol = logits.new_zeros(())
        notes.append("empty vol pool")
    if near_mask.any():
        near = per_point[near_mask].mean()
    else:
        near = logits.new_zeros(())
        notes.append("empty near pool")

    total = vol + NEAR_WEIGHT * near
    vol_f, near_f = float(vol.detach()), float(near.detach())
    breakdown = LossBreakdown(
        vol_bce=vol_f,
        near_bce=near_f,
        total=vol_f + NEAR_WEIGHT * near_f,  # recorded with the same accumulation
        positives_fraction=float(labels.mean().detach()),
        note="; ".join(notes),
    )
    return total, breakdown
