"""Attention building blocks for set-latent models.

All blocks are pre-norm residual transformers operating on (B, M, C)
tensors.  Cross attention is permutation-invariant in its key/value rows and
permutation-equivariant in its query rows; self attention is
permutation-equivariant.  An opt-in counter tallies attention pair
interactions (one unit per query-key pair per layer, not multiplied by
heads) for cost accounting.
"""

from __future__ import annotations

import math
from contextlib import contextmanager
from dataclasses import dataclass

import torch
import torch.nn as nn

from .errors import ConfigError


@dataclass
class PairCounts:
    sa_pairs: int = 0
    ca_pairs: int = 0

    @property
    def total(self):
        return self.sa_pairs + self.ca_pairs


_ACTIVE_COUNTER: list = []


@contextmanager
def count_attention_pairs():
    """Context manager yielding a PairCounts that attention blocks update."""
    counter = PairCounts()
    _ACTIVE_COUNTER.append(counter)
    try:
        yield counter
    finally:
        _ACTIVE_COUNTER.pop()


def _record_pairs(kind: str, n: int):
    for counter in _ACTIVE_COUNTER:
        if kind == "sa":
            counter.sa_pairs += n
        else:
            counter.ca_pairs += n


def positional_embed(points: torch.Tensor, channels: int,
                     base: float = 2.0, scale: float = 1.0) -> torch.Tensor:
    """Sinusoidal multi-frequency embedding of 3D points.

    points: (..., 3) -> (..., channels).  channels must be divisible by 6:
    per axis, channels/6 geometric frequencies scale * base^k, each
    contributing a sin and a cos.  Deterministic, no parameters.
    """
    if channels % 6 != 0:
        raise ConfigError(f"embedding channels {channels} not divisible by 6")
    n_freq = channels // 6
    freqs = scale * torch.pow(
        torch.as_tensor(base, dtype=points.dtype, device=points.device),
        torch.arange(n_freq, dtype=points.dtype, device=points.device),
    )
    ang = points.unsqueeze(-1) * freqs  # (..., 3, n_freq)
    emb = torch.cat([ang.sin(), ang.cos()], dim=-1)  # (..., 3, 2*n_freq)
    return emb.flatten(-2)


class PointEmbed(nn.Module):
    """Sinusoidal embedding followed by a learnable lift to the model width."""

    def __init__(self, channels: int, pe_channels: int | None = None,
                 base: float = 2.0, scale: float = 1.0):
        super().__init__()
        if pe_channels is None:
            pe_channels = max(6, 6 * (channels // 6))
        if pe_channels % 6 != 0:
            raise ConfigError(f"pe_channels {pe_channels} not divisible by 6")
        self.pe_channels = pe_channels
        self.base = base
        self.scale = scale
        self.proj = nn.Linear(pe_channels, channels)

    def forward(self, points):  # (B, N, 3) -> (B, N, C)
        return self.proj(positional_embed(points, self.pe_channels, self.base, self.scale))


def multihead_attention(q, k, v, heads: int, kind: str = "ca"):
    """Scaled dot-product attention over sets. q: (B, Mq, C), k/v: (B, Mk, C)."""
    B, Mq, C = q.shape
    Mk = k.shape[1]
    if C % heads != 0:
        raise ConfigError(f"width {C} not divisible by heads {heads}")
    d = C // heads

    def split(x):
        return x.view(B, -1, heads, d).transpose(1, 2)  # (B, h, M, d)

    qh, kh, vh = split(q), split(k), split(v)
    scores = qh @ kh.transpose(-1, -2) / math.sqrt(d)  # (B, h, Mq, Mk)
    attn = scores.softmax(dim=-1)
    out = attn @ vh  # (B, h, Mq, d)
    _record_pairs(kind, B * Mq * Mk)
    return out.transpose(1, 2).reshape(B, Mq, C)


class AttentionBlock(nn.Module):
    """Pre-norm residual attention + feed-forward.

    forward(x) is self attention; forward(x, context) cross-attends from the
    x stream into the context rows.
    """

    def __init__(self, channels: int, heads: int, mlp_ratio: int = 4, cross: bool = False):
        super().__init__()
        self.heads = heads
        self.cross = cross
        self.norm_q = nn.LayerNorm(channels)
        self.norm_kv = nn.LayerNorm(channels) if cross else None
        self.to_q = nn.Linear(channels, channels)
        self.to_k = nn.Linear(channels, channels)
        self.to_v = nn.Linear(channels, channels)
        self.to_out = nn.Linear(channels, channels)
        self.norm_mlp = nn.LayerNorm(channels)
        self.mlp = nn.Sequential(
            nn.Linear(channels, mlp_ratio * channels),
            nn.GELU(),
            nn.Linear(mlp_ratio * channels, channels),
        )

    def forward(self, x, context=None):
        if self.cross:
            if context is None:
                raise ValueError("cross block needs a context")
            if context.shape[-1] != x.shape[-1]:
                raise ValueError(
                    f"width mismatch: query {x.shape[-1]} vs kv {context.shape[-1]}"
                )
            kv = self.norm_kv(context)
            kind = "ca"
        else:
            if context is not None:
                raise ValueError("self block takes no context")
            kv = self.norm_q(x)
            kind = "sa"
        qn = self.norm_q(x)
        attn = multihead_attention(
            self.to_q(qn), self.to_k(kv), self.to_v(kv), self.heads, kind=kind
        )
        x = x + self.to_out(attn)
        x = x + self.mlp(self.norm_mlp(x))
        return x


class SelfAttentionStack(nn.Module):
    def __init__(self, channels: int, heads: int, layers: int, mlp_ratio: int = 4):
        super().__init__()
        if layers < 1:
            raise ConfigError("need at least one self-attention layer")
        self.blocks = nn.ModuleList(
            AttentionBlock(channels, heads, mlp_ratio) for _ in range(layers)
        )

    def forward(self, x):
        for block in self.blocks:
            x = block(x)
        return x


class FeatureToLatent(nn.Module):
    """Down-projection followed by per-vector standardization over channels.

    The standardization (x - mean) / sqrt(var + eps) uses the population
    variance with eps inside the square root; there is no learnable affine
    here, which is what regularizes the latent space.
    """

    def __init__(self, channels: int, latent_channels: int, eps: float = 1e-6):
        super().__init__()
        if latent_channels > channels:
            raise ConfigError(
                f"latent channels {latent_channels} exceed feature width {channels}"
            )
        self.proj = nn.Linear(channels, latent_channels)
        # the normalization makes the latents invariant to this scale; a large
        # gain keeps the pre-standardization variance far above eps so the
        # output variance stays within 1e-4 of 1 even for weak feature rows
        nn.init.orthogonal_(self.proj.weight, gain=3.0)
        self.norm = nn.LayerNorm(latent_channels, elementwise_affine=False, eps=eps)

    def forward(self, x):  # (B, M, C) -> (B, M, D)
        return self.norm(self.proj(x))


class LatentToFeature(nn.Module):
    """Learnable scale-and-shift, then up-projection back to feature width."""

    # warn thresholds are set-aggregate so approximately standardized inputs
    # (diffusion samples, Gaussian replacements) pass silently
    WARN_MEAN = 0.25
    WARN_VAR = 0.5

    def __init__(self, latent_channels: int, channels: int):
        super().__init__()
        self.gamma = nn.Parameter(torch.ones(latent_channels))
        self.beta = nn.Parameter(torch.zeros(latent_channels))
        self.proj = nn.Linear(latent_channels, channels)

    def forward(self, z, check_standardized: bool = True):  # (B, M, D) -> (B, M, C)
        if check_standardized and not torch.jit.is_scripting():
            with torch.no_grad():
                mean = z.mean()
                var = z.var(dim=-1, unbiased=False).mean()
            if abs(mean.item()) > self.WARN_MEAN or abs(var.item() - 1.0) > self.WARN_VAR:
                import warnings

                warnings.warn(
                    f"latents not standardized (mean {mean.item():.3f}, var {var.item():.3f})",
                    stacklevel=2,
                )
        return self.proj(z * self.gamma + self.beta)
