"""Hierarchical set-latent occupancy autoencoder.

A point cloud is downsampled through a chain of farthest-point-sampled
anchor sets (level 1 = finest / most latents, level L = coarsest / fewest).
Each level compresses the previous level with cross attention, then squeezes
features through a standardized bottleneck.  Decoding runs coarse to fine,
upsampling with cross attention, and the occupancy of a 3D point is read out
by cross-attending the point against every level's features and
concatenating.

With a single level this reduces exactly to the flat set-latent baseline
(see flat_forward).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import torch
import torch.nn as nn

from .errors import ConfigError
from .fps import fps, gather_points
from .nets import (
    AttentionBlock,
    FeatureToLatent,
    LatentToFeature,
    PointEmbed,
    SelfAttentionStack,
)


@dataclass(frozen=True)
class LevelConfig:
    """One hierarchy level. Levels are listed fine -> coarse."""

    latent_count: int
    latent_channels: int
    sa_layers: int = 2


@dataclass(frozen=True)
class ModelConfig:
    levels: tuple  # tuple[LevelConfig, ...], fine -> coarse
    attn_channels: int = 128
    heads: int = 0  # 0 -> attn_channels // 64, at least 1
    mlp_ratio: int = 4
    pe_channels: int = 0  # 0 -> largest multiple of 6 <= attn_channels
    pe_base: float = 2.0
    pe_scale: float = 1.0
    standardize_eps: float = 1e-6

    def __post_init__(self):
        levels = tuple(
            lv if isinstance(lv, LevelConfig) else LevelConfig(*lv) for lv in self.levels
        )
        object.__setattr__(self, "levels", levels)
        if not levels:
            raise ConfigError("need at least one level")
        counts = [lv.latent_count for lv in levels]
        if any(c <= 0 for c in counts):
            raise ConfigError("latent counts must be positive")
        if any(a <= b for a, b in zip(counts, counts[1:])):
            raise ConfigError(
                f"latent counts must strictly decrease fine -> coarse, got {counts}"
            )
        for lv in levels:
            if lv.latent_channels > self.attn_channels:
                raise ConfigError(
                    f"latent channels {lv.latent_channels} exceed attention width"
                )
            if lv.sa_layers < 1:
                raise ConfigError("each level needs at least one self-attention layer")

    @property
    def num_levels(self):
        return len(self.levels)

    @property
    def num_heads(self):
        return self.heads if self.heads > 0 else max(1, self.attn_channels // 64)

    def downsample_ratios(self, input_points: int):
        """Count ratio of each level relative to its parent set."""
        prev = input_points
        out = []
        for lv in self.levels:
            out.append(lv.latent_count / prev)
            prev = lv.latent_count
        return out

    def to_dict(self):
        return {
            "levels": [
                [lv.latent_count, lv.latent_channels, lv.sa_layers] for lv in self.levels
            ],
            "attn_channels": self.attn_channels,
            "heads": self.heads,
            "mlp_ratio": self.mlp_ratio,
            "pe_channels": self.pe_channels,
            "pe_base": self.pe_base,
            "pe_scale": self.pe_scale,
            "standardize_eps": self.standardize_eps,
        }

    @staticmethod
    def from_dict(d):
        d = dict(d)
        d["levels"] = tuple(LevelConfig(*lv) for lv in d["levels"])
        return ModelConfig(**d)


class LatentHierarchy:
    """The L standardized latent sets, fine -> coarse. levels[i]: (B, M_i, D_i)."""

    def __init__(self, levels):
        self.levels = list(levels)

    def __len__(self):
        return len(self.levels)

    def __getitem__(self, i):
        return self.levels[i]

    def __iter__(self):
        return iter(self.levels)

    def map(self, fn):
        return LatentHierarchy([fn(z) for z in self.levels])

    def detach(self):
        return self.map(lambda z: z.detach())

    def standardization_stats(self):
        """Per-level (max |mean|, max |var - 1|) over all vectors."""
        stats = []
        for z in self.levels:
            mean = z.mean(dim=-1)
            var = z.var(dim=-1, unbiased=False)
            stats.append((mean.abs().max().item(), (var - 1.0).abs().max().item()))
        return stats


@dataclass
class EncodeResult:
    hierarchy: LatentHierarchy
    anchors: list = field(default_factory=list)    # P_i, fine -> coarse
    features: list = field(default_factory=list)   # X_i, fine -> coarse


class HierarchicalAutoencoder(nn.Module):
    def __init__(self, config: ModelConfig):
        super().__init__()
        self.config = config
        C = config.attn_channels
        heads = config.num_heads
        L = config.num_levels

        self.point_embed = PointEmbed(
            C,
            pe_channels=config.pe_channels or None,
            base=config.pe_base,
            scale=config.pe_scale,
        )
        self.encoder_ca = nn.ModuleList(
            AttentionBlock(C, heads, config.mlp_ratio, cross=True) for _ in range(L)
        )
        self.ftol = nn.ModuleList(
            FeatureToLatent(C, lv.latent_channels, eps=config.standardize_eps)
            for lv in config.levels
        )
        self.ltof = nn.ModuleList(
            LatentToFeature(lv.latent_channels, C) for lv in config.levels
        )
        self.decoder_sa = nn.ModuleList(
            SelfAttentionStack(C, heads, lv.sa_layers, config.mlp_ratio)
            for lv in config.levels
        )
        # upsample CA for every level except the coarsest
        self.decoder_ca = nn.ModuleList(
            AttentionBlock(C, heads, config.mlp_ratio, cross=True) for _ in range(L - 1)
        )
        self.query_ca = nn.ModuleList(
            AttentionBlock(C, heads, config.mlp_ratio, cross=True) for _ in range(L)
        )
        self.query_head = nn.Linear(L * C, 1)

    # ---------------------------------------------------------------- encode

    def encode(self, points: torch.Tensor, fps_seed_index: int = 0) -> EncodeResult:
        """points: (B, N, 3) or (N, 3) -> standardized latent hierarchy."""
        if points.dim() == 2:
            points = points.unsqueeze(0)
        B, N, _ = points.shape
        finest = self.config.levels[0].latent_count
        if N < finest:
            raise ConfigError(
                f"{N} input points cannot seed an FPS chain starting at {finest}"
            )

        anchors = []
        prev_points = points
        for i, lv in enumerate(self.config.levels):
            # the seed only applies to the raw cloud; deeper levels sample
            # from anchor sets that are already in deterministic selection order
            seed = fps_seed_index if i == 0 else 0
            idx = fps(prev_points, lv.latent_count, seed_index=seed)
            prev_points = gather_points(prev_points, idx)
            anchors.append(prev_points)

        features = []
        latents = []
        kv = self.point_embed(points)
        for i, lv in enumerate(self.config.levels):
            q = self.point_embed(anchors[i])
            x = self.encoder_ca[i](q, kv)  # (B, M_i, C)
            features.append(x)
            latents.append(self.ftol[i](x))
            kv = x
        return EncodeResult(LatentHierarchy(latents), anchors, features)

    # ---------------------------------------------------------------- decode

    def decode(self, hierarchy: LatentHierarchy, check_standardized: bool = True):
        """Latents -> per-level feature sets F_i (fine -> coarse list)."""
        L = self.config.num_levels
        if len(hierarchy) != L:
            raise ConfigError(f"hierarchy has {len(hierarchy)} levels, model expects {L}")
        expanded = [
            self.ltof[i](hierarchy[i], check_standardized=check_standardized)
            for i in range(L)
        ]
        feats = [None] * L
        feats[L - 1] = self.decoder_sa[L - 1](expanded[L - 1])
        for i in range(L - 2, -1, -1):
            up = self.decoder_ca[i](expanded[i], feats[i + 1])
            feats[i] = self.decoder_sa[i](up)
        return feats

    # ----------------------------------------------------------------- query

    def query(self, points: torch.Tensor, features) -> torch.Tensor:
        """Occupancy logits of query points. points: (B, K, 3) -> (B, K)."""
        if points.dim() == 2:
            points = points.unsqueeze(0)
        q = self.point_embed(points)
        parts = [self.query_ca[i](q, features[i]) for i in range(len(features))]
        return self.query_head(torch.cat(parts, dim=-1)).squeeze(-1)

    def forward(self, points, queries, fps_seed_index: int = 0):
        enc = self.encode(points, fps_seed_index=fps_seed_index)
        feats = self.decode(enc.hierarchy)
        return self.query(queries, feats)

    @torch.no_grad()
    def occupancy_probability(self, points, features):
        return torch.sigmoid(self.query(points, features))


def flat_forward(model: HierarchicalAutoencoder, points, queries, fps_seed_index: int = 0):
    """Single-level reference pipeline (the flat set-latent baseline).

    Composes the same modules in the explicit flat order: FPS -> CA ->
    FtoL -> LtoF -> SAs -> per-point CA -> FC.  Only valid for L=1 models;
    used to check that the hierarchical code path degenerates to it exactly.
    Returns a dict of every intermediate tensor.
    """
    if model.config.num_levels != 1:
        raise ConfigError("flat_forward requires a single-level model")
    if points.dim() == 2:
        points = points.unsqueeze(0)
    if queries.dim() == 2:
        queries = queries.unsqueeze(0)
    idx = fps(points, model.config.levels[0].latent_count, seed_index=fps_seed_index)
    anchors = gather_points(points, idx)
    kv = model.point_embed(points)
    q = model.point_embed(anchors)
    x = model.encoder_ca[0](q, kv)
    z = model.ftol[0](x)
    x_up = model.ltof[0](z)
    f = model.decoder_sa[0](x_up)
    q_pts = model.point_embed(queries)
    attended = model.query_ca[0](q_pts, f)
    logits = model.query_head(attended).squeeze(-1)
    return {
        "anchors": anchors,
        "x": x,
        "z": z,
        "x_up": x_up,
        "f": f,
        "logits": logits,
    }
