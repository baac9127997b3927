"""Exact attention-cost accounting.

Self attention over M vectors touches M^2 query-key pairs per layer, so the
decoder's self-attention stacks dominate training cost for large latent
sets.  The counts here are exact pair-interaction tallies per forward pass
of a batch element (one unit per query-key pair per layer, not multiplied by
head count) plus exact parameter counts; they are a FLOP-level statement,
not a wall-clock measurement.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch

from .autoencoder import HierarchicalAutoencoder, ModelConfig


@dataclass
class CostBreakdown:
    sa_pairs: int
    encoder_ca_pairs: int
    decoder_ca_pairs: int
    query_ca_pairs: int
    parameters: int

    @property
    def ca_pairs(self):
        return self.encoder_ca_pairs + self.decoder_ca_pairs + self.query_ca_pairs

    def to_dict(self):
        return {
            "sa_pairs": self.sa_pairs,
            "encoder_ca_pairs": self.encoder_ca_pairs,
            "decoder_ca_pairs": self.decoder_ca_pairs,
            "query_ca_pairs": self.query_ca_pairs,
            "ca_pairs": self.ca_pairs,
            "parameters": self.parameters,
        }


def parameter_count(config: ModelConfig) -> int:
    """Exact trainable-parameter count (instantiated on the meta device)."""
    with torch.device("meta"):
        model = HierarchicalAutoencoder(config)
    return sum(p.numel() for p in model.parameters())


def attention_pairs(config: ModelConfig, input_points: int, query_points: int) -> CostBreakdown:
    counts = [lv.latent_count for lv in config.levels]
    sa = sum(lv.sa_layers * lv.latent_count**2 for lv in config.levels)
    enc = counts[0] * input_points + sum(
        counts[i] * counts[i - 1] for i in range(1, len(counts))
    )
    dec = sum(counts[i] * counts[i + 1] for i in range(len(counts) - 1))
    qry = query_points * sum(counts)
    return CostBreakdown(
        sa_pairs=sa,
        encoder_ca_pairs=enc,
        decoder_ca_pairs=dec,
        query_ca_pairs=qry,
        parameters=parameter_count(config),
    )


def attention_cost_account(
    config_a: ModelConfig,
    config_b: ModelConfig,
    input_points: int = 2048,
    query_points: int = 1024,
) -> dict:
    """Compare two configs; ratios are b relative to a."""
    a = attention_pairs(config_a, input_points, query_points)
    b = attention_pairs(config_b, input_points, query_points)
    return {
        "input_points": input_points,
        "query_points": query_points,
        "a": a.to_dict(),
        "b": b.to_dict(),
        "sa_pair_ratio": b.sa_pairs / a.sa_pairs,
        "ca_pair_ratio": b.ca_pairs / a.ca_pairs if a.ca_pairs else float("nan"),
        "parameter_ratio": b.parameters / a.parameters,
    }


def render_cost_report(report: dict) -> str:
    rows = [
        ("self-attention pairs", "sa_pairs"),
        ("encoder CA pairs", "encoder_ca_pairs"),
        ("decoder CA pairs", "decoder_ca_pairs"),
        ("query CA pairs", "query_ca_pairs"),
        ("total CA pairs", "ca_pairs"),
        ("parameters", "parameters"),
    ]
    lines = [
        f"{'quantity':<24}{'config A':>16}{'config B':>16}",
        "-" * 56,
    ]
    for label, key in rows:
        lines.append(f"{label:<24}{report['a'][key]:>16,}{report['b'][key]:>16,}")
    lines.append("-" * 56)
    lines.append(f"SA pair ratio (B/A): {report['sa_pair_ratio']:.4f}")
    lines.append(f"CA pair ratio (B/A): {report['ca_pair_ratio']:.4f}")
    lines.append(f"parameter ratio (B/A): {report['parameter_ratio']:.4f}")
    return "\n".join(lines)


# reference configurations for the flat-vs-hierarchical comparison at the
# published sizes (2k latents, 24 flat layers vs 8/8/8)
def reference_flat_config() -> ModelConfig:
    return ModelConfig(levels=((2048, 64, 24),), attn_channels=1024, heads=16)


def reference_hierarchical_config() -> ModelConfig:
    return ModelConfig(
        levels=((2048, 16, 8), (512, 32, 8), (128, 64, 8)),
        attn_channels=1024,
        heads=16,
    )
