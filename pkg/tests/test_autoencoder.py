import numpy as np
import pytest
import torch

from setshape.autoencoder import (
    HierarchicalAutoencoder,
    LatentHierarchy,
    ModelConfig,
    flat_forward,
)
from setshape.errors import ConfigError
from setshape.nets import count_attention_pairs

TINY = ModelConfig(
    levels=((16, 8, 1), (8, 8, 1), (4, 8, 1)),
    attn_channels=16,
    heads=2,
    pe_channels=12,
)


def tiny_model(seed=0, config=TINY):
    torch.manual_seed(seed)
    return HierarchicalAutoencoder(config)


def cloud(n=48, seed=0, dtype=torch.float32):
    g = torch.Generator().manual_seed(seed)
    return torch.rand(1, n, 3, generator=g, dtype=dtype) * 2 - 1


# ----------------------------------------------------------------- config

def test_config_requires_decreasing_counts():
    with pytest.raises(ConfigError, match="strictly decrease"):
        ModelConfig(levels=((4, 8, 1), (8, 8, 1)), attn_channels=16)


def test_config_rejects_wide_latents():
    with pytest.raises(ConfigError, match="exceed"):
        ModelConfig(levels=((8, 32, 1),), attn_channels=16)


def test_config_default_heads():
    cfg = ModelConfig(levels=((8, 8, 1),), attn_channels=256)
    assert cfg.num_heads == 4
    cfg = ModelConfig(levels=((8, 8, 1),), attn_channels=32)
    assert cfg.num_heads == 1


def test_config_round_trips_through_dict():
    cfg = ModelConfig(levels=((32, 8, 2), (8, 16, 3)), attn_channels=48, heads=3)
    assert ModelConfig.from_dict(cfg.to_dict()) == cfg


# ----------------------------------------------------------------- encoding

def test_encode_three_level_latent_shapes():
    # three levels of 512x8, 128x16, 32x32 latents (fine -> coarse)
    cfg = ModelConfig(
        levels=((512, 8, 1), (128, 16, 1), (32, 32, 1)),
        attn_channels=48,
        heads=2,
    )
    model = HierarchicalAutoencoder(cfg)
    pts = cloud(1024)
    with torch.no_grad():
        enc = model.encode(pts)
    shapes = [tuple(z.shape) for z in enc.hierarchy]
    assert shapes == [(1, 512, 8), (1, 128, 16), (1, 32, 32)]


def test_encode_all_levels_standardized():
    model = tiny_model()
    with torch.no_grad():
        enc = model.encode(cloud())
    for max_mean, max_var_err in enc.hierarchy.standardization_stats():
        assert max_mean < 1e-5
        assert max_var_err < 1e-4


def test_encode_rejects_short_clouds():
    model = tiny_model()
    with pytest.raises(ConfigError, match="FPS chain"):
        model.encode(torch.rand(1, 8, 3))


def test_anchor_chain_is_nested():
    model = tiny_model()
    pts = cloud()
    with torch.no_grad():
        enc = model.encode(pts)
    # each anchor set must be a subset of the previous one
    prev = {tuple(p.tolist()) for p in pts[0]}
    for anchors in enc.anchors:
        current = {tuple(p.tolist()) for p in anchors[0]}
        assert current <= prev
        prev = current


# ---------------------------------------------------------- L=1 equivalence

def test_single_level_matches_flat_pipeline_bitwise():
    cfg = ModelConfig(levels=((16, 8, 2),), attn_channels=16, heads=2, pe_channels=12)
    model = tiny_model(config=cfg)
    pts = cloud(40, seed=3)
    queries = cloud(7, seed=4)
    with torch.no_grad():
        ref = flat_forward(model, pts, queries)
        enc = model.encode(pts)
        feats = model.decode(enc.hierarchy)
        logits = model.query(queries, feats)
    assert torch.equal(enc.anchors[0], ref["anchors"])
    assert torch.equal(enc.features[0], ref["x"])
    assert torch.equal(enc.hierarchy[0], ref["z"])
    assert torch.equal(feats[0], ref["f"])
    assert torch.equal(logits, ref["logits"])


def test_flat_forward_requires_single_level():
    with pytest.raises(ConfigError):
        flat_forward(tiny_model(), cloud(), cloud(4))


# ------------------------------------------------------------- permutations

def test_latent_row_permutation_leaves_field_unchanged():
    model = tiny_model().double()
    pts = cloud(dtype=torch.float64)
    queries = cloud(9, seed=5, dtype=torch.float64)
    with torch.no_grad():
        enc = model.encode(pts)
        base = model.query(queries, model.decode(enc.hierarchy))
        for level in range(3):
            g = torch.Generator().manual_seed(level)
            perm = torch.randperm(enc.hierarchy[level].shape[1], generator=g)
            permuted = LatentHierarchy(
                [
                    z[:, perm] if i == level else z
                    for i, z in enumerate(enc.hierarchy)
                ]
            )
            out = model.query(queries, model.decode(permuted))
            assert (out - base).abs().max() < 1e-5


def test_input_cloud_permutation_leaves_field_unchanged():
    # permuting the input point set (with the FPS start moved along) changes
    # only KV row order everywhere, so the field must not move
    model = tiny_model().double()
    pts = cloud(48, seed=6, dtype=torch.float64)
    queries = cloud(9, seed=7, dtype=torch.float64)
    g = torch.Generator().manual_seed(0)
    perm = torch.randperm(48, generator=g)
    seed_pos = int((perm == 0).nonzero()[0, 0])
    with torch.no_grad():
        a = model(pts, queries)
        b = model(pts[:, perm], queries, fps_seed_index=seed_pos)
    assert (a - b).abs().max() < 1e-5


def test_query_reordering_reorders_logits():
    model = tiny_model()
    pts = cloud()
    queries = cloud(11, seed=8)
    perm = torch.randperm(11)
    with torch.no_grad():
        enc = model.encode(pts)
        feats = model.decode(enc.hierarchy)
        a = model.query(queries, feats)
        b = model.query(queries[:, perm], feats)
    assert torch.allclose(a[:, perm], b, atol=1e-6)


# ------------------------------------------------------------- decode costs

def test_decode_pair_interaction_budget():
    # published-size hierarchy at a narrow width: the SA pair count depends
    # only on latent counts and layer depths
    cfg = ModelConfig(
        levels=((2048, 8, 8), (512, 8, 8), (128, 8, 8)),
        attn_channels=16,
        heads=2,
    )
    model = HierarchicalAutoencoder(cfg)
    hierarchy = LatentHierarchy(
        [torch.randn(1, m, 8) for m in (2048, 512, 128)]
    )
    with torch.no_grad(), count_attention_pairs() as counts:
        model.decode(hierarchy, check_standardized=False)
    assert counts.sa_pairs == 8 * (128**2 + 512**2 + 2048**2) == 35_782_656
    assert counts.ca_pairs == 2048 * 512 + 512 * 128


def test_decode_rejects_wrong_depth():
    model = tiny_model()
    with pytest.raises(ConfigError, match="levels"):
        model.decode(LatentHierarchy([torch.randn(1, 16, 8)]))


# ----------------------------------------------------------------- gradients

def test_gradients_reach_every_parameter():
    model = tiny_model()
    pts = cloud()
    queries = cloud(6, seed=9)
    logits = model(pts, queries)
    logits.sum().backward()
    missing = [n for n, p in model.named_parameters() if p.grad is None]
    assert missing == []
    zero_grad = [
        n for n, p in model.named_parameters() if p.grad is not None and p.grad.abs().sum() == 0
    ]
    assert zero_grad == []
