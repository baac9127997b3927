"""Mesh extraction from an occupancy field, and the latent noise-replacement
analysis.

The field convention everywhere is logits: occupancy probability is
sigmoid(logit) and the default iso-surface sits at probability 0.5, i.e.
logit 0.  Extraction runs on [-1, 1]^3.  No boundary padding is applied, so
a field that is inside at the domain boundary yields an open (or empty)
surface rather than a fake closed box; keep geometry inside the unit sphere
and this never triggers.
"""

from __future__ import annotations

import math
import warnings

import numpy as np
import torch
from skimage import measure

from .autoencoder import HierarchicalAutoencoder, LatentHierarchy
from .geometry import TriangleMesh


def grid_logits(field_fn, resolution: int, chunk: int = 16384) -> np.ndarray:
    """Evaluate field_fn (K,3)->(K,) logits on a (res+1)^3 grid over [-1,1]^3."""
    if resolution < 8:
        raise ValueError("resolution must be at least 8")
    n = resolution + 1
    axis = np.linspace(-1.0, 1.0, n)
    gx, gy, gz = np.meshgrid(axis, axis, axis, indexing="ij")
    pts = np.stack([gx, gy, gz], axis=-1).reshape(-1, 3).astype(np.float32)
    out = np.empty(len(pts), dtype=np.float32)
    for start in range(0, len(pts), chunk):
        out[start : start + chunk] = field_fn(pts[start : start + chunk])
    return out.reshape(n, n, n)


def marching_cubes(field_fn, resolution: int = 128, iso: float = 0.5) -> TriangleMesh:
    """Extract the iso-probability surface of a logit field as a triangle mesh.

    field_fn maps (K, 3) float32 points in [-1,1]^3 to (K,) logits.  Vertices
    are linearly interpolated along grid edges; an empty crossing set yields
    an empty mesh with a warning.
    """
    if not (0.0 < iso < 1.0):
        raise ValueError("iso must be a probability in (0, 1)")
    level = math.log(iso / (1.0 - iso))
    vol = grid_logits(field_fn, resolution)
    if vol.min() >= level or vol.max() <= level:
        warnings.warn("field has no iso crossing; returning empty mesh", stacklevel=2)
        return TriangleMesh(np.zeros((0, 3)), np.zeros((0, 3), dtype=np.int64))
    spacing = 2.0 / resolution
    verts, faces, _, _ = measure.marching_cubes(vol, level=level,
                                                spacing=(spacing, spacing, spacing))
    verts = verts + np.array([-1.0, -1.0, -1.0])
    return TriangleMesh(verts.astype(np.float64), faces.astype(np.int64))


def model_field(model: HierarchicalAutoencoder, features, chunk: int = 16384):
    """Bind decoded features into a (K,3)->(K,) logit field function."""
    device = next(model.parameters()).device
    dtype = next(model.parameters()).dtype

    def field_fn(pts):
        with torch.no_grad():
            t = torch.as_tensor(pts, dtype=dtype, device=device).unsqueeze(0)
            return model.query(t, features)[0].to(torch.float32).cpu().numpy()

    return field_fn


def reconstruct_mesh(model, points, resolution: int = 128, iso: float = 0.5,
                     fps_seed_index: int = 0) -> TriangleMesh:
    """Encode a surface cloud and extract the decoded occupancy surface."""
    with torch.no_grad():
        pts = torch.as_tensor(np.asarray(points, dtype=np.float32))
        pts = pts.to(next(model.parameters()).dtype)
        enc = model.encode(pts, fps_seed_index=fps_seed_index)
        feats = model.decode(enc.hierarchy)
    return marching_cubes(model_field(model, feats), resolution=resolution, iso=iso)


def replace_levels_with_noise(hierarchy: LatentHierarchy, replace_mask,
                              generator=None) -> LatentHierarchy:
    """Swap masked levels for standard Gaussian sets (valid because real
    latents are standardized to zero mean / unit variance)."""
    if len(replace_mask) != len(hierarchy):
        raise ValueError("mask length must match hierarchy depth")
    out = []
    for z, replace in zip(hierarchy, replace_mask):
        if replace:
            out.append(torch.randn(z.shape, generator=generator, dtype=z.dtype,
                                   device=z.device))
        else:
            out.append(z)
    return LatentHierarchy(out)


def latent_noise_replacement(model, points, replace_mask, resolution: int = 64,
                             generator=None, fps_seed_index: int = 0) -> TriangleMesh:
    """Encode, replace the masked levels with Gaussian noise, decode, extract.

    replace_mask is a per-level boolean sequence, fine -> coarse; an all-
    False mask reproduces the ordinary reconstruction.
    """
    with torch.no_grad():
        pts = torch.as_tensor(np.asarray(points, dtype=np.float32))
        pts = pts.to(next(model.parameters()).dtype)
        enc = model.encode(pts, fps_seed_index=fps_seed_index)
        hierarchy = replace_levels_with_noise(enc.hierarchy, replace_mask, generator)
        feats = model.decode(hierarchy, check_standardized=False)
    return marching_cubes(model_field(model, feats), resolution=resolution)
