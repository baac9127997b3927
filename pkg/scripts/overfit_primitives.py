"""Overfit the hierarchical autoencoder on the eight-primitive fixture set and
report held-out occupancy accuracy plus reconstruction Chamfer at a chosen
extraction resolution.

Usage: python scripts/overfit_primitives.py [--steps N] [--resolution R] ...
This is the experiment behind the reconstruction acceptance gate; run it when
tuning the toy configuration.
"""

import argparse
import json
import time

import numpy as np
import torch

from setshape.autoencoder import HierarchicalAutoencoder, ModelConfig
from setshape.geometry import sample_surface_points
from setshape.metrics import chamfer
from setshape.primitives import primitive_suite
from setshape.queries import ShapeSamplingConfig, sample_shape
from setshape.reconstruct import marching_cubes, model_field
from setshape.training import TrainConfig, train_autoencoder


def toy_model_config(width=64, pe=48, layers=2):
    return ModelConfig(
        levels=((128, 8, layers), (32, 16, layers), (8, 32, layers)),
        attn_channels=width,
        heads=4,
        pe_channels=pe,
    )


def build_dataset(seed, surface=4096, vol=16384, near=4096):
    suite = primitive_suite()
    cfg = ShapeSamplingConfig(surface_count=surface, volume_count=vol, near_base_count=near)
    shapes, names = [], []
    for i, (name, mesh) in enumerate(sorted(suite.items())):
        rng = np.random.default_rng([seed, i])
        shape, report = sample_shape(mesh, cfg, rng)
        shapes.append(shape)
        names.append(name)
        if report.n_unreliable:
            print(f"warning: {name}: {report.n_unreliable} unreliable labels")
    return names, shapes, suite


def evaluate(model, names, shapes, suite, cfg, resolution, metric_samples=100_000,
             eval_seed=999, shell=0.02):
    """Per shape: raw and shell-filtered sign accuracy on balanced held-out
    queries (points closer than `shell` to the true surface are ambiguous at
    the tight jitter scale and are excluded from the filtered number), plus
    reconstruction Chamfer at `resolution`."""
    from scipy.spatial import cKDTree

    from setshape.queries import balanced_query_batch

    rng = np.random.default_rng(eval_seed)
    rows = []
    for name, shape in zip(names, shapes):
        batch = balanced_query_batch(shape, 4096, rng)
        gt = sample_surface_points(suite[name], metric_samples, rng)
        dist, _ = cKDTree(gt).query(batch.points, k=1)
        keep = dist > shell
        t0 = time.time()
        take = rng.choice(len(shape.surface_points), size=cfg.input_points, replace=False)
        pts = torch.as_tensor(shape.surface_points[take])
        with torch.no_grad():
            enc = model.encode(pts)
            feats = model.decode(enc.hierarchy)
            logits = model.query(torch.as_tensor(batch.points).unsqueeze(0), feats)
        pred = logits[0].numpy() > 0
        raw_acc = float((pred == batch.labels).mean())
        acc = float((pred[keep] == batch.labels[keep]).mean())
        mesh = marching_cubes(model_field(model, feats), resolution=resolution)
        if mesh.num_triangles == 0:
            rows.append({"shape": name, "accuracy": acc, "chamfer_x100": None})
            continue
        recon = sample_surface_points(mesh, metric_samples, rng)
        rows.append({
            "shape": name,
            "accuracy": acc,
            "raw_accuracy": raw_acc,
            "chamfer_x100": chamfer(recon, gt),
            "extract_s": round(time.time() - t0, 1),
        })
        print(json.dumps(rows[-1]))
    return rows


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--steps", type=int, default=4000)
    ap.add_argument("--lr", type=float, default=1e-3)
    ap.add_argument("--width", type=int, default=64)
    ap.add_argument("--layers", type=int, default=2)
    ap.add_argument("--input-points", type=int, default=512)
    ap.add_argument("--query-batch", type=int, default=1024)
    ap.add_argument("--batch-shapes", type=int, default=2)
    ap.add_argument("--resolution", type=int, default=128)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--data-seed", type=int, default=100)
    ap.add_argument("--eval-data-seed", type=int, default=200)
    ap.add_argument("--out", default=None, help="save the trained model here")
    args = ap.parse_args()

    t0 = time.time()
    names, shapes, suite = build_dataset(args.data_seed)
    print(f"dataset built in {time.time() - t0:.0f}s")

    torch.manual_seed(args.seed)
    model = HierarchicalAutoencoder(toy_model_config(args.width, layers=args.layers))
    n_params = sum(p.numel() for p in model.parameters())
    print(f"model parameters: {n_params:,}")

    cfg = TrainConfig(
        steps=args.steps,
        lr=args.lr,
        batch_shapes=args.batch_shapes,
        input_points=args.input_points,
        query_batch=args.query_batch,
        seed=args.seed,
        log_every=200,
    )
    t0 = time.time()
    history = train_autoencoder(model, shapes, cfg, log=print)
    print(f"trained {args.steps} steps in {time.time() - t0:.0f}s "
          f"({(time.time() - t0) / args.steps * 1000:.0f} ms/step)")

    # held-out queries: fresh labeled samples from the same meshes
    _, heldout, _ = build_dataset(args.eval_data_seed, surface=2048, vol=8192, near=2048)
    rows = evaluate(model, names, heldout, suite, cfg, args.resolution)
    accs = [r["accuracy"] for r in rows]
    chs = [r["chamfer_x100"] for r in rows if r["chamfer_x100"] is not None]
    print(f"min accuracy {min(accs):.4f}  mean accuracy {sum(accs)/len(accs):.4f}")
    if chs:
        print(f"max chamfer {max(chs):.3f}  mean chamfer {sum(chs)/len(chs):.3f}")

    if args.out:
        from setshape.checkpoint import save_module

        save_module(args.out, model, meta={
            "kind": "autoencoder",
            "model": model.config.to_dict(),
            "train": cfg.to_dict(),
        })
        print(f"saved {args.out}")


if __name__ == "__main__":
    main()
