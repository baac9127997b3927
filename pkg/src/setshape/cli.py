"""Command-line operator surface.

Subcommands: preprocess, train-ae, encode, train-diff, sample, reconstruct,
eval, analyze, cost-report.  Every run is reproducible from (config, seed);
commands that involve randomness require an explicit --seed.  All paths are
resolved relative to --workdir.  Exit codes: 0 success, 1 config error,
2 data error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np
import torch

from . import checkpoint as ckpt
from .autoencoder import HierarchicalAutoencoder, LatentHierarchy, ModelConfig
from .costs import (
    attention_cost_account,
    reference_flat_config,
    reference_hierarchical_config,
    render_cost_report,
)
from .diffusion import (
    DenoiserConfig,
    NoiseScheduleEDM,
    StageDenoiser,
    denoiser_configs_for_hierarchy,
    sample_cascade,
    train_denoiser_step,
)
from .errors import ConfigError, DataError, NumericalError
from .geometry import load_mesh, normalize_unit_sphere, sample_surface_points, save_obj
from .metrics import DEFAULT_FSCORE_TAU, metric_report
from .queries import ShapeSamplingConfig, sample_shape
from .reconstruct import latent_noise_replacement, model_field, marching_cubes
from .shards import read_shard, write_shard
from .training import TrainConfig, train_autoencoder

MESH_SUFFIXES = {".obj", ".off"}


class Parser(argparse.ArgumentParser):
    def error(self, message):  # bad usage is a config error (exit 1)
        self.print_usage(sys.stderr)
        print(f"error: {message}", file=sys.stderr)
        sys.exit(1)


def _load_json(path):
    try:
        with open(path) as fh:
            return json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}")
    except json.JSONDecodeError as e:
        raise ConfigError(f"bad JSON in {path}: {e}")


def _resolve(workdir, value):
    return Path(workdir) / value if value is not None else None


def _mesh_files(mesh_dir: Path):
    if not mesh_dir.is_dir():
        raise DataError(f"mesh directory not found: {mesh_dir}")
    files = sorted(p for p in mesh_dir.iterdir() if p.suffix.lower() in MESH_SUFFIXES)
    if not files:
        raise DataError(f"no OBJ/OFF meshes in {mesh_dir}")
    return files


def _load_autoencoder(path) -> HierarchicalAutoencoder:
    try:
        tensors, meta = ckpt.load_checkpoint(path)
    except FileNotFoundError:
        raise DataError(f"checkpoint not found: {path}")
    if meta.get("kind") != "autoencoder":
        raise DataError(f"{path} is not an autoencoder checkpoint")
    model = HierarchicalAutoencoder(ModelConfig.from_dict(meta["model"]))
    ckpt.load_state_into(model, tensors)
    model.eval()
    return model


def _encode_shapes(model, shapes, n_points, seed):
    rng = np.random.default_rng(seed)
    out = []
    with torch.no_grad():
        for shape in shapes:
            n = min(n_points, len(shape.surface_points))
            take = rng.choice(len(shape.surface_points), size=n, replace=False)
            pts = torch.as_tensor(shape.surface_points[take])
            out.append(model.encode(pts).hierarchy)
    return out


def _save_latents(path, hierarchies, extra_meta=None):
    tensors = {}
    for i, h in enumerate(hierarchies):
        for j, z in enumerate(h):
            tensors[f"item{i:05d}/level{j}"] = z.squeeze(0)
    meta = {
        "kind": "latents",
        "num_items": len(hierarchies),
        "num_levels": len(hierarchies[0]),
        "level_shapes": [list(z.squeeze(0).shape) for z in hierarchies[0]],
    }
    meta.update(extra_meta or {})
    ckpt.save_checkpoint(path, tensors, meta=meta)


def _load_latents(path):
    tensors, meta = ckpt.load_checkpoint(path)
    if meta.get("kind") != "latents":
        raise DataError(f"{path} is not a latents container")
    items = []
    for i in range(meta["num_items"]):
        levels = [
            torch.as_tensor(tensors[f"item{i:05d}/level{j}"])
            for j in range(meta["num_levels"])
        ]
        items.append(LatentHierarchy(levels))
    return items, meta


# ----------------------------------------------------------------- commands

def cmd_preprocess(args):
    mesh_dir = _resolve(args.workdir, args.mesh_dir)
    out_path = _resolve(args.workdir, args.out)
    files = _mesh_files(mesh_dir)
    cfg = ShapeSamplingConfig(
        surface_count=args.surface_count,
        volume_count=args.volume_count,
        near_base_count=args.near_base_count,
        verify_labels=args.verify_labels,
    )
    shapes, records = [], []
    for i, path in enumerate(files):
        rng = np.random.default_rng([args.seed, i])
        try:
            mesh = normalize_unit_sphere(load_mesh(path))
            shape, report = sample_shape(mesh, cfg, rng)
        except DataError as e:
            records.append({"source": path.name, "error": str(e)})
            print(f"FAILED {path.name}: {e}", file=sys.stderr)
            continue
        shapes.append(shape)
        rec = {
            "source": path.name,
            "surface": len(shape.surface_points),
            "vol": len(shape.vol_queries),
            "near": len(shape.near_queries),
            "inside_fraction": float(shape.vol_labels.mean()),
            "unreliable_labels": report.n_unreliable,
        }
        if report.n_unreliable:
            print(f"WARNING {path.name}: {report.n_unreliable} unreliable labels",
                  file=sys.stderr)
        records.append(rec)
        print(json.dumps(rec))
    if not shapes:
        raise DataError("no meshes preprocessed successfully")
    out_path.parent.mkdir(parents=True, exist_ok=True)
    write_shard(shapes, out_path)
    with open(out_path.with_suffix(out_path.suffix + ".json"), "w") as fh:
        json.dump({"seed": args.seed, "records": records}, fh, indent=2)
    print(f"wrote {len(shapes)} shapes to {out_path}")
    return 0


def cmd_train_ae(args):
    cfg = _load_json(_resolve(args.workdir, args.config))
    for key in ("shard", "model", "out"):
        if key not in cfg:
            raise ConfigError(f"train-ae config missing field '{key}'")
    try:
        model_cfg = ModelConfig.from_dict(cfg["model"])
    except (TypeError, KeyError) as e:
        raise ConfigError(f"bad model config: {e}")
    train_cfg = TrainConfig(**cfg.get("train", {}))
    if args.seed is not None:
        train_cfg.seed = args.seed

    shapes = read_shard(_resolve(args.workdir, cfg["shard"]))
    torch.manual_seed(train_cfg.seed)
    model = HierarchicalAutoencoder(model_cfg)
    if args.resume:
        tensors, meta = ckpt.load_checkpoint(_resolve(args.workdir, args.resume))
        if meta.get("kind") != "autoencoder":
            raise DataError(f"{args.resume} is not an autoencoder checkpoint")
        if meta.get("model") != model_cfg.to_dict():
            raise ConfigError("resume checkpoint was trained with a different model config")
        ckpt.load_state_into(model, tensors)
        print(f"resumed from {args.resume} (step {meta.get('step', '?')})")
    out_path = _resolve(args.workdir, cfg["out"])
    out_path.parent.mkdir(parents=True, exist_ok=True)

    def save(step, m, suffix=""):
        ckpt.save_module(
            out_path if not suffix else out_path.with_suffix(f".{suffix}"),
            m,
            meta={"kind": "autoencoder", "model": model_cfg.to_dict(),
                  "train": train_cfg.to_dict(), "step": step},
        )

    try:
        history = train_autoencoder(
            model, shapes, train_cfg,
            on_checkpoint=lambda s, m: save(s, m),
            log=print,
        )
    except NumericalError as e:
        snap_path = out_path.with_suffix(".abort")
        ckpt.save_checkpoint(snap_path, e.snapshot or {}, meta={"kind": "abort-snapshot"})
        print(f"aborted: {e} (snapshot at {snap_path})", file=sys.stderr)
        raise
    save(train_cfg.steps, model)
    with open(out_path.with_suffix(".history.json"), "w") as fh:
        json.dump([b.total for b in history], fh)
    print(f"final loss {history[-1].total:.4f}; checkpoint at {out_path}")
    return 0


def cmd_encode(args):
    model = _load_autoencoder(_resolve(args.workdir, args.checkpoint))
    shapes = read_shard(_resolve(args.workdir, args.shard))
    hierarchies = _encode_shapes(model, shapes, args.input_points, args.seed)
    out_path = _resolve(args.workdir, args.out)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    _save_latents(out_path, hierarchies)
    print(f"encoded {len(hierarchies)} shapes to {out_path}")
    return 0


def cmd_train_diff(args):
    cfg = _load_json(_resolve(args.workdir, args.config)) if args.config else {}
    model = _load_autoencoder(_resolve(args.workdir, args.checkpoint))
    shapes = read_shard(_resolve(args.workdir, args.shard))
    seed = args.seed
    hierarchies = _encode_shapes(model, shapes, cfg.get("input_points", 1024), seed)
    level_shapes = [tuple(z.squeeze(0).shape) for z in hierarchies[0]]
    stacked = LatentHierarchy(
        [torch.cat([h[j] for h in hierarchies]) for j in range(len(level_shapes))]
    )

    configs = denoiser_configs_for_hierarchy(
        level_shapes,
        width=cfg.get("width", 64),
        blocks=cfg.get("blocks", 2),
        heads=cfg.get("heads", 4),
        cond_dim=cfg.get("cond_dim", 0),
    )
    steps = cfg.get("steps", 2000)
    batch = cfg.get("batch", min(8, stacked[0].shape[0]))
    lr = cfg.get("lr", 1e-3)
    out_dir = _resolve(args.workdir, args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    for level, dcfg in enumerate(configs):
        torch.manual_seed(seed + level)
        gen = torch.Generator().manual_seed(seed + 1000 + level)
        stage = StageDenoiser(dcfg)
        opt = torch.optim.AdamW(stage.parameters(), lr=lr)
        n_items = stacked[0].shape[0]
        last = None
        for step in range(steps):
            take = torch.randint(n_items, (batch,), generator=gen)
            batch_h = LatentHierarchy([z[take] for z in stacked])
            last = train_denoiser_step(stage, opt, batch_h, level, generator=gen)
        path = out_dir / f"denoiser_level{level}.ckpt"
        ckpt.save_module(path, stage, meta={"kind": "denoiser",
                                            "config": dcfg.to_dict(),
                                            "steps": steps, "seed": seed})
        print(f"level {level}: final weighted loss {last.weighted:.4f} -> {path}")
    return 0


def _load_stages(denoiser_dir: Path):
    stages = []
    level = 0
    while (denoiser_dir / f"denoiser_level{level}.ckpt").exists():
        tensors, meta = ckpt.load_checkpoint(denoiser_dir / f"denoiser_level{level}.ckpt")
        if meta.get("kind") != "denoiser":
            raise DataError(f"level {level}: not a denoiser checkpoint")
        stage = StageDenoiser(DenoiserConfig.from_dict(meta["config"]))
        ckpt.load_state_into(stage, tensors)
        stage.eval()
        stages.append(stage)
        level += 1
    if not stages:
        raise DataError(f"no denoiser checkpoints in {denoiser_dir}")
    return stages


def cmd_sample(args):
    stages = _load_stages(_resolve(args.workdir, args.denoisers))
    schedule = NoiseScheduleEDM(steps=args.steps)
    cond = None
    if args.cond:
        cond = torch.tensor([[float(x) for x in args.cond.split(",")]])

    frozen = {}
    if args.levels_from:
        items, _ = _load_latents(_resolve(args.workdir, args.levels_from))
        src = items[args.levels_from_item]
        if args.freeze_from_level is None:
            raise ConfigError("--levels-from requires --freeze-from-level")
        for j in range(args.freeze_from_level, len(src)):
            frozen[j] = src[j]

    out_dir = _resolve(args.workdir, args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    hierarchies = []
    for k in range(args.batch):
        gen = torch.Generator().manual_seed(args.seed + k)
        h = sample_cascade(stages, schedule, cond=cond, generator=gen, frozen=frozen)
        hierarchies.append(h)
    latents_path = out_dir / "samples.latents"
    _save_latents(latents_path, hierarchies,
                  extra_meta={"seed": args.seed, "steps": args.steps,
                              "frozen_levels": sorted(frozen)})
    print(f"wrote {len(hierarchies)} latent samples to {latents_path}")

    if args.ae:
        model = _load_autoencoder(_resolve(args.workdir, args.ae))
        for k, h in enumerate(hierarchies):
            feats = model.decode(h, check_standardized=False)
            mesh = marching_cubes(model_field(model, feats), resolution=args.resolution)
            mesh_path = out_dir / f"sample{k:03d}.obj"
            save_obj(mesh, mesh_path)
            print(f"sample {k}: {mesh.num_triangles} triangles -> {mesh_path}")
    return 0


def cmd_reconstruct(args):
    model = _load_autoencoder(_resolve(args.workdir, args.checkpoint))
    mesh_path = _resolve(args.workdir, args.mesh)
    paths = _mesh_files(mesh_path) if mesh_path.is_dir() else [mesh_path]
    out_dir = _resolve(args.workdir, args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(args.seed)
    for path in paths:
        mesh = normalize_unit_sphere(load_mesh(path))
        cloud = sample_surface_points(mesh, args.input_points, rng)
        pts = torch.as_tensor(cloud.astype(np.float32))
        with torch.no_grad():
            enc = model.encode(pts)
            feats = model.decode(enc.hierarchy)
        recon = marching_cubes(model_field(model, feats), resolution=args.resolution)
        out = out_dir / f"{path.stem}_recon.obj"
        save_obj(recon, out)
        print(f"{path.name}: {recon.num_triangles} triangles -> {out}")
    return 0


def cmd_eval(args):
    model = _load_autoencoder(_resolve(args.workdir, args.checkpoint))
    files = _mesh_files(_resolve(args.workdir, args.mesh_dir))
    out_path = _resolve(args.workdir, args.out)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(args.seed)
    rows = []
    with open(out_path, "w") as fh:
        for path in files:
            mesh = normalize_unit_sphere(load_mesh(path))
            cloud = sample_surface_points(mesh, args.input_points, rng)
            pts = torch.as_tensor(cloud.astype(np.float32))
            with torch.no_grad():
                enc = model.encode(pts)
                feats = model.decode(enc.hierarchy)
            recon = marching_cubes(model_field(model, feats), resolution=args.resolution)
            if recon.num_triangles == 0:
                record = {"shape": path.name, "error": "empty reconstruction"}
            else:
                gt = sample_surface_points(mesh, args.metric_samples, rng)
                pred = sample_surface_points(recon, args.metric_samples, rng)
                report = metric_report(pred, gt, tau=args.tau)
                record = {"shape": path.name, **report.to_dict()}
                rows.append(record)
            fh.write(json.dumps(record) + "\n")
    if rows:
        print(f"{'shape':<20}{'chamfer x100':>14}{'f-score x100':>14}")
        for r in rows:
            print(f"{r['shape']:<20}{r['chamfer_x100']:>14.3f}{r['fscore_x100']:>14.2f}")
        mean_c = sum(r["chamfer_x100"] for r in rows) / len(rows)
        mean_f = sum(r["fscore_x100"] for r in rows) / len(rows)
        print(f"{'mean':<20}{mean_c:>14.3f}{mean_f:>14.2f}")
    print(f"report written to {out_path}")
    return 0


def cmd_analyze(args):
    model = _load_autoencoder(_resolve(args.workdir, args.checkpoint))
    files = _mesh_files(_resolve(args.workdir, args.mesh_dir))
    out_path = _resolve(args.workdir, args.out)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    L = model.config.num_levels
    # progressively replace levels fine -> coarse, plus the faithful baseline
    masks = [[False] * L]
    for k in range(1, L + 1):
        masks.append([i < k for i in range(L)])
    rng = np.random.default_rng(args.seed)
    rows = []
    with open(out_path, "w") as fh:
        for path in files:
            mesh = normalize_unit_sphere(load_mesh(path))
            cloud = sample_surface_points(mesh, args.input_points, rng)
            gt = sample_surface_points(mesh, args.metric_samples, rng)
            row = {"shape": path.name}
            for mask in masks:
                gen = torch.Generator().manual_seed(args.seed)
                recon = latent_noise_replacement(
                    model, cloud, mask, resolution=args.resolution, generator=gen
                )
                key = "replace_" + ("none" if not any(mask)
                                    else ",".join(str(i + 1) for i in range(L) if mask[i]))
                if recon.num_triangles == 0:
                    row[key] = None
                else:
                    pred = sample_surface_points(recon, args.metric_samples, rng)
                    row[key] = metric_report(pred, gt).chamfer_x100
            rows.append(row)
            fh.write(json.dumps(row) + "\n")
    keys = [k for k in rows[0] if k != "shape"]
    print(f"{'shape':<20}" + "".join(f"{k:>20}" for k in keys))
    for r in rows:
        cells = "".join(
            f"{(f'{r[k]:.3f}' if r[k] is not None else 'empty'):>20}" for k in keys
        )
        print(f"{r['shape']:<20}{cells}")
    print(f"report written to {out_path}")
    return 0


def cmd_cost_report(args):
    if args.config_a and args.config_b:
        cfg_a = ModelConfig.from_dict(_load_json(_resolve(args.workdir, args.config_a)))
        cfg_b = ModelConfig.from_dict(_load_json(_resolve(args.workdir, args.config_b)))
    else:
        cfg_a = reference_flat_config()
        cfg_b = reference_hierarchical_config()
    report = attention_cost_account(cfg_a, cfg_b, input_points=args.points,
                                    query_points=args.queries)
    text = json.dumps(report, indent=2) if args.json else render_cost_report(report)
    print(text)
    if args.out:
        out_path = _resolve(args.workdir, args.out)
        out_path.parent.mkdir(parents=True, exist_ok=True)
        out_path.write_text(text + "\n")
        print(f"report written to {out_path}")
    return 0


# -------------------------------------------------------------------- parser

def build_parser():
    parser = Parser(prog="setshape",
                    description="hierarchical set-latent occupancy autoencoding")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, seed_required=True):
        p.add_argument("--workdir", default=".", help="root for all relative paths")
        if seed_required:
            p.add_argument("--seed", type=int, required=True)

    p = sub.add_parser("preprocess", help="meshes -> labeled query shard")
    common(p)
    p.add_argument("--mesh-dir", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--surface-count", type=int, default=8192)
    p.add_argument("--volume-count", type=int, default=250_000)
    p.add_argument("--near-base-count", type=int, default=125_000)
    p.add_argument("--verify-labels", action="store_true")
    p.set_defaults(fn=cmd_preprocess)

    p = sub.add_parser("train-ae", help="train the autoencoder from a config")
    common(p, seed_required=False)
    p.add_argument("--config", required=True)
    p.add_argument("--seed", type=int, default=None, help="overrides config seed")
    p.add_argument("--resume", default=None, help="checkpoint to restore before training")
    p.set_defaults(fn=cmd_train_ae)

    p = sub.add_parser("encode", help="shard -> latent hierarchies")
    common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--shard", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--input-points", type=int, default=1024)
    p.set_defaults(fn=cmd_encode)

    p = sub.add_parser("train-diff", help="train cascade denoisers on frozen latents")
    common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--shard", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--config", default=None)
    p.set_defaults(fn=cmd_train_diff)

    p = sub.add_parser("sample", help="generate latent hierarchies (and meshes)")
    common(p)
    p.add_argument("--denoisers", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--ae", default=None, help="decode samples to meshes")
    p.add_argument("--batch", type=int, default=4)
    p.add_argument("--steps", type=int, default=32)
    p.add_argument("--resolution", type=int, default=64)
    p.add_argument("--cond", default=None, help="comma-separated condition vector")
    p.add_argument("--levels-from", default=None,
                   help="latents container supplying frozen coarse levels")
    p.add_argument("--levels-from-item", type=int, default=0)
    p.add_argument("--freeze-from-level", type=int, default=None,
                   help="freeze levels >= this index (0 = finest)")
    p.set_defaults(fn=cmd_sample)

    p = sub.add_parser("reconstruct", help="autoencode meshes and extract surfaces")
    common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--mesh", required=True, help="mesh file or directory")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--input-points", type=int, default=1024)
    p.add_argument("--resolution", type=int, default=128)
    p.set_defaults(fn=cmd_reconstruct)

    p = sub.add_parser("eval", help="reconstruction metrics against ground truth")
    common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--mesh-dir", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--input-points", type=int, default=1024)
    p.add_argument("--resolution", type=int, default=128)
    p.add_argument("--metric-samples", type=int, default=100_000)
    p.add_argument("--tau", type=float, default=DEFAULT_FSCORE_TAU)
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("analyze", help="latent noise-replacement analysis")
    common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--mesh-dir", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--input-points", type=int, default=1024)
    p.add_argument("--resolution", type=int, default=64)
    p.add_argument("--metric-samples", type=int, default=20_000)
    p.set_defaults(fn=cmd_analyze)

    p = sub.add_parser("cost-report", help="exact attention pair accounting")
    common(p, seed_required=False)
    p.add_argument("--config-a", default=None)
    p.add_argument("--config-b", default=None)
    p.add_argument("--points", type=int, default=2048)
    p.add_argument("--queries", type=int, default=1024)
    p.add_argument("--json", action="store_true")
    p.add_argument("--out", default=None, help="also write the report to this file")
    p.set_defaults(fn=cmd_cost_report)

    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 1
    except DataError as e:
        print(f"data error: {e}", file=sys.stderr)
        return 2
    except NumericalError as e:
        print(f"numerical failure: {e}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
