"""Autoencoder optimization: batching, the training loop, and the
finite-difference gradient oracle."""

from __future__ import annotations

import copy
import math
from dataclasses import dataclass, field

import numpy as np
import torch

from .autoencoder import HierarchicalAutoencoder, ModelConfig
from .errors import NumericalError
from .losses import LossBreakdown, bce_occupancy_loss
from .queries import SampledShape, balanced_query_batch


@dataclass
class TrainConfig:
    steps: int = 2000
    lr: float = 1e-4
    weight_decay: float = 1e-4
    cosine_decay: bool = True
    min_lr_fraction: float = 0.01
    batch_shapes: int = 4
    input_points: int = 1024
    query_batch: int = 1024
    seed: int = 0
    fps_random_seed: bool = False  # randomize the FPS start index per step
    checkpoint_every: int = 0      # 0 = never
    log_every: int = 100

    def to_dict(self):
        return dict(self.__dict__)


def make_optimizer(model, cfg: TrainConfig):
    opt = torch.optim.AdamW(model.parameters(), lr=cfg.lr, weight_decay=cfg.weight_decay)
    if cfg.cosine_decay and cfg.steps > 1:
        sched = torch.optim.lr_scheduler.CosineAnnealingLR(
            opt, T_max=cfg.steps, eta_min=cfg.lr * cfg.min_lr_fraction
        )
    else:
        sched = None
    return opt, sched


def prepare_batch(shapes, cfg: TrainConfig, rng, dtype=torch.float32):
    """Stack surface clouds and balanced labeled queries for a list of shapes."""
    clouds, pts, labs, tags = [], [], [], []
    for shape in shapes:
        n_surf = len(shape.surface_points)
        take = rng.choice(n_surf, size=min(cfg.input_points, n_surf), replace=False)
        clouds.append(shape.surface_points[take])
        batch = balanced_query_batch(shape, cfg.query_batch, rng)
        pts.append(batch.points)
        labs.append(batch.labels)
        tags.append(batch.pool_tags)
    to = lambda arr, dt: torch.as_tensor(np.stack(arr)).to(dt)
    return (
        to(clouds, dtype),
        to(pts, dtype),
        to(labs, torch.bool),
        to(tags, torch.int8),
    )


def train_step(model, shapes, optimizer, rng, cfg: TrainConfig, scheduler=None):
    """One gradient step on a batch of sampled shapes. Returns LossBreakdown."""
    if not shapes:
        raise ValueError("empty shape batch")
    dtype = next(model.parameters()).dtype
    clouds, points, labels, tags = prepare_batch(shapes, cfg, rng, dtype=dtype)
    seed_index = int(rng.integers(cfg.input_points)) if cfg.fps_random_seed else 0

    optimizer.zero_grad(set_to_none=True)
    logits = model(clouds, points, fps_seed_index=seed_index)
    loss, breakdown = bce_occupancy_loss(logits, labels, tags)
    if not math.isfinite(breakdown.total):
        raise NumericalError(
            f"non-finite loss {breakdown.total}",
            snapshot=copy.deepcopy(model.state_dict()),
        )
    loss.backward()
    optimizer.step()
    if scheduler is not None:
        scheduler.step()
    return breakdown


def train_autoencoder(model, shapes, cfg: TrainConfig, on_checkpoint=None, log=None):
    """Full training loop over a fixed shape set.

    Shapes are visited in a seeded random order, cfg.batch_shapes per step.
    on_checkpoint(step, model) fires every cfg.checkpoint_every steps.
    Returns the list of per-step LossBreakdown records.
    """
    rng = np.random.default_rng(cfg.seed)
    optimizer, scheduler = make_optimizer(model, cfg)
    history = []
    for step in range(cfg.steps):
        take = rng.choice(len(shapes), size=min(cfg.batch_shapes, len(shapes)), replace=False)
        batch = [shapes[i] for i in take]
        breakdown = train_step(model, batch, optimizer, rng, cfg, scheduler)
        history.append(breakdown)
        if log and (step % cfg.log_every == 0 or step == cfg.steps - 1):
            log(f"step {step:5d}  loss {breakdown.total:.4f}  "
                f"(vol {breakdown.vol_bce:.4f} near {breakdown.near_bce:.4f})")
        if on_checkpoint and cfg.checkpoint_every and (step + 1) % cfg.checkpoint_every == 0:
            on_checkpoint(step + 1, model)
    return history


@torch.no_grad()
def occupancy_accuracy(model, shape: SampledShape, cfg: TrainConfig, rng, n_queries=2048):
    """Fraction of balanced queries whose predicted sign matches the label."""
    eval_cfg = copy.copy(cfg)
    eval_cfg.query_batch = n_queries
    clouds, points, labels, _ = prepare_batch([shape], eval_cfg, rng,
                                              dtype=next(model.parameters()).dtype)
    logits = model(clouds, points)
    pred = logits > 0
    return float((pred == labels).float().mean())


# ------------------------------------------------------------------ gradients

@dataclass
class GradientReport:
    per_tensor: dict = field(default_factory=dict)  # name -> max relative error
    tolerance: float = 1e-4

    @property
    def max_error(self):
        return max(self.per_tensor.values(), default=0.0)

    @property
    def worst_tensor(self):
        if not self.per_tensor:
            return None
        return max(self.per_tensor, key=self.per_tensor.get)

    @property
    def passed(self):
        return self.max_error < self.tolerance

    def failures(self):
        return {k: v for k, v in self.per_tensor.items() if v >= self.tolerance}


def compare_gradients(model, loss_fn, step: float = 1e-5, tolerance: float = 1e-4):
    """Analytic (autograd) vs central-difference gradients, per named tensor.

    loss_fn() must deterministically return a scalar built from the current
    parameters.  The relative error of each tensor is the max-norm of the
    gradient difference over the max-norm of the gradients.
    """
    # tiny oracle models are latency-bound; thread sync costs more than it buys
    n_threads = torch.get_num_threads()
    torch.set_num_threads(1)
    try:
        return _compare_gradients_impl(model, loss_fn, step, tolerance)
    finally:
        torch.set_num_threads(n_threads)


def _compare_gradients_impl(model, loss_fn, step, tolerance):
    model.zero_grad(set_to_none=True)
    loss = loss_fn()
    if loss.requires_grad:  # a model with no parameters has nothing to check
        loss.backward()
    analytic = {
        name: p.grad.detach().clone() if p.grad is not None else torch.zeros_like(p)
        for name, p in model.named_parameters()
    }

    report = GradientReport(tolerance=tolerance)
    numeric_grads = {}
    with torch.no_grad():
        for name, p in model.named_parameters():
            numeric = torch.zeros_like(p)
            flat = p.view(-1)
            nflat = numeric.view(-1)
            for i in range(flat.numel()):
                orig = flat[i].item()
                flat[i] = orig + step
                hi = float(loss_fn())
                flat[i] = orig - step
                lo = float(loss_fn())
                flat[i] = orig
                nflat[i] = (hi - lo) / (2.0 * step)
            numeric_grads[name] = numeric

    # tensors whose true gradient sits at roundoff level (e.g. key biases,
    # which softmax provably ignores) are judged against the model-wide
    # gradient scale, not their own noise
    scales = [
        max(analytic[n].abs().max().item(), g.abs().max().item())
        for n, g in numeric_grads.items()
    ]
    global_scale = max(scales, default=0.0)
    for name, numeric in numeric_grads.items():
        a = analytic[name]
        denom = max(
            a.abs().max().item(),
            numeric.abs().max().item(),
            1e-6 * global_scale,
            1e-12,
        )
        report.per_tensor[name] = (a - numeric).abs().max().item() / denom
    return report


def gradient_check(config: ModelConfig | None = None, tolerance: float = 1e-4,
                   step: float = 1e-5, seed: int = 0) -> GradientReport:
    """Finite-difference oracle on a tiny double-precision model.

    Builds a small model, a fixed point cloud and a fixed labeled query
    batch, and compares autograd gradients of the training loss against
    central differences for every parameter tensor.
    """
    if config is None:
        config = tiny_gradient_config()
    torch.manual_seed(seed)
    model = HierarchicalAutoencoder(config).double()
    n_points = 2 * config.levels[0].latent_count
    gen = torch.Generator().manual_seed(seed)
    points = torch.rand(1, n_points, 3, generator=gen, dtype=torch.float64) * 2 - 1
    queries = torch.rand(1, 6, 3, generator=gen, dtype=torch.float64) * 2 - 1
    labels = torch.tensor([[1, 0, 1, 0, 1, 0]], dtype=torch.bool)
    tags = torch.tensor([[0, 0, 0, 1, 1, 1]], dtype=torch.int8)

    def loss_fn():
        logits = model(points, queries)
        loss, _ = bce_occupancy_loss(logits, labels, tags)
        return loss

    return compare_gradients(model, loss_fn, step=step, tolerance=tolerance)


def tiny_gradient_config() -> ModelConfig:
    """The reference oracle configuration: width 16, latent counts 16/8/4."""
    return ModelConfig(
        levels=((16, 8, 1), (8, 8, 1), (4, 8, 1)),
        attn_channels=16,
        heads=2,
        pe_channels=12,
    )
