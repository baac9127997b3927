"""Cascaded latent diffusion over a standardized latent hierarchy.

One denoiser per level, trained independently; level L (coarsest) is
unconditional (up to the external condition vector), and each finer level
cross-attends its noisy latents against all coarser levels' latents before
its self-attention blocks.  Sampling runs coarse to fine with a 2nd-order
Heun solver, feeding each finer stage the latents generated so far.

The noise schedule, preconditioning and sampler follow the sigma
parameterization with defaults sigma_min=0.002, sigma_max=80, rho=7;
sigma_data=1 because the latent space is standardized.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch
import torch.nn as nn

from .autoencoder import LatentHierarchy
from .errors import ConfigError
from .nets import multihead_attention


# ----------------------------------------------------------------- schedule

@dataclass(frozen=True)
class NoiseScheduleEDM:
    sigma_min: float = 0.002
    sigma_max: float = 80.0
    rho: float = 7.0
    sigma_data: float = 1.0
    steps: int = 32

    def __post_init__(self):
        if not (0 < self.sigma_min < self.sigma_max):
            raise ConfigError("need 0 < sigma_min < sigma_max")
        if self.rho <= 0:
            raise ConfigError("rho must be positive")

    def to_dict(self):
        return dict(self.__dict__)


def karras_sigmas(schedule: NoiseScheduleEDM, dtype=torch.float32) -> torch.Tensor:
    """Strictly decreasing sigma ladder from sigma_max to sigma_min."""
    if schedule.steps < 2:
        raise ConfigError("schedule needs at least 2 steps")
    i = torch.arange(schedule.steps, dtype=dtype)
    inv_rho = 1.0 / schedule.rho
    hi = schedule.sigma_max**inv_rho
    lo = schedule.sigma_min**inv_rho
    return (hi + i / (schedule.steps - 1) * (lo - hi)) ** schedule.rho


def preconditioning(sigma, sigma_data: float):
    """(c_skip, c_out, c_in, c_noise) for a sigma tensor or float."""
    sigma = torch.as_tensor(sigma, dtype=torch.float32) if not torch.is_tensor(sigma) else sigma
    denom = sigma**2 + sigma_data**2
    c_skip = sigma_data**2 / denom
    c_out = sigma * sigma_data / denom.sqrt()
    c_in = 1.0 / denom.sqrt()
    c_noise = sigma.log() / 4.0
    return c_skip, c_out, c_in, c_noise


def add_noise(z: torch.Tensor, sigma, generator=None) -> torch.Tensor:
    """z + sigma * eps with standard normal eps (sigma broadcastable to z)."""
    sigma_t = torch.as_tensor(sigma, dtype=z.dtype, device=z.device)
    if (sigma_t < 0).any():
        raise ValueError("sigma must be non-negative")
    eps = torch.randn(z.shape, generator=generator, dtype=z.dtype, device=z.device)
    return z + sigma_t * eps


def sample_training_sigmas(n, generator=None, p_mean: float = -1.2, p_std: float = 1.2):
    """Log-normal sigma draws used during denoiser training."""
    return torch.exp(
        p_mean + p_std * torch.randn(n, generator=generator)
    )


# ----------------------------------------------------------------- denoiser

@dataclass(frozen=True)
class DenoiserConfig:
    """One cascade stage.

    level: 0-based index into the hierarchy (0 = finest).  The stage
    conditions on every coarser level (indices level+1 .. L-1), in coarse ->
    fine order, plus an optional external condition vector of size cond_dim.
    """

    level: int
    latent_count: int
    latent_channels: int
    coarser_channels: tuple = ()  # latent channels of levels L-1 .. level+1
    width: int = 64
    blocks: int = 2
    heads: int = 4
    cond_dim: int = 0

    def __post_init__(self):
        if self.width % self.heads != 0:
            raise ConfigError("denoiser width must be divisible by heads")
        if self.blocks < 1:
            raise ConfigError("denoiser needs at least one block")

    def to_dict(self):
        return {
            "level": self.level,
            "latent_count": self.latent_count,
            "latent_channels": self.latent_channels,
            "coarser_channels": list(self.coarser_channels),
            "width": self.width,
            "blocks": self.blocks,
            "heads": self.heads,
            "cond_dim": self.cond_dim,
        }

    @staticmethod
    def from_dict(d):
        d = dict(d)
        d["coarser_channels"] = tuple(d.get("coarser_channels", ()))
        return DenoiserConfig(**d)


class ConditionStack(nn.Module):
    """Sequential cross attention of the noisy tokens against coarser latents.

    Coarser latents arrive coarse -> fine; the coarsest stage passes tokens
    through unchanged.  Each coarser set is lifted to the stage width, then
    the tokens attend into it (pre-norm residual, no feed-forward: the
    stage's own blocks follow).
    """

    def __init__(self, width: int, heads: int, coarser_channels):
        super().__init__()
        self.heads = heads
        self.lifts = nn.ModuleList(nn.Linear(ch, width) for ch in coarser_channels)
        self.norms_q = nn.ModuleList(nn.LayerNorm(width) for _ in coarser_channels)
        self.norms_kv = nn.ModuleList(nn.LayerNorm(width) for _ in coarser_channels)
        self.to_q = nn.ModuleList(nn.Linear(width, width) for _ in coarser_channels)
        self.to_k = nn.ModuleList(nn.Linear(width, width) for _ in coarser_channels)
        self.to_v = nn.ModuleList(nn.Linear(width, width) for _ in coarser_channels)
        self.to_out = nn.ModuleList(nn.Linear(width, width) for _ in coarser_channels)

    def forward(self, tokens, coarser):
        if len(coarser) != len(self.lifts):
            raise ConfigError(
                f"stage expects {len(self.lifts)} coarser levels, got {len(coarser)}"
            )
        for i, z in enumerate(coarser):
            kv = self.norms_kv[i](self.lifts[i](z))
            q = self.norms_q[i](tokens)
            attn = multihead_attention(
                self.to_q[i](q), self.to_k[i](kv), self.to_v[i](kv), self.heads, kind="ca"
            )
            tokens = tokens + self.to_out[i](attn)
        return tokens


class DenoiserBlock(nn.Module):
    """Self attention + MLP with adaptive modulation from the noise embedding."""

    def __init__(self, width: int, heads: int, mlp_ratio: int = 4):
        super().__init__()
        self.heads = heads
        self.norm1 = nn.LayerNorm(width, elementwise_affine=False)
        self.norm2 = nn.LayerNorm(width, elementwise_affine=False)
        self.to_q = nn.Linear(width, width)
        self.to_k = nn.Linear(width, width)
        self.to_v = nn.Linear(width, width)
        self.to_out = nn.Linear(width, width)
        self.mlp = nn.Sequential(
            nn.Linear(width, mlp_ratio * width),
            nn.GELU(),
            nn.Linear(mlp_ratio * width, width),
        )
        self.adaln = nn.Linear(width, 6 * width)
        nn.init.zeros_(self.adaln.weight)
        nn.init.zeros_(self.adaln.bias)

    def forward(self, x, emb):
        # emb: (B, width) -> shift/scale/gate for both sub-blocks
        s1, g1, sh1, s2, g2, sh2 = self.adaln(emb).unsqueeze(1).chunk(6, dim=-1)
        h = self.norm1(x) * (1 + s1) + sh1
        attn = multihead_attention(self.to_q(h), self.to_k(h), self.to_v(h),
                                   self.heads, kind="sa")
        x = x + g1 * self.to_out(attn)
        h = self.norm2(x) * (1 + s2) + sh2
        x = x + g2 * self.mlp(h)
        return x


class StageDenoiser(nn.Module):
    """Preconditioned denoiser for one hierarchy level.

    forward(noisy, sigma, coarser, cond) returns the denoised prediction
    c_skip * noisy + c_out * net(c_in * noisy, ...).  As sigma -> 0 the
    output approaches the noisy input regardless of the network.
    """

    def __init__(self, config: DenoiserConfig, sigma_data: float = 1.0):
        super().__init__()
        self.config = config
        self.sigma_data = sigma_data
        W = config.width
        self.lift = nn.Linear(config.latent_channels, W)
        # latents arrive in deterministic FPS-selection order, so slots carry
        # identity; without this the net is forced to be exchangeable over
        # tokens and cannot fit per-slot structure
        self.token_pos = nn.Parameter(0.02 * torch.randn(1, config.latent_count, W))
        self.conditioning = ConditionStack(W, config.heads, config.coarser_channels)
        self.noise_embed = nn.Sequential(
            nn.Linear(W, W), nn.SiLU(), nn.Linear(W, W)
        )
        self.cond_embed = (
            nn.Linear(config.cond_dim, W) if config.cond_dim > 0 else None
        )
        self.blocks = nn.ModuleList(
            DenoiserBlock(W, config.heads) for _ in range(config.blocks)
        )
        self.norm_out = nn.LayerNorm(W, elementwise_affine=False)
        self.head = nn.Linear(W, config.latent_channels)
        nn.init.zeros_(self.head.weight)
        nn.init.zeros_(self.head.bias)

    def _fourier(self, c_noise):
        # log-sigma fourier features at geometric frequencies
        half = self.config.width // 2
        freqs = torch.exp(
            torch.arange(half, dtype=c_noise.dtype, device=c_noise.device)
            * (-math.log(10000.0) / max(half - 1, 1))
        )
        ang = c_noise[:, None] * freqs[None, :] * 2 * math.pi
        return torch.cat([ang.sin(), ang.cos()], dim=-1)

    def forward(self, noisy, sigma, coarser=(), cond=None):
        """noisy: (B, M, D); sigma: scalar or (B,); coarser: coarse->fine list."""
        if noisy.dim() == 2:
            noisy = noisy.unsqueeze(0)
        B = noisy.shape[0]
        sigma_t = torch.as_tensor(sigma, dtype=noisy.dtype, device=noisy.device)
        if sigma_t.dim() == 0:
            sigma_t = sigma_t.expand(B)
        c_skip, c_out, c_in, c_noise = preconditioning(sigma_t, self.sigma_data)
        shape = (B, 1, 1)

        emb = self.noise_embed(self._fourier(c_noise))
        if self.cond_embed is not None:
            if cond is None:
                cond = noisy.new_zeros(B, self.config.cond_dim)
            emb = emb + self.cond_embed(cond)

        h = self.lift(c_in.view(shape) * noisy) + self.token_pos
        h = self.conditioning(h, list(coarser))
        for block in self.blocks:
            h = block(h, emb)
        out = self.head(self.norm_out(h))
        return c_skip.view(shape) * noisy + c_out.view(shape) * out


def denoiser_configs_for_hierarchy(level_shapes, width=64, blocks=2, heads=4, cond_dim=0):
    """Build one DenoiserConfig per level. level_shapes: [(M_i, D_i)] fine -> coarse."""
    configs = []
    L = len(level_shapes)
    for i, (m, d) in enumerate(level_shapes):
        coarser = tuple(level_shapes[j][1] for j in range(L - 1, i, -1))
        configs.append(
            DenoiserConfig(
                level=i,
                latent_count=m,
                latent_channels=d,
                coarser_channels=coarser,
                width=width,
                blocks=blocks,
                heads=heads,
                cond_dim=cond_dim,
            )
        )
    return configs


# ----------------------------------------------------------------- training

@dataclass
class DenoiserLoss:
    weighted: float
    raw_mse: float
    sigma_mean: float


def coarser_latents(hierarchy, level: int):
    """Ground-truth coarser levels for a stage, coarse -> fine order."""
    return [hierarchy[j] for j in range(len(hierarchy) - 1, level, -1)]


def denoiser_loss(stage: StageDenoiser, clean: torch.Tensor, coarser, cond=None,
                  generator=None, sigmas=None):
    """EDM-weighted denoising loss on one batch of clean latents.

    clean: (B, M, D); coarser latents are the ground-truth ones (teacher
    forcing).  Returns (loss tensor, DenoiserLoss record).
    """
    B = clean.shape[0]
    if sigmas is None:
        sigmas = sample_training_sigmas(B, generator=generator).to(clean.dtype)
    sig = sigmas.view(B, 1, 1)
    noise = torch.randn(clean.shape, generator=generator, dtype=clean.dtype)
    noisy = clean + sig * noise
    pred = stage(noisy, sigmas, coarser=coarser, cond=cond)
    sd = stage.sigma_data
    weight = (sig**2 + sd**2) / (sig * sd) ** 2
    raw = ((pred - clean) ** 2).mean()
    loss = (weight * (pred - clean) ** 2).mean()
    record = DenoiserLoss(
        weighted=float(loss.detach()),
        raw_mse=float(raw.detach()),
        sigma_mean=float(sigmas.mean()),
    )
    return loss, record


def train_denoiser_step(stage, optimizer, hierarchies, level: int, cond=None,
                        generator=None):
    """One optimizer step for a stage on a batch of latent hierarchies.

    hierarchies: LatentHierarchy with batched tensors (B, M_i, D_i); the
    hierarchy must come from a frozen, already-trained encoder.
    """
    clean = hierarchies[level]
    coarser = [z.detach() for z in coarser_latents(hierarchies, level)]
    optimizer.zero_grad(set_to_none=True)
    loss, record = denoiser_loss(stage, clean.detach(), coarser, cond=cond,
                                 generator=generator)
    if not math.isfinite(record.weighted):
        from .errors import NumericalError

        raise NumericalError(f"non-finite denoiser loss {record.weighted}")
    loss.backward()
    optimizer.step()
    return record


# ----------------------------------------------------------------- sampling

def heun_sample(denoise_fn, shape, sigmas, generator=None, dtype=torch.float32):
    """Deterministic 2nd-order Heun sampler over a decreasing sigma ladder.

    denoise_fn(x, sigma) -> denoised prediction.  Initial state is
    sigmas[0] * N(0, I); after walking the ladder a final Euler step takes
    the state from sigmas[-1] to 0 (which evaluates to the denoiser output).
    """
    sigmas = [float(s) for s in sigmas]
    if any(b >= a for a, b in zip(sigmas, sigmas[1:])):
        raise ValueError("sigmas must be strictly decreasing")
    x = sigmas[0] * torch.randn(shape, generator=generator, dtype=dtype)
    for i in range(len(sigmas) - 1):
        s_cur, s_next = sigmas[i], sigmas[i + 1]
        d_cur = (x - denoise_fn(x, s_cur)) / s_cur
        x_next = x + (s_next - s_cur) * d_cur
        d_next = (x_next - denoise_fn(x_next, s_next)) / s_next
        x = x + (s_next - s_cur) * 0.5 * (d_cur + d_next)
    # final step to sigma = 0: Euler, no second-order correction possible
    return denoise_fn(x, sigmas[-1])


def sample_cascade(stages, schedule: NoiseScheduleEDM, cond=None, generator=None,
                   batch: int = 1, frozen: dict | None = None) -> LatentHierarchy:
    """Generate a latent hierarchy coarse -> fine.

    stages: list of StageDenoiser, fine -> coarse (stages[i] owns level i).
    Each finer stage conditions on the latents generated (or frozen) for all
    coarser levels.  frozen maps level index -> tensor to reuse instead of
    generating, which pins e.g. the structure level across variant draws.
    """
    L = len(stages)
    sigmas = karras_sigmas(schedule)
    generated = {}
    frozen = frozen or {}
    for level in range(L - 1, -1, -1):
        stage = stages[level]
        if level in frozen:
            z = frozen[level]
            if z.dim() == 2:
                z = z.unsqueeze(0)
            if z.shape[0] == 1 and batch > 1:
                z = z.expand(batch, -1, -1)
            generated[level] = z
            continue
        coarser = [generated[j] for j in range(L - 1, level, -1)]

        def denoise_fn(x, sigma, _stage=stage, _coarser=coarser):
            return _stage(x, sigma, coarser=_coarser, cond=cond)

        shape = (batch, stage.config.latent_count, stage.config.latent_channels)
        with torch.no_grad():
            generated[level] = heun_sample(denoise_fn, shape, sigmas, generator=generator)
    return LatentHierarchy([generated[i] for i in range(L)])
