import statistics

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from setshape.autoencoder import LatentHierarchy
from setshape.diffusion import (
    ConditionStack,
    DenoiserConfig,
    NoiseScheduleEDM,
    StageDenoiser,
    add_noise,
    coarser_latents,
    denoiser_configs_for_hierarchy,
    denoiser_loss,
    heun_sample,
    karras_sigmas,
    preconditioning,
    sample_cascade,
    sample_training_sigmas,
    train_denoiser_step,
)
from setshape.errors import ConfigError
from setshape.nets import count_attention_pairs


# ------------------------------------------------------------------ schedule

def test_sigma_ladder_endpoints():
    sched = NoiseScheduleEDM(steps=32)
    sig = karras_sigmas(sched, dtype=torch.float64)
    assert sig[0].item() == pytest.approx(80.0, abs=1e-9)
    assert sig[-1].item() == pytest.approx(0.002, abs=1e-12)
    assert (sig[1:] < sig[:-1]).all()


def test_sigma_ladder_midpoint_closed_form():
    sched = NoiseScheduleEDM(sigma_max=80.0, sigma_min=0.002, rho=7.0, steps=3)
    sig = karras_sigmas(sched, dtype=torch.float64)
    mid = ((80.0 ** (1 / 7) + 0.002 ** (1 / 7)) / 2.0) ** 7
    assert sig[1].item() == pytest.approx(mid, rel=1e-12)


def test_rho_one_is_arithmetic():
    sched = NoiseScheduleEDM(sigma_max=10.0, sigma_min=1.0, rho=1.0, steps=10)
    sig = karras_sigmas(sched, dtype=torch.float64)
    diffs = (sig[1:] - sig[:-1]).numpy()
    assert np.allclose(diffs, diffs[0], atol=1e-9)


def test_schedule_validation():
    with pytest.raises(ConfigError):
        NoiseScheduleEDM(sigma_min=1.0, sigma_max=0.5)
    with pytest.raises(ConfigError):
        karras_sigmas(NoiseScheduleEDM(steps=1))


@settings(max_examples=25, deadline=None)
@given(
    smin=st.floats(1e-3, 0.5),
    ratio=st.floats(2.0, 1e4),
    rho=st.floats(0.5, 10.0),
    steps=st.integers(2, 64),
)
def test_schedule_monotone_property(smin, ratio, rho, steps):
    sched = NoiseScheduleEDM(sigma_min=smin, sigma_max=smin * ratio, rho=rho, steps=steps)
    sig = karras_sigmas(sched, dtype=torch.float64)
    assert (sig[1:] < sig[:-1]).all()
    # the x -> (x^(1/rho))^rho round trip costs a few ulps at extreme rho
    assert sig[0].item() == pytest.approx(sched.sigma_max, rel=1e-7)
    assert sig[-1].item() == pytest.approx(sched.sigma_min, rel=1e-7)


# ------------------------------------------------------------ preconditioning

def test_cskip_half_at_sigma_data():
    c_skip, _, _, _ = preconditioning(torch.tensor(1.0), sigma_data=1.0)
    assert c_skip.item() == pytest.approx(0.5)
    c_skip, _, _, _ = preconditioning(torch.tensor(0.7), sigma_data=0.7)
    assert c_skip.item() == pytest.approx(0.5)


def test_preconditioning_identities_across_schedule():
    sched = NoiseScheduleEDM(steps=100)
    sig = karras_sigmas(sched, dtype=torch.float64)
    sd = sched.sigma_data
    c_skip, c_out, c_in, c_noise = preconditioning(sig, sd)
    assert torch.allclose(c_in, 1.0 / (sig**2 + sd**2).sqrt(), rtol=1e-12)
    assert torch.allclose(c_skip, sd**2 * c_in**2, rtol=1e-12)
    assert torch.allclose(c_out, sig * sd * c_in, rtol=1e-12)
    # variance-preserving split between skip and output paths
    assert torch.allclose(c_skip + c_out**2 / sd**2, torch.ones_like(sig), rtol=1e-12)
    assert torch.allclose(c_noise, sig.log() / 4.0, rtol=1e-12)


# ----------------------------------------------------------------- add noise

def test_add_noise_zero_sigma_is_identity():
    z = torch.randn(2, 4, 8)
    assert torch.equal(add_noise(z, 0.0), z)


def test_add_noise_variance():
    z = torch.zeros(100_000)
    g = torch.Generator().manual_seed(0)
    noised = add_noise(z, 0.7, generator=g)
    assert abs(noised.var().item() - 0.49) / 0.49 < 0.05


def test_add_noise_reproducible():
    z = torch.randn(3, 5)
    a = add_noise(z, 1.5, generator=torch.Generator().manual_seed(9))
    b = add_noise(z, 1.5, generator=torch.Generator().manual_seed(9))
    assert torch.equal(a, b)


def test_add_noise_rejects_negative_sigma():
    with pytest.raises(ValueError):
        add_noise(torch.zeros(3), -1.0)


def test_training_sigma_distribution():
    g = torch.Generator().manual_seed(0)
    sig = sample_training_sigmas(200_000, generator=g, p_mean=-1.2, p_std=1.2)
    logs = sig.log()
    assert abs(logs.mean().item() + 1.2) < 0.02
    assert abs(logs.std().item() - 1.2) < 0.02


# ----------------------------------------------------------- condition stack

def test_coarsest_stage_is_passthrough():
    stack = ConditionStack(width=16, heads=2, coarser_channels=())
    x = torch.randn(2, 4, 16)
    assert torch.equal(stack(x, []), x)


def test_stage_two_uses_exactly_one_cross_attention():
    stack = ConditionStack(width=16, heads=2, coarser_channels=(8,))
    tokens = torch.randn(1, 6, 16)
    coarse = torch.randn(1, 3, 8)
    with count_attention_pairs() as counts:
        stack(tokens, [coarse])
    assert counts.ca_pairs == 6 * 3
    assert counts.sa_pairs == 0


def test_condition_stack_kv_permutation_invariant():
    torch.manual_seed(0)
    stack = ConditionStack(width=16, heads=2, coarser_channels=(8,))
    tokens = torch.randn(1, 6, 16)
    coarse = torch.randn(1, 5, 8)
    perm = torch.randperm(5)
    a = stack(tokens, [coarse])
    b = stack(tokens, [coarse[:, perm]])
    assert (a - b).abs().max() < 1e-5


def test_condition_stack_level_count_checked():
    stack = ConditionStack(width=16, heads=2, coarser_channels=(8, 8))
    with pytest.raises(ConfigError):
        stack(torch.randn(1, 4, 16), [torch.randn(1, 2, 8)])


# ----------------------------------------------------------------- denoiser

def make_stage(seed=0, **kw):
    cfg = DenoiserConfig(level=0, latent_count=6, latent_channels=4,
                         width=32, blocks=2, heads=2, **kw)
    torch.manual_seed(seed)
    return StageDenoiser(cfg)


def test_denoiser_sigma_to_zero_identity():
    stage = make_stage()
    noisy = torch.randn(2, 6, 4)
    with torch.no_grad():
        out = stage(noisy, 1e-6)
    assert (out - noisy).abs().max() < 1e-6


def test_denoiser_zero_network_is_pure_skip():
    stage = make_stage()  # head is zero-initialized, so net output is 0
    noisy = torch.randn(1, 6, 4)
    sigma = 0.8
    c_skip, _, _, _ = preconditioning(torch.tensor(sigma), stage.sigma_data)
    with torch.no_grad():
        out = stage(noisy, sigma)
    assert torch.allclose(out, c_skip * noisy, atol=1e-7)


def test_denoiser_shape_validation():
    stage = make_stage()
    with pytest.raises(RuntimeError):
        stage(torch.randn(1, 6, 7), 1.0)


def test_loss_at_init_is_unit():
    # with a zero network, EDM weighting makes the expected per-element loss
    # exactly 1 on unit-variance data, independent of sigma
    g = torch.Generator().manual_seed(0)
    stage = make_stage()
    z = torch.randn(64, 6, 4, generator=g)
    z = (z - z.mean(-1, keepdim=True)) / z.std(-1, unbiased=False, keepdim=True)
    loss, record = denoiser_loss(stage, z, [], generator=g)
    assert abs(record.weighted - 1.0) < 0.1


def test_oracle_denoiser_gives_zero_loss():
    g = torch.Generator().manual_seed(0)
    clean = torch.randn(4, 6, 4, generator=g)

    class Oracle:
        sigma_data = 1.0

        def __call__(self, noisy, sigma, coarser=(), cond=None):
            return clean

    sig = torch.full((4,), 0.002)
    loss, record = denoiser_loss(Oracle(), clean, [], generator=g, sigmas=sig)
    assert record.weighted == 0.0
    assert record.raw_mse == 0.0


def test_train_denoiser_step_deterministic():
    h = LatentHierarchy([torch.randn(8, 6, 4), torch.randn(8, 3, 4)])

    def run():
        cfg = DenoiserConfig(level=0, latent_count=6, latent_channels=4,
                             coarser_channels=(4,), width=16, blocks=1, heads=2)
        torch.manual_seed(0)
        stage = StageDenoiser(cfg)
        opt = torch.optim.AdamW(stage.parameters(), lr=1e-3)
        losses = []
        for k in range(3):
            gen = torch.Generator().manual_seed(k)
            losses.append(train_denoiser_step(stage, opt, h, 0, generator=gen).weighted)
        return losses

    assert run() == run()


def test_coarser_latents_order():
    h = LatentHierarchy([torch.zeros(1, 16, 2), torch.zeros(1, 8, 2), torch.zeros(1, 4, 2)])
    got = coarser_latents(h, 0)
    assert [z.shape[1] for z in got] == [4, 8]  # coarse -> fine
    assert coarser_latents(h, 2) == []


# ------------------------------------------------------------------ sampler

def test_degenerate_schedule_returns_one_shot_prediction():
    target = torch.randn(1, 4, 2, generator=torch.Generator().manual_seed(0))

    def denoise(x, sigma):
        return target.expand_as(x)

    out = heun_sample(denoise, (3, 4, 2), [1e-8], generator=torch.Generator().manual_seed(1))
    assert torch.equal(out, target.expand(3, 4, 2))


def test_sampler_requires_decreasing_sigmas():
    with pytest.raises(ValueError):
        heun_sample(lambda x, s: x, (1, 2, 2), [1.0, 1.0])


def test_point_mass_oracle_is_recovered_exactly():
    target = torch.randn(1, 4, 2, generator=torch.Generator().manual_seed(2))
    sig = karras_sigmas(NoiseScheduleEDM(steps=16))
    out = heun_sample(lambda x, s: target.expand_as(x), (2, 4, 2), sig,
                      generator=torch.Generator().manual_seed(3))
    assert (out - target).abs().max() == 0.0


def test_gaussian_prior_oracle_statistics():
    # for data ~ N(0, I) the ideal denoiser is x / (1 + sigma^2); samples
    # from the flow must come out ~ standard normal
    sig = karras_sigmas(NoiseScheduleEDM(steps=32))
    out = heun_sample(lambda x, s: x / (1 + s**2), (2000, 4, 4), sig,
                      generator=torch.Generator().manual_seed(4))
    assert abs(out.mean().item()) < 0.02
    assert abs(out.std().item() - 1.0) < 0.05


def test_cascade_stage_order_and_conditioning_causality():
    level_shapes = [(8, 4), (4, 4), (2, 4)]
    configs = denoiser_configs_for_hierarchy(level_shapes, width=16, blocks=1, heads=2)

    def build(seed):
        torch.manual_seed(seed)
        stages = [StageDenoiser(c) for c in configs]
        for s in stages:  # the head is zero-initialized; give each net a voice
            torch.nn.init.normal_(s.head.weight, std=0.1)
        return stages

    stages_a = build(0)
    # same coarse stage, different fine stages: the coarse output can't move
    stages_b = build(123)[:2] + [stages_a[2]]
    sched = NoiseScheduleEDM(steps=4)
    ha = sample_cascade(stages_a, sched, generator=torch.Generator().manual_seed(7))
    hb = sample_cascade(stages_b, sched, generator=torch.Generator().manual_seed(7))
    assert torch.equal(ha[2], hb[2])
    assert not torch.equal(ha[0], hb[0])


def test_cascade_frozen_levels():
    level_shapes = [(8, 4), (4, 4)]
    configs = denoiser_configs_for_hierarchy(level_shapes, width=16, blocks=1, heads=2)
    torch.manual_seed(0)
    stages = [StageDenoiser(c) for c in configs]
    frozen_coarse = torch.randn(1, 4, 4)
    sched = NoiseScheduleEDM(steps=4)
    out = sample_cascade(stages, sched, generator=torch.Generator().manual_seed(0),
                         frozen={1: frozen_coarse}, batch=2)
    assert torch.equal(out[1], frozen_coarse.expand(2, 4, 4))


# --------------------------------------------------- trained toy (two modes)
# the trained stages come from the session-scoped toy_cascade fixture in
# conftest, shared with the acceptance gate


def _nearest_mode(hierarchy, modes):
    flat = torch.cat([z.flatten() for z in hierarchy])
    dists = [
        ((flat - torch.cat([z.flatten() for z in m])) ** 2).mean().sqrt().item()
        for m in modes
    ]
    k = int(dists[1] < dists[0])
    return k, dists[k]


def test_toy_cascade_recovers_both_modes(toy_cascade):
    stages, modes = toy_cascade
    sched = NoiseScheduleEDM(steps=32)
    errs = {0: [], 1: []}
    with torch.no_grad():
        for k in range(32):
            gen = torch.Generator().manual_seed(10_000 + k)
            h = sample_cascade(stages, sched, generator=gen)
            mode, err = _nearest_mode(h, modes)
            errs[mode].append(err)
    assert len(errs[0]) > 0 and len(errs[1]) > 0
    assert statistics.mean(errs[0]) < 0.1
    assert statistics.mean(errs[1]) < 0.1


def test_toy_cascade_step_doubling_converges(toy_cascade):
    stages, _ = toy_cascade
    outs = {}
    with torch.no_grad():
        for steps in (8, 16, 32):
            sched = NoiseScheduleEDM(steps=steps)
            gen = torch.Generator().manual_seed(555)
            h = sample_cascade(stages, sched, generator=gen)
            outs[steps] = torch.cat([z.flatten() for z in h])
    d_8_16 = (outs[8] - outs[16]).norm().item()
    d_16_32 = (outs[16] - outs[32]).norm().item()
    assert d_16_32 < d_8_16


def test_toy_cascade_samples_approximately_standardized(toy_cascade):
    stages, _ = toy_cascade
    sched = NoiseScheduleEDM(steps=32)
    with torch.no_grad():
        gen = torch.Generator().manual_seed(777)
        h = sample_cascade(stages, sched, generator=gen, batch=8)
    for z in h:
        mean = z.mean(dim=-1)
        var = z.var(dim=-1, unbiased=False)
        assert mean.abs().mean().item() < 0.2
        assert 0.7 < var.mean().item() < 1.3


def test_trained_denoiser_sigma_to_zero_identity(toy_cascade):
    stages, modes = toy_cascade
    noisy = modes[0][2] + 0.3 * torch.randn(
        modes[0][2].shape, generator=torch.Generator().manual_seed(1)
    )
    with torch.no_grad():
        out = stages[2](noisy, 1e-7)
    assert (out - noisy).abs().max() < 1e-6
