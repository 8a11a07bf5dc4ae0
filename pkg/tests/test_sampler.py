import numpy as np
import pytest
import torch

from motiondiff.data import FaceBox, InvalidInputError
from motiondiff.models import ModelBundle
from motiondiff.sampler import (
    AnimationRequest,
    SamplerConfig,
    animate,
    cfg_compose,
    ddim_sample_loop,
    ddim_timesteps,
    interpolate_motion,
    window_blend_weights,
    window_layout,
)
from motiondiff.schedule import NoiseSchedule


# Eq.-style guidance arithmetic (acceptance criterion 1).
def test_cfg_compose_w_zero_identity():
    c = torch.tensor([1.0, -2.0, 3.0])
    u = torch.tensor([9.0, 9.0, 9.0])
    assert torch.allclose(cfg_compose(c, u, 0.0), c, atol=1e-6)


def test_cfg_compose_composite_case():
    # [DERIVED: (1 + 3.8) * 2 - 3.8 * 1 = 5.8]
    out = cfg_compose(torch.tensor([2.0]), torch.tensor([1.0]), 3.8)
    assert float(out) == pytest.approx(5.8, abs=1e-6)


def test_cfg_compose_shape_check():
    with pytest.raises(InvalidInputError):
        cfg_compose(torch.zeros(2), torch.zeros(3), 1.0)


def test_ddim_timesteps_properties():
    ts = ddim_timesteps(1000, 25)
    assert len(ts) == 25
    assert ts[0] == 999 and ts[-1] == 0
    assert all(a > b for a, b in zip(ts, ts[1:]))
    assert ddim_timesteps(10, 10) == list(range(9, -1, -1))


def test_ddim_deterministic_eta_zero():
    schedule = NoiseSchedule(100, 1e-4, 0.02)
    cfg = SamplerConfig(ddim_steps=10, eta=0.0, clip_x0=False)

    def eps_fn(z, t):
        return 0.1 * z

    outs = []
    for _ in range(2):
        g = torch.Generator().manual_seed(3)
        outs.append(ddim_sample_loop(eps_fn, (1, 2, 4, 4), schedule, cfg, g))
    assert torch.equal(outs[0], outs[1])


def test_ddim_single_step_oracle():
    """One DDIM step with an eps=0 predictor: x0 = z / sqrt(ab_t), the
    direction term vanishes, so z_out = x0. ddim_steps=1 visits only t=0.
    [DERIVED: hand evaluation of the update rule]"""
    schedule = NoiseSchedule(100, 1e-4, 0.02)
    cfg = SamplerConfig(ddim_steps=1, eta=0.0, clip_x0=False)
    g = torch.Generator().manual_seed(0)
    z0 = torch.randn((1, 1, 2, 2), generator=torch.Generator().manual_seed(0))
    out = ddim_sample_loop(lambda z, t: torch.zeros_like(z), (1, 1, 2, 2), schedule, cfg, g)
    assert ddim_timesteps(100, 1) == [0]
    ab_t = schedule.alpha_bar[0]
    assert torch.allclose(out, z0 / torch.sqrt(ab_t), atol=1e-5)


def test_sampler_config_validation():
    with pytest.raises(InvalidInputError):
        SamplerConfig(ddim_steps=0).validate(1000)
    with pytest.raises(InvalidInputError):
        SamplerConfig(cfg_scale=-1).validate(1000)
    with pytest.raises(InvalidInputError):
        SamplerConfig(stride=30, window=24).validate(1000)


def test_window_layout_cases():
    # [TRIVIAL] short sequence -> single window
    assert window_layout(10, 24, 12) == [0]
    # [DERIVED] 48 frames, window 24, stride 12 -> 3 windows
    assert window_layout(48, 24, 12) == [0, 12, 24]
    # trailing partial coverage adds a final flush window
    assert window_layout(50, 24, 12) == [0, 12, 24, 26]


def test_window_blend_weights_sum_to_one():
    w = window_blend_weights(48, 24, 12)
    assert w.shape == (3, 48)
    assert np.allclose(w.sum(axis=0), 1.0)
    assert (w >= 0).all()
    # single window degenerates to all-ones
    w1 = window_blend_weights(10, 24, 12)
    assert np.allclose(w1, 1.0)


def test_interpolate_motion_endpoints():
    f_a = torch.zeros(1, 8)
    f_b = torch.full((1, 8), 2.0)
    out = interpolate_motion(f_a, f_b, [0.0, 0.5, 1.0])
    assert torch.equal(out[0], f_a)
    assert torch.allclose(out[1], torch.full((1, 8), 1.0))
    assert torch.equal(out[2], f_b)


@pytest.fixture(scope="module")
def tiny_bundle(tiny_cfg):
    bundle = ModelBundle(tiny_cfg, seed=0)
    bundle.eval()
    return bundle


@pytest.fixture(scope="module")
def request_2f(tiny_dataset):
    clip = tiny_dataset.clips[0]
    return AnimationRequest(
        reference=clip.frame(0),
        ref_box=clip.boxes[0],
        driving=[clip.frame(1), clip.frame(2)],
        driving_boxes=clip.boxes[1:3],
        seed=11,
    )


def test_animate_shapes_and_range(tiny_bundle, request_2f):
    frames = animate(tiny_bundle, request_2f, SamplerConfig(ddim_steps=3))
    assert len(frames) == 2
    for f in frames:
        assert f.shape == (32, 32, 3)
        assert f.dtype == np.float32
        assert f.min() >= 0.0 and f.max() <= 1.0


def test_animate_deterministic(tiny_bundle, request_2f):
    cfg = SamplerConfig(ddim_steps=3)
    a = animate(tiny_bundle, request_2f, cfg)
    b = animate(tiny_bundle, request_2f, cfg)
    assert all(np.array_equal(x, y) for x, y in zip(a, b))


def test_animate_seed_matters(tiny_bundle, request_2f, tiny_dataset):
    clip = tiny_dataset.clips[0]
    other = AnimationRequest(
        reference=clip.frame(0), ref_box=clip.boxes[0],
        driving=request_2f.driving, driving_boxes=request_2f.driving_boxes,
        seed=12,
    )
    cfg = SamplerConfig(ddim_steps=3)
    a = animate(tiny_bundle, request_2f, cfg)
    b = animate(tiny_bundle, other, cfg)
    assert any(not np.array_equal(x, y) for x, y in zip(a, b))


def test_animate_validates_request(tiny_bundle, tiny_dataset):
    clip = tiny_dataset.clips[0]
    bad = AnimationRequest(
        reference=clip.frame(0), ref_box=clip.boxes[0],
        driving=[], driving_boxes=[],
    )
    with pytest.raises(InvalidInputError):
        animate(tiny_bundle, bad, SamplerConfig(ddim_steps=2))
