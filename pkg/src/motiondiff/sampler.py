"""DDIM sampling with classifier-free guidance and window-blended
long-sequence animation."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from .augment import AugmentationParams, augment_driving
from .data import BOX_DILATION, FaceBox, InvalidInputError, RTSTriplet, compute_f_rts
from .models import ModelBundle
from .reference import mask_features
from .schedule import NoiseSchedule
from .trainer import to_signed, to_tensor


@dataclass
class SamplerConfig:
    ddim_steps: int = 25
    eta: float = 0.0
    cfg_scale: float = 3.5
    window: int = 24
    stride: int = 12
    clip_x0: bool = True

    def validate(self, t_steps: int) -> None:
        if not (1 <= self.ddim_steps <= t_steps):
            raise InvalidInputError("ddim_steps outside [1, t_steps]")
        if self.cfg_scale < 0:
            raise InvalidInputError("cfg scale must be >= 0")
        if self.stride > self.window or self.stride < 1:
            raise InvalidInputError("stride must be in [1, window]")


@dataclass
class AnimationRequest:
    reference: np.ndarray
    ref_box: FaceBox
    driving: list[np.ndarray]
    driving_boxes: list[FaceBox]
    seed: int = 0

    def validate(self) -> None:
        if len(self.driving) < 1:
            raise InvalidInputError("need at least one driving frame")
        if len(self.driving) != len(self.driving_boxes):
            raise InvalidInputError("driving frames and boxes differ in length")


def cfg_compose(
    cond_eps: torch.Tensor, uncond_eps: torch.Tensor, w: float
) -> torch.Tensor:
    """(1 + w) * conditional - w * negative noise estimate."""
    if cond_eps.shape != uncond_eps.shape:
        raise InvalidInputError("CFG branch shapes differ")
    return (1.0 + w) * cond_eps - w * uncond_eps


def ddim_timesteps(t_steps: int, ddim_steps: int) -> list[int]:
    """Uniformly spaced decreasing timestep subsequence."""
    ts = np.linspace(0, t_steps - 1, ddim_steps)
    return sorted({int(round(t)) for t in ts}, reverse=True)


def ddim_sample_loop(
    eps_fn,
    shape: tuple[int, ...],
    schedule: NoiseSchedule,
    cfg: SamplerConfig,
    generator: torch.Generator,
) -> torch.Tensor:
    """Generic DDIM reverse loop; ``eps_fn(z, t)`` returns the noise estimate."""
    cfg.validate(schedule.t_steps)
    z = torch.randn(shape, generator=generator)
    steps = ddim_timesteps(schedule.t_steps, cfg.ddim_steps)
    ab = schedule.alpha_bar
    for i, t in enumerate(steps):
        eps = eps_fn(z, t)
        a_t = ab[t]
        a_prev = ab[steps[i + 1]] if i + 1 < len(steps) else torch.tensor(1.0)
        x0 = (z - torch.sqrt(1.0 - a_t) * eps) / torch.sqrt(a_t)
        if cfg.clip_x0:
            x0 = x0.clamp(-1.0, 1.0)
        sigma = (
            cfg.eta
            * torch.sqrt((1.0 - a_prev) / (1.0 - a_t))
            * torch.sqrt(1.0 - a_t / a_prev)
        )
        dir_coeff = torch.sqrt(torch.clamp(1.0 - a_prev - sigma**2, min=0.0))
        z = torch.sqrt(a_prev) * x0 + dir_coeff * eps
        if cfg.eta > 0 and i + 1 < len(steps):
            z = z + sigma * torch.randn(shape, generator=generator)
    return z


# --- animation --------------------------------------------------------------


def motion_crop(frame: np.ndarray, box: FaceBox) -> np.ndarray:
    """Face-centered crop matching the training-time motion input geometry."""
    params = AugmentationParams(crop_box=box.dilated(BOX_DILATION).clamped())
    return augment_driving(frame, box, params)


def motion_tokens_for(
    bundle: ModelBundle, frame: np.ndarray, box: FaceBox, rts: RTSTriplet
) -> torch.Tensor:
    img = to_signed(to_tensor(motion_crop(frame, box))[None])
    rts_t = torch.from_numpy(rts.as_vector())[None]
    return bundle.motion_tokens(img, rts_t)


def negative_branch_inputs(
    bundle: ModelBundle, reference: np.ndarray, ref_box: FaceBox
) -> tuple[dict[str, torch.Tensor], torch.Tensor]:
    """Fully masked appearance features plus reference-derived motion tokens."""
    ref_t = to_signed(to_tensor(reference)[None])
    feats = bundle.refnet(ref_t)
    neg_feats = mask_features(feats, 1.0, bundle.refnet.mask_embeddings, seed=0)
    tokens = motion_tokens_for(bundle, reference, ref_box, RTSTriplet.identity())
    return neg_feats, tokens


def window_layout(total: int, window: int, stride: int) -> list[int]:
    """Window start indices covering [0, total)."""
    if total <= window:
        return [0]
    starts = list(range(0, total - window + 1, stride))
    if starts[-1] + window < total:
        starts.append(total - window)
    return starts


def window_blend_weights(total: int, window: int, stride: int) -> np.ndarray:
    """Per-(window, frame) cross-fade weights; columns sum to 1 on covered frames."""
    starts = window_layout(total, window, stride)
    w = np.zeros((len(starts), total))
    for k, a in enumerate(starts):
        span = min(window, total - a)
        ramp = np.minimum(np.arange(1, span + 1), np.arange(span, 0, -1)).astype(float)
        w[k, a : a + span] = ramp
    return w / w.sum(axis=0, keepdims=True)


@torch.no_grad()
def animate(
    bundle: ModelBundle, request: AnimationRequest, cfg: SamplerConfig | None = None
) -> list[np.ndarray]:
    """Generate one frame per driving frame, conditioned on the reference.

    Reference features are extracted exactly once per request. Deterministic
    for eta=0 given the request seed.
    """
    cfg = cfg or SamplerConfig()
    request.validate()
    b = bundle
    schedule = b.denoiser.schedule
    cfg.validate(schedule.t_steps)

    ref_t = to_signed(to_tensor(request.reference)[None])
    cond_feats = b.refnet(ref_t)  # single extraction, reused for all frames
    neg_feats = mask_features(cond_feats, 1.0, b.refnet.mask_embeddings, seed=0)
    neg_tokens_1 = motion_tokens_for(
        b, request.reference, request.ref_box, RTSTriplet.identity()
    )

    tokens = torch.cat(
        [
            motion_tokens_for(
                b, frame, box, compute_f_rts(request.ref_box, box)
            )
            for frame, box in zip(request.driving, request.driving_boxes)
        ]
    )
    return render_motion(
        b, cond_feats, neg_feats, neg_tokens_1, tokens, cfg, request.seed
    )


@torch.no_grad()
def render_motion(
    bundle: ModelBundle,
    cond_feats: dict[str, torch.Tensor],
    neg_feats: dict[str, torch.Tensor],
    neg_tokens_1: torch.Tensor,
    tokens: torch.Tensor,
    cfg: SamplerConfig,
    seed: int,
) -> list[np.ndarray]:
    """Window-blended DDIM rendering from per-frame motion token batches."""
    b = bundle
    schedule = b.denoiser.schedule
    cfg.validate(schedule.t_steps)
    total = tokens.shape[0]
    size = b.cfg.image_size
    gen = torch.Generator().manual_seed(seed)
    z = torch.randn((total, b.cfg.in_channels, size, size), generator=gen)
    if total < 1:
        raise InvalidInputError("need at least one frame of motion tokens")

    starts = window_layout(total, cfg.window, cfg.stride)
    blend = torch.from_numpy(window_blend_weights(total, cfg.window, cfg.stride)).float()
    steps = ddim_timesteps(schedule.t_steps, cfg.ddim_steps)
    ab = schedule.alpha_bar

    def branch_eps(z_win, t, feats, toks, frames):
        return b.denoiser(z_win, torch.tensor(t), ref_feats=feats, motion=toks, frames=frames)

    for i, t in enumerate(steps):
        eps_full = torch.zeros_like(z)
        for k, a in enumerate(starts):
            span = min(cfg.window, total - a)
            z_win = z[a : a + span]
            toks = tokens[a : a + span]
            eps = branch_eps(z_win, t, cond_feats, toks, span)
            if cfg.cfg_scale > 0:
                neg_toks = neg_tokens_1.expand(span, -1, -1)
                eps_u = branch_eps(z_win, t, neg_feats, neg_toks, span)
                eps = cfg_compose(eps, eps_u, cfg.cfg_scale)
            eps_full[a : a + span] += eps * blend[k, a : a + span, None, None, None]

        a_t = ab[t]
        a_prev = ab[steps[i + 1]] if i + 1 < len(steps) else torch.tensor(1.0)
        x0 = (z - torch.sqrt(1.0 - a_t) * eps_full) / torch.sqrt(a_t)
        if cfg.clip_x0:
            x0 = x0.clamp(-1.0, 1.0)
        sigma = (
            cfg.eta
            * torch.sqrt((1.0 - a_prev) / (1.0 - a_t))
            * torch.sqrt(1.0 - a_t / a_prev)
        )
        dir_coeff = torch.sqrt(torch.clamp(1.0 - a_prev - sigma**2, min=0.0))
        z = torch.sqrt(a_prev) * x0 + dir_coeff * eps_full
        if cfg.eta > 0 and i + 1 < len(steps):
            z = z + sigma * torch.randn(z.shape, generator=gen)

    frames_out = ((z.clamp(-1, 1) + 1.0) / 2.0).permute(0, 2, 3, 1).numpy()
    return [np.ascontiguousarray(f, dtype=np.float32) for f in frames_out]


def interpolate_motion(
    f_a: torch.Tensor, f_b: torch.Tensor, alphas: list[float]
) -> list[torch.Tensor]:
    """Linear interpolation between two motion latents."""
    return [(1.0 - a) * f_a + a * f_b for a in alphas]
