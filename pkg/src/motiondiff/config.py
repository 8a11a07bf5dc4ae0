"""Model and training configuration, YAML-loadable, with a stable hash."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field, asdict
from pathlib import Path

import yaml


@dataclass
class ModelConfig:
    image_size: int = 64
    in_channels: int = 3

    # denoiser / reference net
    channels: tuple[int, ...] = (32, 64, 96)
    mid_channels: int = 128
    attn_resolutions: tuple[int, ...] = (16, 8)
    temb_dim: int = 128
    head_dim: int = 32

    # motion encoder
    d_mot: int = 512
    motion_channels: tuple[int, ...] = (16, 32, 48, 64)
    motion_attn_resolutions: tuple[int, ...] = (8, 4)
    motion_mlp_hidden: int = 256
    rts_hidden: int = 32

    # motion tokens for cross-attention
    m_tokens: int = 4
    d_attn: int = 128

    # GAN head
    d_app: int = 256
    gen_channels: tuple[int, ...] = (128, 96, 64, 48, 32)
    style_dim: int = 128
    disc_channels: tuple[int, ...] = (32, 64, 96)
    perceptual_channels: tuple[int, ...] = (16, 32, 64)

    # temporal
    temporal_window: int = 24

    # DDPM schedule
    t_steps: int = 1000
    beta_start: float = 1e-4
    beta_end: float = 0.02

    def __post_init__(self):
        self.channels = tuple(self.channels)
        self.attn_resolutions = tuple(self.attn_resolutions)
        self.motion_channels = tuple(self.motion_channels)
        self.motion_attn_resolutions = tuple(self.motion_attn_resolutions)
        self.gen_channels = tuple(self.gen_channels)
        self.disc_channels = tuple(self.disc_channels)
        self.perceptual_channels = tuple(self.perceptual_channels)
        if self.d_mot <= 0 or self.m_tokens < 1:
            raise ValueError("d_mot must be positive and m_tokens >= 1")

    def attention_sites(self) -> list[tuple[str, int, int]]:
        """(name, resolution, channels) for every denoiser self-attention site.

        Order matches forward-pass order: down path, mid, up path. The
        reference network produces one feature map per site.
        """
        sites = []
        res = self.image_size
        for i, ch in enumerate(self.channels):
            if res in self.attn_resolutions:
                sites.append((f"down{i}", res, ch))
            res //= 2
        if res in self.attn_resolutions:
            sites.append(("mid", res, self.mid_channels))
        for i in reversed(range(len(self.channels))):
            res *= 2
            if res in self.attn_resolutions:
                sites.append((f"up{i}", res, self.channels[i]))
        return sites


@dataclass
class StageConfig:
    stage: int = 1
    steps: int = 2000
    batch_size: int = 4
    lr: float = 2e-4
    betas: tuple[float, float] = (0.9, 0.999)
    weight_decay: float = 1e-2
    mask_ratio: float = 0.0
    gan: bool = False
    gan_weight: float = 1.0
    # lr multiplier for the motion path (encoder, rts fusion, token adapter,
    # motion cross-attention): the denoiser only slowly learns to exploit
    # motion tokens at short step budgets, so stage 2 boosts that pathway
    motion_lr_scale: float = 1.0
    # fraction of timesteps drawn from t_band instead of the full range.
    # The band targets the noise levels where the sampler commits to
    # identity, placement and coarse expression: below it the noisy latent
    # already reveals them (conditioning is redundant), above it alpha_bar
    # is so small that conditioning cannot improve the eps prediction.
    # Their absolute eps-loss (and so their gradient share under uniform t)
    # is small, so short runs oversample the band or the denoiser never
    # learns to consult its conditioning where sampling needs it.
    t_band: tuple[int, int] = (300, 750)
    t_band_frac: float = 0.0
    seq_len: int = 8  # temporal window length during stage 3
    log_every: int = 50

    def __post_init__(self):
        self.betas = tuple(self.betas)
        self.t_band = tuple(self.t_band)
        if not (0.0 <= self.t_band_frac <= 1.0):
            raise ValueError("t_band_frac outside [0, 1]")
        if not (0 <= self.t_band[0] < self.t_band[1]):
            raise ValueError(f"invalid t_band {self.t_band}")
        if self.stage not in (1, 2, 3):
            raise ValueError(f"stage must be 1, 2 or 3, got {self.stage}")
        if not (0.0 <= self.mask_ratio <= 1.0):
            raise ValueError("mask_ratio outside [0, 1]")
        if self.stage >= 2 and not (0.2 <= self.mask_ratio <= 0.5):
            import warnings

            warnings.warn(
                f"mask_ratio {self.mask_ratio} outside the supported "
                "training band [0.2, 0.5]",
                stacklevel=2,
            )


def default_stage_configs() -> dict[int, StageConfig]:
    """Desk-scale three-stage schedule."""
    return {
        1: StageConfig(stage=1, steps=2000, batch_size=8, mask_ratio=0.0, gan=False,
                       t_band_frac=0.65),
        2: StageConfig(stage=2, steps=4000, batch_size=8, mask_ratio=0.3, gan=True,
                       t_band_frac=0.65, motion_lr_scale=10.0),
        3: StageConfig(stage=3, steps=1000, mask_ratio=0.3, gan=False, batch_size=1),
    }


def config_hash(cfg: ModelConfig) -> str:
    payload = json.dumps(asdict(cfg), sort_keys=True)
    return hashlib.sha256(payload.encode()).hexdigest()[:16]


def load_config(path: Path) -> tuple[ModelConfig, dict[int, StageConfig]]:
    """Read a YAML file with optional ``model:`` and ``stages:`` sections."""
    raw = yaml.safe_load(Path(path).read_text()) or {}
    model = ModelConfig(**raw.get("model", {}))
    stages = default_stage_configs()
    for key, overrides in (raw.get("stages") or {}).items():
        stage = int(key)
        base = asdict(stages[stage])
        base.update(overrides)
        base["stage"] = stage
        stages[stage] = StageConfig(**base)
    return model, stages


def save_config(path: Path, model: ModelConfig, stages: dict[int, StageConfig]) -> None:
    payload = {
        "model": asdict(model),
        "stages": {s: asdict(c) for s, c in stages.items()},
    }
    Path(path).write_text(yaml.safe_dump(payload, sort_keys=False))
