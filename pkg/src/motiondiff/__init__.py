"""Desk-scale diffusion portrait animation with a 1D latent motion descriptor.

A reference image supplies appearance through per-site feature maps joined
into the denoiser's self-attention; a compact motion latent extracted from
augmented driving frames supplies motion through cross-attention tokens.
Training runs in three stages (appearance, motion + GAN head, temporal) on
a synthetic controllable-face dataset.
"""

from .config import ModelConfig, StageConfig, default_stage_configs
from .data import ClipDataset, FaceBox, RTSTriplet, compute_f_rts, generate_dataset
from .models import ModelBundle
from .sampler import AnimationRequest, SamplerConfig, animate, interpolate_motion
from .trainer import Trainer, TrainState, load_checkpoint, save_checkpoint

__all__ = [
    "AnimationRequest",
    "ClipDataset",
    "FaceBox",
    "ModelBundle",
    "ModelConfig",
    "RTSTriplet",
    "SamplerConfig",
    "StageConfig",
    "Trainer",
    "TrainState",
    "animate",
    "compute_f_rts",
    "default_stage_configs",
    "generate_dataset",
    "interpolate_motion",
    "load_checkpoint",
    "save_checkpoint",
]

__version__ = "0.1.0"
