"""Motion encoder: driving image -> 1D latent motion descriptor -> tokens.

The encoder is an hourglass conv stack with self-attention at the coarser
stages, deliberately much smaller than the reference network so the 1D
bottleneck acts as a low-pass filter on motion, not appearance. The RTS
fusion branch and the token adapter start as identity / pure-linear maps.
"""

from __future__ import annotations

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .config import ModelConfig
from .data import RTSTriplet
from .denoiser import SelfAttentionBlock, _norm


class MotionEncoder(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        ch = cfg.motion_channels
        self.conv_in = nn.Conv2d(cfg.in_channels, ch[0], 3, padding=1)
        stages = []
        res = cfg.image_size
        prev = ch[0]
        for c in ch:
            stage = [nn.Conv2d(prev, c, 3, stride=2, padding=1), _norm(c), nn.SiLU()]
            stages.append(nn.Sequential(*stage))
            prev = c
            res //= 2
        self.stages = nn.ModuleList(stages)
        self.attn = nn.ModuleDict()
        r = cfg.image_size
        for i, c in enumerate(ch):
            r //= 2
            if r in cfg.motion_attn_resolutions:
                self.attn[str(i)] = SelfAttentionBlock(c, cfg.head_dim)
        self.final_res = res
        flat = ch[-1] * res * res
        self.mlp = nn.Sequential(
            nn.Linear(flat, cfg.motion_mlp_hidden),
            nn.SiLU(),
            nn.Linear(cfg.motion_mlp_hidden, cfg.d_mot),
        )

    def forward(self, img: torch.Tensor) -> torch.Tensor:
        cfg = self.cfg
        if img.shape[-3:] != (cfg.in_channels, cfg.image_size, cfg.image_size):
            raise ValueError(f"image shape {tuple(img.shape)} does not match config")
        h = self.conv_in(img)
        for i, stage in enumerate(self.stages):
            h = stage(h)
            if str(i) in self.attn:
                h = self.attn[str(i)](h)
        return self.mlp(h.flatten(1))


class RtsFusion(nn.Module):
    """Fuse the translation/scale triplet into the motion latent.

    out = f_mot + proj(concat(mlp(rts), f_mot)); proj is zero-initialized,
    so at stage-2 start the fusion is the identity on f_mot.
    """

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        h = cfg.rts_hidden
        self.mlp = nn.Sequential(nn.Linear(3, h), nn.SiLU(), nn.Linear(h, h), nn.SiLU())
        self.proj = nn.Linear(h + cfg.d_mot, cfg.d_mot)
        nn.init.zeros_(self.proj.weight)
        nn.init.zeros_(self.proj.bias)

    def forward(self, f_mot: torch.Tensor, rts: torch.Tensor) -> torch.Tensor:
        if rts.shape[-1] != 3:
            raise ValueError("rts must have 3 components")
        h = self.mlp(rts)
        return f_mot + self.proj(torch.cat([h, f_mot], dim=-1))


class TokenAdapter(nn.Module):
    """Linear map from the fused motion latent to M cross-attention tokens."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.m = cfg.m_tokens
        self.d_attn = cfg.d_attn
        self.proj = nn.Linear(cfg.d_mot, cfg.m_tokens * cfg.d_attn, bias=False)

    def forward(self, f_mot: torch.Tensor) -> torch.Tensor:
        return self.proj(f_mot).view(-1, self.m, self.d_attn)


def rts_tensor(rts: RTSTriplet | np.ndarray | torch.Tensor, dtype=torch.float32) -> torch.Tensor:
    if isinstance(rts, RTSTriplet):
        rts = rts.as_vector()
    return torch.as_tensor(np.asarray(rts), dtype=dtype)
