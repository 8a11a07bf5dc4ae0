"""Denoising UNet backbone.

Self-attention blocks take the (masked) reference feature map of the same
site as extra keys/values. A motion cross-attention layer with a
zero-initialized output projection follows each attention block, and a
zero-initialized temporal attention couples the frames of a window. Both
zero-inits guarantee that a freshly extended model reproduces the previous
training stage bit for bit.
"""

from __future__ import annotations

import math

import torch
import torch.nn as nn
import torch.nn.functional as F

from .config import ModelConfig
from .schedule import NoiseSchedule


def timestep_embedding(t: torch.Tensor, dim: int) -> torch.Tensor:
    """Standard sinusoidal embedding."""
    half = dim // 2
    freqs = torch.exp(
        -math.log(10000.0) * torch.arange(half, dtype=torch.float64) / half
    ).to(device=t.device, dtype=torch.float32)
    args = t.float()[:, None] * freqs[None, :]
    return torch.cat([torch.cos(args), torch.sin(args)], dim=-1)


def _norm(ch: int) -> nn.GroupNorm:
    return nn.GroupNorm(8, ch)


class ResBlock(nn.Module):
    """GroupNorm/SiLU conv block with scale-shift timestep modulation."""

    def __init__(self, in_ch: int, out_ch: int, temb_dim: int):
        super().__init__()
        self.norm1 = _norm(in_ch)
        self.conv1 = nn.Conv2d(in_ch, out_ch, 3, padding=1)
        self.temb_proj = nn.Linear(temb_dim, 2 * out_ch)
        self.norm2 = _norm(out_ch)
        self.conv2 = nn.Conv2d(out_ch, out_ch, 3, padding=1)
        self.skip = nn.Conv2d(in_ch, out_ch, 1) if in_ch != out_ch else nn.Identity()

    def forward(self, x, temb):
        h = self.conv1(F.silu(self.norm1(x)))
        scale, shift = self.temb_proj(F.silu(temb)).chunk(2, dim=-1)
        h = self.norm2(h) * (1.0 + scale[:, :, None, None]) + shift[:, :, None, None]
        h = self.conv2(F.silu(h))
        return h + self.skip(x)


def attention(q: torch.Tensor, k: torch.Tensor, v: torch.Tensor, heads: int):
    """Multi-head scaled dot-product attention over (B, N, C) tensors."""
    b, nq, c = q.shape
    hd = c // heads
    q = q.view(b, nq, heads, hd).transpose(1, 2)
    k = k.view(b, k.shape[1], heads, hd).transpose(1, 2)
    v = v.view(b, v.shape[1], heads, hd).transpose(1, 2)
    w = torch.softmax(q @ k.transpose(-1, -2) / math.sqrt(hd), dim=-1)
    out = (w @ v).transpose(1, 2).reshape(b, nq, c)
    return out


def self_attend_with_reference(
    x_tokens: torch.Tensor,
    ref_tokens: torch.Tensor | None,
    wq: nn.Linear,
    wk: nn.Linear,
    wv: nn.Linear,
    heads: int,
) -> torch.Tensor:
    """Self-attention whose keys/values are concat(x_tokens, ref_tokens)."""
    kv = x_tokens
    if ref_tokens is not None and ref_tokens.shape[1] > 0:
        if ref_tokens.shape[-1] != x_tokens.shape[-1]:
            raise ValueError("reference token width does not match")
        kv = torch.cat([x_tokens, ref_tokens], dim=1)
    return attention(wq(x_tokens), wk(kv), wv(kv), heads)


class SelfAttentionBlock(nn.Module):
    """Spatial self-attention with optional reference keys/values."""

    def __init__(self, ch: int, head_dim: int):
        super().__init__()
        self.heads = max(1, ch // head_dim)
        self.norm = _norm(ch)
        self.q = nn.Linear(ch, ch)
        self.k = nn.Linear(ch, ch)
        self.v = nn.Linear(ch, ch)
        self.proj = nn.Linear(ch, ch)

    def forward(self, x, ref_map=None):
        b, c, h, w = x.shape
        tokens = self.norm(x).flatten(2).transpose(1, 2)
        ref_tokens = None
        if ref_map is not None:
            if ref_map.shape[0] != b:
                # one reference per request, shared across window frames
                ref_map = ref_map.repeat_interleave(b // ref_map.shape[0], dim=0)
            ref_tokens = ref_map.flatten(2).transpose(1, 2)
        out = self_attend_with_reference(
            tokens, ref_tokens, self.q, self.k, self.v, self.heads
        )
        out = self.proj(out).transpose(1, 2).reshape(b, c, h, w)
        return x + out


class MotionCrossAttention(nn.Module):
    """Cross-attention from spatial positions to the motion tokens.

    The output projection starts at zero so that inserting this layer
    into a pretrained backbone leaves its function unchanged.
    """

    def __init__(self, ch: int, d_attn: int, head_dim: int):
        super().__init__()
        self.heads = max(1, ch // head_dim)
        self.norm = _norm(ch)
        self.q = nn.Linear(ch, ch)
        self.k = nn.Linear(d_attn, ch)
        self.v = nn.Linear(d_attn, ch)
        self.proj = nn.Linear(ch, ch)
        nn.init.zeros_(self.proj.weight)
        nn.init.zeros_(self.proj.bias)

    def contribution(self, x, motion_tokens):
        b, c, h, w = x.shape
        q = self.q(self.norm(x).flatten(2).transpose(1, 2))
        out = attention(q, self.k(motion_tokens), self.v(motion_tokens), self.heads)
        return self.proj(out).transpose(1, 2).reshape(b, c, h, w)

    def forward(self, x, motion_tokens):
        if motion_tokens is None:
            return x
        return x + self.contribution(x, motion_tokens)


class TemporalAttention(nn.Module):
    """Per-position attention across the frame axis, zero-initialized."""

    def __init__(self, ch: int, head_dim: int):
        super().__init__()
        self.heads = max(1, ch // head_dim)
        self.norm = _norm(ch)
        self.qkv = nn.Linear(ch, 3 * ch)
        self.proj = nn.Linear(ch, ch)
        nn.init.zeros_(self.proj.weight)
        nn.init.zeros_(self.proj.bias)

    def forward(self, x, frames: int):
        if frames <= 0:
            raise ValueError("frames must be >= 1")
        n, c, h, w = x.shape
        b = n // frames
        tokens = self.norm(x).flatten(2)  # (n, c, hw)
        tokens = tokens.view(b, frames, c, h * w).permute(0, 3, 1, 2)
        tokens = tokens.reshape(b * h * w, frames, c)
        q, k, v = self.qkv(tokens).chunk(3, dim=-1)
        out = self.proj(attention(q, k, v, self.heads))
        out = out.view(b, h * w, frames, c).permute(0, 2, 3, 1).reshape(n, c, h, w)
        return x + out


class AttentionSite(nn.Module):
    """Self-attention w/ reference KV, then motion cross-attn, then temporal."""

    def __init__(self, ch: int, cfg: ModelConfig):
        super().__init__()
        self.self_attn = SelfAttentionBlock(ch, cfg.head_dim)
        self.motion_attn = MotionCrossAttention(ch, cfg.d_attn, cfg.head_dim)
        self.temporal_attn = TemporalAttention(ch, cfg.head_dim)

    def forward(self, x, ref_map, motion_tokens, frames):
        x = self.self_attn(x, ref_map)
        x = self.motion_attn(x, motion_tokens)
        if frames > 1:
            x = self.temporal_attn(x, frames)
        return x


class Denoiser(nn.Module):
    """UNet noise predictor epsilon_theta(z_t, c_ref, f_mot)."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        self.schedule = NoiseSchedule(cfg.t_steps, cfg.beta_start, cfg.beta_end)
        ch = cfg.channels
        temb = cfg.temb_dim
        self.temb_mlp = nn.Sequential(
            nn.Linear(temb, temb), nn.SiLU(), nn.Linear(temb, temb)
        )
        self.conv_in = nn.Conv2d(cfg.in_channels, ch[0], 3, padding=1)

        self.sites = nn.ModuleDict()
        site_specs = {name: (res, c) for name, res, c in cfg.attention_sites()}

        self.down_blocks = nn.ModuleList()
        self.downsamplers = nn.ModuleList()
        res = cfg.image_size
        prev = ch[0]
        for i, c in enumerate(ch):
            self.down_blocks.append(ResBlock(prev, c, temb))
            if f"down{i}" in site_specs:
                self.sites[f"down{i}"] = AttentionSite(c, cfg)
            self.downsamplers.append(nn.Conv2d(c, c, 3, stride=2, padding=1))
            prev = c
            res //= 2

        self.mid_block1 = ResBlock(prev, cfg.mid_channels, temb)
        if "mid" in site_specs:
            self.sites["mid"] = AttentionSite(cfg.mid_channels, cfg)
        self.mid_block2 = ResBlock(cfg.mid_channels, cfg.mid_channels, temb)

        self.up_blocks = nn.ModuleList()
        self.upsamplers = nn.ModuleList()
        prev = cfg.mid_channels
        for i in reversed(range(len(ch))):
            self.upsamplers.append(nn.ConvTranspose2d(prev, ch[i], 4, stride=2, padding=1))
            self.up_blocks.append(ResBlock(ch[i] + ch[i], ch[i], temb))
            if f"up{i}" in site_specs:
                self.sites[f"up{i}"] = AttentionSite(ch[i], cfg)
            prev = ch[i]

        self.norm_out = _norm(ch[0])
        self.conv_out = nn.Conv2d(ch[0], cfg.in_channels, 3, padding=1)

    def forward(
        self,
        z: torch.Tensor,
        t: torch.Tensor,
        ref_feats: dict[str, torch.Tensor] | None = None,
        motion: torch.Tensor | None = None,
        frames: int = 1,
    ) -> torch.Tensor:
        cfg = self.cfg
        if z.shape[-3:] != (cfg.in_channels, cfg.image_size, cfg.image_size):
            raise ValueError(f"latent shape {tuple(z.shape)} does not match config")
        t = torch.as_tensor(t, dtype=torch.long, device=z.device)
        if t.dim() == 0:
            t = t.expand(z.shape[0])
        temb = self.temb_mlp(timestep_embedding(t, cfg.temb_dim).to(z.dtype))

        def site(name, h):
            if name in self.sites:
                ref = ref_feats.get(name) if ref_feats else None
                h = self.sites[name](h, ref, motion, frames)
            return h

        h = self.conv_in(z)
        skips = []
        for i, block in enumerate(self.down_blocks):
            h = block(h, temb)
            h = site(f"down{i}", h)
            skips.append(h)
            h = self.downsamplers[i](h)

        h = self.mid_block1(h, temb)
        h = site("mid", h)
        h = self.mid_block2(h, temb)

        n = len(self.up_blocks)
        for j in range(n):
            i = n - 1 - j
            h = self.upsamplers[j](h)
            h = self.up_blocks[j](torch.cat([h, skips[i]], dim=1), temb)
            h = site(f"up{i}", h)

        return self.conv_out(F.silu(self.norm_out(h)))


def diffusion_loss(
    denoiser: Denoiser,
    z0: torch.Tensor,
    t: torch.Tensor,
    eps: torch.Tensor,
    ref_feats: dict[str, torch.Tensor] | None = None,
    motion: torch.Tensor | None = None,
    frames: int = 1,
) -> torch.Tensor:
    """Mean squared error between eps and the prediction at z_t."""
    z_t = denoiser.schedule.forward_noise(z0, t, eps)
    pred = denoiser(z_t, t, ref_feats=ref_feats, motion=motion, frames=frames)
    return F.mse_loss(pred, eps)
