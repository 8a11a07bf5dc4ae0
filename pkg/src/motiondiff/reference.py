"""Reference network: multi-scale appearance features and feature masking."""

from __future__ import annotations

import torch
import torch.nn as nn
import torch.nn.functional as F

from .config import ModelConfig
from .denoiser import SelfAttentionBlock, _norm


class _ConvBlock(nn.Module):
    def __init__(self, in_ch: int, out_ch: int):
        super().__init__()
        self.norm = _norm(in_ch)
        self.conv1 = nn.Conv2d(in_ch, out_ch, 3, padding=1)
        self.norm2 = _norm(out_ch)
        self.conv2 = nn.Conv2d(out_ch, out_ch, 3, padding=1)
        self.skip = nn.Conv2d(in_ch, out_ch, 1) if in_ch != out_ch else nn.Identity()

    def forward(self, x):
        h = self.conv1(F.silu(self.norm(x)))
        h = self.conv2(F.silu(self.norm2(h)))
        return h + self.skip(x)


class ReferenceNet(nn.Module):
    """UNet-down-path shaped encoder emitting one map per attention site.

    Sites and shapes mirror the denoiser exactly so the maps can serve as
    extra keys/values in its self-attention blocks. Masked positions are
    replaced by a per-site learned embedding.
    """

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        ch = cfg.channels
        self.conv_in = nn.Conv2d(cfg.in_channels, ch[0], 3, padding=1)
        self.blocks = nn.ModuleList()
        self.downsamplers = nn.ModuleList()
        prev = ch[0]
        for c in ch:
            self.blocks.append(_ConvBlock(prev, c))
            self.downsamplers.append(nn.Conv2d(c, c, 3, stride=2, padding=1))
            prev = c
        self.mid = _ConvBlock(prev, cfg.mid_channels)
        self.attn = nn.ModuleDict()
        self.heads = nn.ModuleDict()
        self.mask_embeddings = nn.ParameterDict()
        self._site_specs = cfg.attention_sites()
        for name, res, c in self._site_specs:
            src_ch = cfg.mid_channels if name == "mid" else ch[int(name[-1])]
            self.attn[name] = SelfAttentionBlock(src_ch, cfg.head_dim)
            self.heads[name] = nn.Conv2d(src_ch, c, 1)
            self.mask_embeddings[name] = nn.Parameter(torch.randn(c) * 0.02)

    def forward(self, img: torch.Tensor) -> dict[str, torch.Tensor]:
        cfg = self.cfg
        if img.shape[-3:] != (cfg.in_channels, cfg.image_size, cfg.image_size):
            raise ValueError(f"reference shape {tuple(img.shape)} does not match config")
        feats_by_level: dict[int, torch.Tensor] = {}
        h = self.conv_in(img)
        for i, block in enumerate(self.blocks):
            h = block(h)
            feats_by_level[i] = h
            h = self.downsamplers[i](h)
        mid = self.mid(h)

        out = {}
        for name, _res, _c in self._site_specs:
            src = mid if name == "mid" else feats_by_level[int(name[-1])]
            out[name] = self.heads[name](self.attn[name](src))
        return out


def mask_features(
    feats: dict[str, torch.Tensor],
    ratio: float,
    mask_embeddings: nn.ParameterDict | dict[str, torch.Tensor],
    generator: torch.Generator | None = None,
    seed: int | None = None,
) -> dict[str, torch.Tensor]:
    """Replace floor(ratio * H*W) positions per site with the mask embedding.

    The masked count is exact; only placement is random. Sites are masked
    independently. ``ratio`` 0 returns the input unchanged.
    """
    if not (0.0 <= ratio <= 1.0):
        raise ValueError(f"mask ratio {ratio} outside [0, 1]")
    if ratio == 0.0:
        return feats
    if generator is None:
        generator = torch.Generator()
        generator.manual_seed(0 if seed is None else seed)
    out = {}
    for name, fmap in feats.items():
        b, c, h, w = fmap.shape
        k = int(ratio * h * w)
        emb = mask_embeddings[name].to(fmap.dtype)
        masked = fmap.clone()
        for bi in range(b):
            idx = torch.randperm(h * w, generator=generator)[:k]
            flat = masked[bi].reshape(c, h * w)
            flat[:, idx] = emb[:, None]
        out[name] = masked
    return out


def flatten_kv(feats: dict[str, torch.Tensor], site: str) -> torch.Tensor:
    """Row-major flattening of a site's H x W x C map to (H*W) x C tokens."""
    if site not in feats:
        raise KeyError(f"unknown attention site {site!r}")
    fmap = feats[site]
    return fmap.flatten(2).transpose(1, 2)


def unflatten_kv(tokens: torch.Tensor, h: int, w: int) -> torch.Tensor:
    return tokens.transpose(1, 2).reshape(tokens.shape[0], -1, h, w)
