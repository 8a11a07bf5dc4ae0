"""Dual GAN decoder head supervising the motion latent.

An appearance encoder maps the reference image to f_app; a
style-modulated generator renders an image from (f_app, f_mot); a patch
discriminator provides the adversarial and feature-matching signals. The
head is a training scaffold only and never runs at inference.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F

from .config import ModelConfig


@dataclass
class GanLossWeights:
    """Loss weights for the combined GAN-head objective."""

    lambda_r: float = 1.0
    lambda_vgg: float = 3e-2
    lambda_vggf: float = 6e-3
    lambda_fm: float = 10.0

    def __post_init__(self):
        if min(self.lambda_r, self.lambda_vgg, self.lambda_vggf, self.lambda_fm) < 0:
            raise ValueError("loss weights must be non-negative")


class AppearanceEncoder(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        widths = (16, 32, 64, 96)
        layers = [nn.Conv2d(cfg.in_channels, widths[0], 3, padding=1), nn.SiLU()]
        prev = widths[0]
        for w in widths:
            layers += [nn.Conv2d(prev, w, 3, stride=2, padding=1), nn.SiLU()]
            prev = w
        self.body = nn.Sequential(*layers)
        self.head = nn.Linear(prev, cfg.d_app)

    def forward(self, img: torch.Tensor) -> torch.Tensor:
        h = self.body(img)
        return self.head(h.mean(dim=(2, 3)))


class ModulatedConv2d(nn.Module):
    """Style-modulated convolution with weight demodulation."""

    def __init__(self, in_ch: int, out_ch: int, style_dim: int, kernel: int = 3):
        super().__init__()
        self.weight = nn.Parameter(
            torch.randn(out_ch, in_ch, kernel, kernel) / math.sqrt(in_ch * kernel * kernel)
        )
        self.bias = nn.Parameter(torch.zeros(out_ch))
        self.style = nn.Linear(style_dim, in_ch)
        nn.init.zeros_(self.style.weight)
        nn.init.ones_(self.style.bias)
        self.padding = kernel // 2

    def forward(self, x, w):
        b, in_ch, h, wd = x.shape
        s = self.style(w)  # (b, in_ch)
        weight = self.weight[None] * s[:, None, :, None, None]
        demod = torch.rsqrt((weight**2).sum(dim=(2, 3, 4)) + 1e-8)
        weight = weight * demod[:, :, None, None, None]
        x = x.reshape(1, b * in_ch, h, wd)
        weight = weight.reshape(-1, in_ch, *self.weight.shape[2:])
        out = F.conv2d(x, weight, padding=self.padding, groups=b)
        out = out.view(b, -1, h, wd)
        return out + self.bias[None, :, None, None]


class StyleGenerator(nn.Module):
    """Generates an image from the two 1D latents only (no spatial input)."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        ch = cfg.gen_channels
        self.start_res = cfg.image_size // 2 ** (len(ch) - 1)
        self.const = nn.Parameter(torch.randn(1, ch[0], self.start_res, self.start_res))
        self.mapping = nn.Sequential(
            nn.Linear(cfg.d_app + cfg.d_mot, cfg.style_dim),
            nn.SiLU(),
            nn.Linear(cfg.style_dim, cfg.style_dim),
        )
        self.convs = nn.ModuleList()
        prev = ch[0]
        for c in ch:
            self.convs.append(ModulatedConv2d(prev, c, cfg.style_dim))
            prev = c
        self.to_rgb = ModulatedConv2d(prev, cfg.in_channels, cfg.style_dim, kernel=1)

    def forward(self, f_app: torch.Tensor, f_mot: torch.Tensor) -> torch.Tensor:
        w = self.mapping(torch.cat([f_app, f_mot], dim=-1))
        x = self.const.expand(f_app.shape[0], -1, -1, -1)
        for i, conv in enumerate(self.convs):
            if i > 0:
                x = F.interpolate(x, scale_factor=2, mode="nearest")
            x = F.leaky_relu(conv(x, w), 0.2)
        return torch.sigmoid(self.to_rgb(x, w))


class PatchDiscriminator(nn.Module):
    """Conv discriminator returning a realness map plus layer features."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        widths = cfg.disc_channels
        self.layers = nn.ModuleList()
        prev = cfg.in_channels
        for w in widths:
            self.layers.append(nn.Conv2d(prev, w, 4, stride=2, padding=1))
            prev = w
        self.out = nn.Conv2d(prev, 1, 3, padding=1)

    def forward(self, img: torch.Tensor) -> tuple[torch.Tensor, list[torch.Tensor]]:
        feats = []
        h = img
        for layer in self.layers:
            h = F.leaky_relu(layer(h), 0.2)
            feats.append(h)
        return self.out(h), feats


class RandomConvPyramid(nn.Module):
    """Frozen random conv feature pyramid (perceptual-extractor stand-in).

    Plays the role of a pretrained VGG/VGGFace tower at desk scale; real
    extractors plug in behind the same call signature.
    """

    def __init__(self, cfg: ModelConfig, seed: int = 0):
        super().__init__()
        gen = torch.Generator().manual_seed(seed)
        layers = []
        prev = cfg.in_channels
        for w in cfg.perceptual_channels:
            conv = nn.Conv2d(prev, w, 3, stride=2, padding=1)
            with torch.no_grad():
                conv.weight.copy_(torch.randn(conv.weight.shape, generator=gen) * 0.3)
                conv.bias.zero_()
            layers.append(conv)
            prev = w
        self.layers = nn.ModuleList(layers)
        for p in self.parameters():
            p.requires_grad_(False)

    def forward(self, img: torch.Tensor) -> list[torch.Tensor]:
        feats = []
        h = img
        for layer in self.layers:
            h = torch.tanh(layer(h))
            feats.append(h)
        return feats


# --- losses -----------------------------------------------------------------


def loss_recon(gen: torch.Tensor, target: torch.Tensor, weight_map=None) -> torch.Tensor:
    """Mean absolute error, optionally weighted per pixel."""
    diff = (gen - target).abs()
    if weight_map is not None:
        return (diff * weight_map).sum() / (weight_map.sum() * gen.shape[1])
    return diff.mean()


def loss_perceptual(gen: torch.Tensor, target: torch.Tensor, extractor) -> torch.Tensor:
    """Sum over extractor layers of mean-L1 feature distance."""
    total = gen.new_zeros(())
    for fg, ft in zip(extractor(gen), extractor(target)):
        total = total + (fg - ft).abs().mean()
    return total


def loss_adv_and_fm(
    gen: torch.Tensor, target: torch.Tensor, disc: PatchDiscriminator
) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
    """Hinge adversarial losses and discriminator feature matching.

    Returns (g_adv, d_loss, fm). d_loss treats ``gen`` as fake via detach;
    g_adv and fm carry generator gradients.
    """
    real_logits, real_feats = disc(target)
    fake_logits, fake_feats = disc(gen)
    fake_logits_d, _ = disc(gen.detach())
    d_loss = F.relu(1.0 - real_logits).mean() + F.relu(1.0 + fake_logits_d).mean()
    g_adv = -fake_logits.mean()
    fm = gen.new_zeros(())
    for fr, ff in zip(real_feats, fake_feats):
        fm = fm + (fr.detach() - ff).abs().mean()
    return g_adv, d_loss, fm


def loss_gan_total(
    adv: torch.Tensor,
    recon: torch.Tensor,
    vgg: torch.Tensor,
    vggf: torch.Tensor,
    fm: torch.Tensor,
    weights: GanLossWeights = GanLossWeights(),
) -> torch.Tensor:
    """Weighted sum of the five GAN-head terms."""
    return (
        adv
        + weights.lambda_r * recon
        + weights.lambda_vgg * vgg
        + weights.lambda_vggf * vggf
        + weights.lambda_fm * fm
    )
