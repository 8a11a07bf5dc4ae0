"""Bundle of all trainable modules plus stage-wise parameter selection."""

from __future__ import annotations

import torch
import torch.nn as nn

from .config import ModelConfig
from .denoiser import Denoiser
from .gan import (
    AppearanceEncoder,
    PatchDiscriminator,
    RandomConvPyramid,
    StyleGenerator,
)
from .motion import MotionEncoder, RtsFusion, TokenAdapter
from .reference import ReferenceNet


class ModelBundle(nn.Module):
    """Every network of the system, addressable by stable names."""

    def __init__(self, cfg: ModelConfig, seed: int = 0):
        super().__init__()
        self.cfg = cfg
        torch.manual_seed(seed)
        self.denoiser = Denoiser(cfg)
        self.refnet = ReferenceNet(cfg)
        self.motion_enc = MotionEncoder(cfg)
        self.rts_fusion = RtsFusion(cfg)
        self.token_adapter = TokenAdapter(cfg)
        self.app_enc = AppearanceEncoder(cfg)
        self.generator = StyleGenerator(cfg)
        self.disc = PatchDiscriminator(cfg)
        self.vgg_proxy = RandomConvPyramid(cfg, seed=101)
        self.vggface_proxy = RandomConvPyramid(cfg, seed=202)

    # ---- stage-wise parameter sets --------------------------------------

    def _denoiser_partition(self):
        spatial, motion_attn, temporal = {}, {}, {}
        for name, p in self.denoiser.named_parameters():
            full = f"denoiser.{name}"
            if ".motion_attn." in name:
                motion_attn[full] = p
            elif ".temporal_attn." in name:
                temporal[full] = p
            else:
                spatial[full] = p
        return spatial, motion_attn, temporal

    def trainable_parameters(self, stage: int) -> dict[str, nn.Parameter]:
        """Generator-side trainable set of a training stage."""
        spatial, motion_attn, temporal = self._denoiser_partition()
        ref = {f"refnet.{n}": p for n, p in self.refnet.named_parameters()}
        if stage == 1:
            return {**spatial, **ref}
        if stage == 2:
            params = {**spatial, **ref, **motion_attn}
            for mod_name in ("motion_enc", "rts_fusion", "token_adapter", "app_enc", "generator"):
                mod = getattr(self, mod_name)
                params.update({f"{mod_name}.{n}": p for n, p in mod.named_parameters()})
            return params
        if stage == 3:
            return temporal
        raise ValueError(f"unknown stage {stage}")

    def discriminator_parameters(self) -> dict[str, nn.Parameter]:
        return {f"disc.{n}": p for n, p in self.disc.named_parameters()}

    def motion_tokens(self, driving: torch.Tensor, rts: torch.Tensor) -> torch.Tensor:
        """encode -> fuse rts -> tokens, the denoiser-side motion path."""
        f_mot = self.motion_enc(driving)
        fused = self.rts_fusion(f_mot, rts)
        return self.token_adapter(fused)
