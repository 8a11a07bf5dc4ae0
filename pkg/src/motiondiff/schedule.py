"""DDPM noise schedule and forward corruption."""

from __future__ import annotations

import torch


class NoiseSchedule:
    """Linear-beta DDPM schedule.

    ``alpha_bar[t]`` is the cumulative product of (1 - beta) up to and
    including step t, so alpha_bar[0] = 1 - beta_0 (close to 1) and the
    sequence decreases strictly towards 0.
    """

    def __init__(
        self,
        t_steps: int = 1000,
        beta_start: float = 1e-4,
        beta_end: float = 0.02,
        dtype: torch.dtype = torch.float32,
    ):
        if t_steps < 1:
            raise ValueError("t_steps must be >= 1")
        self.t_steps = t_steps
        self.betas = torch.linspace(beta_start, beta_end, t_steps, dtype=torch.float64)
        if not ((self.betas > 0).all() and (self.betas < 1).all()):
            raise ValueError("betas must lie in (0, 1)")
        self.alpha_bar = torch.cumprod(1.0 - self.betas, dim=0).to(dtype)
        self.betas = self.betas.to(dtype)

    def check_t(self, t: torch.Tensor) -> torch.Tensor:
        t = torch.as_tensor(t, dtype=torch.long)
        if (t < 0).any() or (t >= self.t_steps).any():
            raise ValueError(f"timestep out of range [0, {self.t_steps})")
        return t

    def forward_noise(
        self, z0: torch.Tensor, t: torch.Tensor, eps: torch.Tensor
    ) -> torch.Tensor:
        """z_t = sqrt(alpha_bar_t) * z0 + sqrt(1 - alpha_bar_t) * eps."""
        t = self.check_t(t)
        if eps.shape != z0.shape:
            raise ValueError("eps must match z0 shape")
        ab = self.alpha_bar.to(z0.dtype)[t]
        while ab.dim() < z0.dim():
            ab = ab.unsqueeze(-1)
        return torch.sqrt(ab) * z0 + torch.sqrt(1.0 - ab) * eps
