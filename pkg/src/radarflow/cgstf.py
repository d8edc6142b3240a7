"""Condition-guided spatial alignment: bounded offsets, warping, 1x1 fusion.

A small conv net reads the conditioning features and predicts a per-pixel
displacement field, squashed by tanh and scaled so the bound corresponds to
roughly one pixel at the stage resolution. The main features are warped by
differentiable bilinear sampling on the offset grid (border padding), then
concatenated with the conditioning features and mixed by a 1x1 convolution.
The offset net's last layer is zero-initialized, so the module starts as a
plain concat-fusion with an identity warp.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn.functional as F
from torch import nn

from .layers import zero_init


@dataclass
class DisplacementField:
    offsets: torch.Tensor   # (B, 2, H, W), channel 0 = x (width), channel 1 = y
    alpha: float


def base_grid(h: int, w: int, dtype=torch.float32) -> torch.Tensor:
    """Normalized sampling grid (1, H, W, 2), corner-aligned, last axis (x, y)."""
    ys = torch.linspace(-1.0, 1.0, h, dtype=dtype)
    xs = torch.linspace(-1.0, 1.0, w, dtype=dtype)
    gy, gx = torch.meshgrid(ys, xs, indexing="ij")
    return torch.stack([gx, gy], dim=-1).unsqueeze(0)


def grid_sample(features: torch.Tensor, grid: torch.Tensor) -> torch.Tensor:
    """Bilinear sampling with border clamping; differentiable in both inputs."""
    if not torch.isfinite(grid).all():
        raise ValueError("sampling grid contains non-finite coordinates")
    return F.grid_sample(features, grid, mode="bilinear",
                         padding_mode="border", align_corners=True)


class ConditionGuidedAlignment(nn.Module):
    def __init__(self, main_channels: int, cond_channels: int, out_channels: int,
                 alpha_mode: str = "pixel", alpha_fixed: float = 0.1,
                 hidden: int | None = None):
        super().__init__()
        if alpha_mode not in ("pixel", "fixed"):
            raise ValueError(f"unknown alpha_mode {alpha_mode!r}")
        self.alpha_mode = alpha_mode
        self.alpha_fixed = float(alpha_fixed)
        hidden = hidden or max(8, cond_channels)
        self.offset_net = nn.Sequential(
            nn.Conv2d(cond_channels, hidden, 3, padding=1),
            nn.ReLU(inplace=True),
            zero_init(nn.Conv2d(hidden, 2, 3, padding=1)),
        )
        self.fuse_conv = nn.Conv2d(main_channels + cond_channels, out_channels, 1)

    def stage_alpha(self, width: int) -> float:
        """Offset bound in normalized grid units; one pixel in "pixel" mode."""
        if self.alpha_mode == "pixel":
            return 2.0 / (width - 1)
        return self.alpha_fixed

    def predict_offsets(self, f_cond: torch.Tensor) -> DisplacementField:
        alpha = self.stage_alpha(f_cond.shape[-1])
        return DisplacementField(alpha * torch.tanh(self.offset_net(f_cond)), alpha)

    def warp(self, f_main: torch.Tensor, field: DisplacementField) -> torch.Tensor:
        b, _, h, w = f_main.shape
        grid = base_grid(h, w, dtype=f_main.dtype).to(f_main.device)
        grid = grid + field.offsets.permute(0, 2, 3, 1)
        return grid_sample(f_main, grid)

    def fuse(self, f_warp: torch.Tensor, f_cond: torch.Tensor) -> torch.Tensor:
        if f_warp.shape[-2:] != f_cond.shape[-2:]:
            raise ValueError(
                f"spatial mismatch: {tuple(f_warp.shape)} vs {tuple(f_cond.shape)}")
        return self.fuse_conv(torch.cat([f_warp, f_cond], dim=1))

    def forward(self, f_main: torch.Tensor, f_cond: torch.Tensor) -> torch.Tensor:
        field = self.predict_offsets(f_cond)
        return self.fuse(self.warp(f_main, field), f_cond)
