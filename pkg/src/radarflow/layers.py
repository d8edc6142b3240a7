"""Shared building blocks for the fusion modules and the backbone."""

from __future__ import annotations

import math

import torch
import torch.nn.functional as F
from torch import nn


def conv_bn_relu(cin: int, cout: int, kernel: int = 3) -> nn.Sequential:
    return nn.Sequential(
        nn.Conv2d(cin, cout, kernel, padding=kernel // 2),
        nn.BatchNorm2d(cout),
        nn.ReLU(inplace=True),
    )


def zero_init(module: nn.Module) -> nn.Module:
    """Zero the weights (and bias) of a conv/linear so the branch starts silent."""
    with torch.no_grad():
        module.weight.zero_()
        if module.bias is not None:
            module.bias.zero_()
    return module


def resample_to(x: torch.Tensor, size) -> torch.Tensor:
    if x.shape[-2:] == tuple(size):
        return x
    return F.interpolate(x, size=tuple(size), mode="bilinear", align_corners=True)


class SEHead(nn.Module):
    """Squeeze-excitation style head: global pool, bottleneck, n_out logits."""

    def __init__(self, channels: int, n_out: int, reduction: int = 4):
        super().__init__()
        hidden = max(1, channels // reduction)
        self.fc1 = nn.Linear(channels, hidden)
        self.fc2 = nn.Linear(hidden, n_out)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        pooled = x.mean(dim=(2, 3))
        return self.fc2(F.relu(self.fc1(pooled)))


class ConcatFuse(nn.Module):
    """Plain channel-concatenation fusion followed by a 1x1 mix."""

    def __init__(self, cin_a: int, cin_b: int, cout: int):
        super().__init__()
        self.mix = nn.Conv2d(cin_a + cin_b, cout, 1)

    def forward(self, a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
        if a.shape[-2:] != b.shape[-2:]:
            raise ValueError(f"spatial mismatch: {a.shape} vs {b.shape}")
        return self.mix(torch.cat([a, b], dim=1))


class TimeEmbedding(nn.Module):
    """Sinusoidal embedding of the flow time t in [0, 1], refined by an MLP."""

    def __init__(self, dim: int):
        super().__init__()
        if dim % 2 != 0:
            raise ValueError("embedding dim must be even")
        self.dim = dim
        self.mlp = nn.Sequential(nn.Linear(dim, dim), nn.SiLU(), nn.Linear(dim, dim))

    def forward(self, t: torch.Tensor) -> torch.Tensor:
        t = torch.as_tensor(t, dtype=torch.get_default_dtype())
        if t.dim() == 0:
            t = t.reshape(1)
        half = self.dim // 2
        freqs = torch.exp(
            -math.log(10000.0) * torch.arange(half, dtype=t.dtype) / max(1, half - 1)
        )
        angles = t[:, None] * freqs[None, :] * 1000.0
        emb = torch.cat([torch.sin(angles), torch.cos(angles)], dim=1)
        return self.mlp(emb)


class FilmModulation(nn.Module):
    """Per-stage scale-shift from the time embedding; zero-init keeps it inert."""

    def __init__(self, emb_dim: int, channels: int):
        super().__init__()
        self.proj = zero_init(nn.Linear(emb_dim, 2 * channels))

    def forward(self, x: torch.Tensor, emb: torch.Tensor) -> torch.Tensor:
        scale, shift = self.proj(emb).chunk(2, dim=1)
        return x * (1.0 + scale[:, :, None, None]) + shift[:, :, None, None]
