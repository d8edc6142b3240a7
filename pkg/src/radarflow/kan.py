"""Tokenized bottleneck operator: learnable spline edges or a matched MLP."""

from __future__ import annotations

import torch
import torch.nn.functional as F
from torch import nn


class SplineLayer(nn.Module):
    """Per-edge univariate functions on a fixed B-spline grid.

    Each output channel q sums learned functions f_qp(x_p) of the inputs,
    where every f_qp is a linear combination of (grid_size + order) cubic
    B-spline basis functions on [lo, hi].
    """

    def __init__(self, dim_in: int, dim_out: int, grid_size: int = 5,
                 order: int = 3, limits=(-1.0, 1.0)):
        super().__init__()
        self.dim_in = dim_in
        self.dim_out = dim_out
        self.grid_size = grid_size
        self.order = order
        lo, hi = limits
        step = (hi - lo) / grid_size
        knots = torch.arange(-order, grid_size + order + 1, dtype=torch.float32)
        self.register_buffer("knots", knots * step + lo)
        self.coef = nn.Parameter(
            torch.randn(dim_out, dim_in, grid_size + order) * 0.1)

    def basis(self, x: torch.Tensor) -> torch.Tensor:
        """Cox-de-Boor recursion; x (N, dim_in) -> (N, dim_in, grid_size + order)."""
        knots = self.knots.to(x.dtype)
        x = x.unsqueeze(-1)
        b = ((x >= knots[:-1]) & (x < knots[1:])).to(x.dtype)
        for k in range(1, self.order + 1):
            left = (x - knots[:-(k + 1)]) / (knots[k:-1] - knots[:-(k + 1)])
            right = (knots[k + 1:] - x) / (knots[k + 1:] - knots[1:-k])
            b = left * b[..., :-1] + right * b[..., 1:]
        return b

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        shape = x.shape
        flat = x.reshape(-1, self.dim_in)
        out = F.linear(self.basis(flat).reshape(flat.shape[0], -1),
                       self.coef.reshape(self.dim_out, -1))
        return out.reshape(*shape[:-1], self.dim_out)


class TokenKanBlock(nn.Module):
    """Residual token-wise operator with a zero-initialized output scale.

    In spline mode the tokens are squashed by tanh so they land on the fixed
    grid before the per-edge functions; feed-forward mode uses a two-layer
    MLP whose hidden width (4x) matches the spline parameter count.
    """

    def __init__(self, dim: int, mode: str = "spline", grid_size: int = 5,
                 order: int = 3):
        super().__init__()
        if mode not in ("spline", "feed_forward"):
            raise ValueError(f"unknown KAN mode {mode!r}")
        self.mode = mode
        if mode == "spline":
            self.op = SplineLayer(dim, dim, grid_size=grid_size, order=order)
        else:
            self.op = nn.Sequential(
                nn.Linear(dim, 4 * dim), nn.GELU(), nn.Linear(4 * dim, dim))
        self.out_scale = nn.Parameter(torch.zeros(dim))

    def forward(self, tokens: torch.Tensor) -> torch.Tensor:
        inner = self.op(torch.tanh(tokens)) if self.mode == "spline" else self.op(tokens)
        return tokens + self.out_scale * inner
