"""Linear-time bidirectional token mixing for low-resolution feature maps.

Every token attends to every other with weights e^{k_i - w*(|t-i|-1)} plus a
bonus-weighted self term e^{u + k_t}; the output is the weight-normalized
average of the values, so each channel stays inside [min v, max v]. The kernel
is evaluated with forward and backward chunked prefix scans in O(T*D) work,
with running-max subtraction keeping every exponential in range.
"""

from __future__ import annotations

import torch
import torch.nn.functional as F
from torch import nn

_NEG = -1e30  # key sentinel for padded tokens; exp(_NEG - finite) underflows to 0


def flatten_tokens(x: torch.Tensor) -> torch.Tensor:
    """(B, C, H, W) -> (B, H*W, C), row-major over the grid."""
    return x.flatten(2).transpose(1, 2)


def unflatten_tokens(tokens: torch.Tensor, h: int, w: int) -> torch.Tensor:
    return tokens.transpose(1, 2).reshape(tokens.shape[0], tokens.shape[2], h, w)


def _shift2d(x: torch.Tensor, dy: int, dx: int) -> torch.Tensor:
    """Shift a (B, C, H, W) map, filling vacated positions with zeros."""
    out = torch.zeros_like(x)
    h, w = x.shape[-2:]
    ys = slice(max(dy, 0), h + min(dy, 0))
    xs = slice(max(dx, 0), w + min(dx, 0))
    ys_src = slice(max(-dy, 0), h + min(-dy, 0))
    xs_src = slice(max(-dx, 0), w + min(-dx, 0))
    out[..., ys, xs] = x[..., ys_src, xs_src]
    return out


def q_shift(x: torch.Tensor, shift: int = 1) -> torch.Tensor:
    """Shift the four channel quarters one step in the four cardinal directions."""
    c = x.shape[1]
    if c % 4 != 0:
        raise ValueError(f"channel count {c} not divisible by 4")
    if shift == 0:
        return x.clone()
    q = c // 4
    return torch.cat([
        _shift2d(x[:, 0:q], 0, shift),
        _shift2d(x[:, q:2 * q], 0, -shift),
        _shift2d(x[:, 2 * q:3 * q], shift, 0),
        _shift2d(x[:, 3 * q:], -shift, 0),
    ], dim=1)


def _forward_scan(k: torch.Tensor, v: torch.Tensor, w: torch.Tensor, chunk: int):
    """Scaled sums over strictly-preceding tokens.

    Returns (num, den, scale) with the true quantities being
    e^scale * num = sum_{i<t} e^{k_i - w(t-1-i)} v_i and likewise for den
    with v replaced by 1. Work is O(T * chunk * D), vectorized over chunks.
    """
    b, t, d = k.shape
    s = min(chunk, max(t, 1))
    n = -(-t // s)
    pad = n * s - t
    if pad:
        k = torch.cat([k, torch.full((b, pad, d), _NEG, dtype=k.dtype)], dim=1)
        v = torch.cat([v, torch.zeros(b, pad, d, dtype=v.dtype)], dim=1)
    kc = k.reshape(b, n, s, d)
    vc = v.reshape(b, n, s, d)

    m = kc.amax(dim=2, keepdim=True)                    # (b, n, 1, d)
    e = torch.exp(kc - m)
    ev = e * vc
    idx = torch.arange(s, dtype=k.dtype)
    dist = idx[:, None] - idx[None, :] - 1.0            # j - l - 1
    mask = (dist >= 0).to(k.dtype)
    wmat = torch.exp(-w[None, None, :] * dist.clamp(min=0)[:, :, None]) * mask[:, :, None]
    within_num = torch.einsum("jld,bnld->bnjd", wmat, ev)
    within_den = torch.einsum("jld,bnld->bnjd", wmat, e)

    # chunk totals referenced at the next chunk's first position
    tail = torch.exp(-w[None, :] * (s - 1 - idx)[:, None])
    tot_num = (ev * tail[None, None]).sum(dim=2)        # (b, n, d)
    tot_den = (e * tail[None, None]).sum(dim=2)

    carry_num = torch.zeros(b, d, dtype=k.dtype)
    carry_den = torch.zeros(b, d, dtype=k.dtype)
    carry_p = torch.full((b, d), _NEG, dtype=k.dtype)
    nums, dens, ps = [], [], []
    w_s = w * s
    for c in range(n):
        nums.append(carry_num)
        dens.append(carry_den)
        ps.append(carry_p)
        mc = m[:, c, 0, :]
        p_new = torch.maximum(carry_p - w_s, mc)
        fade = torch.exp(carry_p - w_s - p_new)
        gain = torch.exp(mc - p_new)
        carry_num = fade * carry_num + gain * tot_num[:, c]
        carry_den = fade * carry_den + gain * tot_den[:, c]
        carry_p = p_new
    c_num = torch.stack(nums, dim=1)[:, :, None, :]     # (b, n, 1, d)
    c_den = torch.stack(dens, dim=1)[:, :, None, :]
    c_p = torch.stack(ps, dim=1)[:, :, None, :]

    carry_scale = c_p - w[None, None, None, :] * idx[None, None, :, None]
    scale = torch.maximum(carry_scale, m)
    num = torch.exp(carry_scale - scale) * c_num + torch.exp(m - scale) * within_num
    den = torch.exp(carry_scale - scale) * c_den + torch.exp(m - scale) * within_den
    num = num.reshape(b, n * s, d)[:, :t]
    den = den.reshape(b, n * s, d)[:, :t]
    return num, den, scale.expand(b, n, s, d).reshape(b, n * s, d)[:, :t]


def bi_wkv(k: torch.Tensor, v: torch.Tensor, w: torch.Tensor, u: torch.Tensor,
           chunk: int = 64) -> torch.Tensor:
    """Bidirectional weighted key-value mixing over (B, T, D) tokens.

    out_t = (sum_{i != t} e^{k_i - w(|t-i|-1)} v_i + e^{u + k_t} v_t)
            / (same weights with v = 1)

    w must be elementwise nonnegative; u is the self-term bonus.
    """
    squeeze = k.dim() == 2
    if squeeze:
        k = k.unsqueeze(0)
        v = v.unsqueeze(0)
    if k.shape != v.shape:
        raise ValueError(f"k/v shape mismatch: {tuple(k.shape)} vs {tuple(v.shape)}")
    if k.shape[1] < 1:
        raise ValueError("need at least one token")

    nf, df, qf = _forward_scan(k, v, w, chunk)
    nb, db, qb = _forward_scan(k.flip(1), v.flip(1), w, chunk)
    nb, db, qb = nb.flip(1), db.flip(1), qb.flip(1)

    self_scale = u[None, None, :] + k
    q = torch.maximum(torch.maximum(qf, qb), self_scale)
    num = (torch.exp(qf - q) * nf + torch.exp(qb - q) * nb
           + torch.exp(self_scale - q) * v)
    den = (torch.exp(qf - q) * df + torch.exp(qb - q) * db
           + torch.exp(self_scale - q))
    out = num / den
    return out.squeeze(0) if squeeze else out


class SpatialMix(nn.Module):
    """Directional shift, compressed r/k/v projections, bidirectional mixing.

    The output projection starts at zero, so the block is an identity at
    initialization and perturbs the backbone only as it learns.
    """

    def __init__(self, channels: int, compression: int = 4, shift: int = 1,
                 normalize_distance: bool = False, chunk: int = 64):
        super().__init__()
        if channels % compression != 0:
            raise ValueError(f"channels {channels} not divisible by {compression}")
        inner = channels // compression
        self.shift = shift
        self.chunk = chunk
        self.normalize_distance = normalize_distance
        self.receptance = nn.Linear(channels, inner, bias=False)
        self.key = nn.Linear(channels, inner, bias=False)
        self.value = nn.Linear(channels, inner, bias=False)
        self.out_proj = nn.Linear(inner, channels, bias=False)
        with torch.no_grad():
            self.out_proj.weight.zero_()
        self.decay_raw = nn.Parameter(torch.zeros(inner))
        self.bonus = nn.Parameter(torch.zeros(inner))

    def decay(self, n_tokens: int) -> torch.Tensor:
        w = F.softplus(self.decay_raw)
        return w / n_tokens if self.normalize_distance else w

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        h, w = x.shape[-2:]
        tokens = flatten_tokens(q_shift(x, self.shift))
        r = self.receptance(tokens)
        k = self.key(tokens)
        v = self.value(tokens)
        mixed = bi_wkv(k, v, self.decay(tokens.shape[1]), self.bonus, self.chunk)
        gated = torch.sigmoid(r) * mixed
        return x + unflatten_tokens(self.out_proj(gated), h, w)


class ChannelMix(nn.Module):
    """Directional shift plus a gated two-layer feed-forward, residual."""

    def __init__(self, channels: int, compression: int = 4, shift: int = 1):
        super().__init__()
        if channels % compression != 0:
            raise ValueError(f"channels {channels} not divisible by {compression}")
        inner = channels // compression
        self.shift = shift
        self.key = nn.Linear(channels, inner, bias=False)
        self.receptance = nn.Linear(channels, channels, bias=False)
        self.value = nn.Linear(inner, channels, bias=False)
        with torch.no_grad():
            self.value.weight.zero_()

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        h, w = x.shape[-2:]
        tokens = flatten_tokens(q_shift(x, self.shift))
        hidden = torch.square(F.relu(self.key(tokens)))
        out = torch.sigmoid(self.receptance(tokens)) * self.value(hidden)
        return x + unflatten_tokens(out, h, w)


class VrwkvBlock(nn.Module):
    """One serial spatial-mix + channel-mix unit; shape preserving."""

    def __init__(self, channels: int, compression: int = 4, shift: int = 1,
                 normalize_distance: bool = False, chunk: int = 64):
        super().__init__()
        self.spatial = SpatialMix(channels, compression, shift, normalize_distance, chunk)
        self.channel = ChannelMix(channels, compression, shift)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.channel(self.spatial(x))
