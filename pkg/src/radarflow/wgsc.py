"""Wavelet-gated skip fusion for the deepest encoder-decoder connections.

The conditioning features are analyzed by a fixed one-level 2-D db4 filter
bank (no gradients pass through the transform), low/high-frequency stems build
a sigmoid guidance map, and three gates derived from the encoder, decoder, and
guidance streams drive an adaptive convex blend of the two skip branches.

DWT contract (bit-exact, shared with the test oracle):
  - analysis filters: the 8-tap db4 decomposition pair; the high-pass is
    hi[k] = (-1)^k * lo[7 - k]
  - odd trailing dims are first extended to even length by repeating the edge
    sample (half-sample symmetric extension)
  - each 1-D pass extends the even-length signal by 3 samples on both sides
    with half-sample symmetric reflection, then correlates with stride 2:
    y[m] = sum_j f[j] * x_ext[2m + j]
  - band names: first letter = filter along height, second = along width
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn.functional as F
from torch import nn

from .layers import conv_bn_relu, resample_to

DB4_DEC_LO = (
    -0.010597401784997278,
    0.032883011666982945,
    0.030841381835986965,
    -0.18703481171888114,
    -0.02798376941698385,
    0.6308807679295904,
    0.7148465705525415,
    0.23037781330885523,
)
DB4_DEC_HI = tuple((-1.0) ** k * DB4_DEC_LO[7 - k] for k in range(8))


@dataclass
class WaveletBands:
    ll: torch.Tensor
    lh: torch.Tensor
    hl: torch.Tensor
    hh: torch.Tensor


@dataclass
class GateTriple:
    m_s: torch.Tensor   # (B, 1, H, W)
    m_c: torch.Tensor   # (B, C, 1, 1)
    m_w: torch.Tensor   # (B, C, H, W)


def _extend_half_symmetric(x: torch.Tensor, pad: int) -> torch.Tensor:
    left = x[..., :pad].flip(-1)
    right = x[..., -pad:].flip(-1)
    return torch.cat([left, x, right], dim=-1)


def _dwt1d_last(x: torch.Tensor) -> tuple:
    """One-level analysis along the last (even-length) dimension."""
    n = x.shape[-1]
    ext = _extend_half_symmetric(x, 3)
    flat = ext.reshape(-1, 1, n + 6)
    weight = torch.tensor([DB4_DEC_LO, DB4_DEC_HI], dtype=x.dtype).unsqueeze(1)
    out = F.conv1d(flat, weight, stride=2)
    out = out.reshape(*x.shape[:-1], 2, n // 2)
    return out[..., 0, :], out[..., 1, :]


def dwt2_db4(features: torch.Tensor) -> WaveletBands:
    """Fixed one-level 2-D db4 analysis of (..., H, W) feature maps.

    The transform is a constant operator: the input is detached and the
    filter taps are plain constants, so no gradients flow through it.
    """
    if features.shape[-2] < 8 or features.shape[-1] < 8:
        raise ValueError(
            f"spatial size {tuple(features.shape[-2:])} below the 8-tap filter support")
    x = features.detach()
    if x.shape[-1] % 2:
        x = torch.cat([x, x[..., -1:]], dim=-1)
    if x.shape[-2] % 2:
        x = torch.cat([x, x[..., -1:, :]], dim=-2)
    low_w, high_w = _dwt1d_last(x)
    low_w = low_w.transpose(-1, -2)
    high_w = high_w.transpose(-1, -2)
    ll, hl = _dwt1d_last(low_w)
    lh, hh = _dwt1d_last(high_w)
    return WaveletBands(
        ll=ll.transpose(-1, -2),
        lh=lh.transpose(-1, -2),
        hl=hl.transpose(-1, -2),
        hh=hh.transpose(-1, -2),
    )


class WaveletGuidance(nn.Module):
    """Sigmoid guidance map built from the low/high frequency bands."""

    def __init__(self, channels: int):
        super().__init__()
        self.low_stem = conv_bn_relu(channels, channels, 3)
        self.high_stem = conv_bn_relu(3 * channels, channels, 3)
        self.fuse = nn.Conv2d(2 * channels, channels, 3, padding=1)

    def forward(self, f_cond: torch.Tensor) -> torch.Tensor:
        bands = dwt2_db4(f_cond)
        size = f_cond.shape[-2:]
        q_low = resample_to(self.low_stem(bands.ll), size)
        q_high = resample_to(
            self.high_stem(torch.cat([bands.lh, bands.hl, bands.hh], dim=1)), size)
        return torch.sigmoid(self.fuse(torch.cat([q_low, q_high], dim=1)))


class SkipGates(nn.Module):
    """Spatial, channel, and guidance-only gates from the combined streams."""

    def __init__(self, channels: int):
        super().__init__()
        self.spatial = nn.Conv2d(2, 1, 7, padding=3)
        hidden = max(1, 3 * channels // 4)
        self.channel = nn.Sequential(
            nn.Linear(3 * channels, hidden),
            nn.ReLU(inplace=True),
            nn.Linear(hidden, channels),
        )
        self.wavelet = nn.Sequential(
            nn.Conv2d(channels, channels, 3, padding=1),
            nn.BatchNorm2d(channels),
            nn.ReLU(inplace=True),
            nn.Conv2d(channels, channels, 3, padding=1),
        )

    def forward(self, f_enc, f_dec, a_wav) -> GateTriple:
        if not f_enc.shape[-2:] == f_dec.shape[-2:] == a_wav.shape[-2:]:
            raise ValueError("gate inputs must share spatial size")
        comb = torch.cat([f_enc, f_dec, a_wav], dim=1)
        pooled = torch.cat(
            [comb.mean(dim=1, keepdim=True), comb.amax(dim=1, keepdim=True)], dim=1)
        m_s = torch.sigmoid(self.spatial(pooled))
        m_c = torch.sigmoid(self.channel(comb.mean(dim=(2, 3))))[:, :, None, None]
        m_w = torch.sigmoid(self.wavelet(a_wav))
        return GateTriple(m_s=m_s, m_c=m_c, m_w=m_w)


class AdaptiveSkipFusion(nn.Module):
    """Convex blend of processed encoder/decoder streams plus a refinement."""

    def __init__(self, channels: int, out_channels: int):
        super().__init__()
        self.enc_proc = nn.Conv2d(channels, channels, 3, padding=1)
        self.dec_proc = nn.Conv2d(channels, channels, 3, padding=1)
        self.fusion_head = nn.Conv2d(2 * channels, channels, 3, padding=1)
        self.out_block = conv_bn_relu(2 * channels, out_channels, 3)

    def process(self, enc_mod, dec_mod):
        return self.enc_proc(enc_mod), self.dec_proc(dec_mod)

    def fusion_weight(self, p_enc, p_dec) -> torch.Tensor:
        return torch.sigmoid(self.fusion_head(torch.cat([p_enc, p_dec], dim=1)))

    @staticmethod
    def blend(p_enc, p_dec, omega):
        return omega * p_enc + (1.0 - omega) * p_dec

    def forward(self, f_enc, f_dec, gates: GateTriple):
        enc_mod = f_enc * gates.m_s * gates.m_c
        dec_mod = f_dec * gates.m_w
        p_enc, p_dec = self.process(enc_mod, dec_mod)
        omega = self.fusion_weight(p_enc, p_dec)
        fused = self.blend(p_enc, p_dec, omega)
        return self.out_block(torch.cat([fused, f_enc], dim=1))


class WaveletGatedSkip(nn.Module):
    def __init__(self, channels: int, out_channels: int):
        super().__init__()
        self.guidance = WaveletGuidance(channels)
        self.gates = SkipGates(channels)
        self.fusion = AdaptiveSkipFusion(channels, out_channels)

    def forward(self, f_enc, f_dec, f_cond, return_state: bool = False):
        a_wav = self.guidance(f_cond)
        gates = self.gates(f_enc, f_dec, a_wav)
        out = self.fusion(f_enc, f_dec, gates)
        if return_state:
            return out, a_wav, gates
        return out
