"""Cross-scale feature communication over a dyadic feature pyramid.

Three directional paths (top-down, bottom-up, lateral) are blended per level
with squeeze-excitation weights, all levels exchange information pixel-wise at
a common reference resolution, and the result is routed back through gated
residuals. With the residual gain at zero and the routing projections
zero-initialized the whole module is an exact identity, so it can be switched
on mid-training without disturbing the backbone.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn.functional as F
from torch import nn

from .layers import SEHead, conv_bn_relu, resample_to, zero_init


@dataclass
class DirectionalPaths:
    td: list
    bu: list
    lat: list
    alpha: torch.Tensor | None = None   # (B, L, 3) after fuse_directions


@dataclass
class CrossScaleState:
    aligned: list          # per-level maps at the reference resolution
    w_att: torch.Tensor    # (B, L, H*, W*), softmax over the level axis
    enhanced: list         # residually enhanced reference-resolution maps
    routed: list = None    # native-resolution residuals, filled by gate_and_inject
    gates: list = None


def validate_pyramid(pyramid) -> None:
    if len(pyramid) < 1:
        raise ValueError("empty pyramid")
    h, w = pyramid[0].shape[-2:]
    for i, f in enumerate(pyramid):
        if f.shape[-2:] != (h >> i, w >> i) or (h >> i) == 0 or (w >> i) == 0:
            raise ValueError(
                f"pyramid is not dyadic at level {i + 1}: got {tuple(f.shape[-2:])}, "
                f"expected {(h >> i, w >> i)}")


class FeatureCommunication(nn.Module):
    def __init__(self, channels, reference_level: int = 2, gamma_init: float = 0.0):
        super().__init__()
        levels = len(channels)
        if not 1 <= reference_level <= levels:
            raise ValueError("reference_level out of range")
        self.levels = levels
        self.reference_level = reference_level
        cref = channels[reference_level - 1]
        self.cref = cref

        self.lat = nn.ModuleList(conv_bn_relu(c, c, 3) for c in channels)
        # td[i] maps level i+2 features onto level i+1 widths (deep to shallow)
        self.td = nn.ModuleList(
            conv_bn_relu(channels[i + 1], channels[i], 3) for i in range(levels - 1))
        # bu[i] maps level i+1 features onto level i+2 widths (shallow to deep)
        self.bu = nn.ModuleList(
            conv_bn_relu(channels[i], channels[i + 1], 3) for i in range(levels - 1))
        self.alpha_head = nn.ModuleList(SEHead(c, 3, reduction=4) for c in channels)

        self.align = nn.ModuleList(nn.Conv2d(c, cref, 1) for c in channels)
        self.att_head = nn.Sequential(
            nn.Conv2d(levels * cref, cref, 3, padding=1),
            nn.BatchNorm2d(cref),
            nn.ReLU(inplace=True),
            nn.Conv2d(cref, levels, 3, padding=1),
        )
        self.other = nn.ModuleList(
            nn.Conv2d((levels - 1) * cref, cref, 1) for _ in channels)
        self.gamma = nn.Parameter(torch.tensor(float(gamma_init)))

        # routing back to native widths starts silent so the module is an identity
        self.route = nn.ModuleList(zero_init(nn.Conv2d(cref, c, 1)) for c in channels)
        self.gate = nn.ModuleList(
            nn.Sequential(
                nn.Conv2d(c, c, 3, padding=1),
                nn.BatchNorm2d(c),
                nn.ReLU(inplace=True),
                nn.Conv2d(c, c, 1),
                nn.BatchNorm2d(c),
                nn.Sigmoid(),
            ) for c in channels)

    def build_paths(self, pyramid) -> DirectionalPaths:
        validate_pyramid(pyramid)
        L = len(pyramid)
        lat = [self.lat[i](pyramid[i]) for i in range(L)]
        td = [None] * L
        td[L - 1] = lat[L - 1]
        for i in range(L - 2, -1, -1):
            td[i] = resample_to(self.td[i](td[i + 1]), pyramid[i].shape[-2:])
        bu = [None] * L
        bu[0] = lat[0]
        for i in range(1, L):
            bu[i] = resample_to(self.bu[i - 1](bu[i - 1]), pyramid[i].shape[-2:])
        return DirectionalPaths(td=td, bu=bu, lat=lat)

    def fuse_directions(self, paths: DirectionalPaths):
        fused, alphas = [], []
        for i in range(len(paths.lat)):
            a = torch.softmax(self.alpha_head[i](paths.lat[i]), dim=1)  # (B, 3)
            alphas.append(a)
            stack = torch.stack([paths.td[i], paths.bu[i], paths.lat[i]], dim=1)
            fused.append((a[:, :, None, None, None] * stack).sum(dim=1))
        paths.alpha = torch.stack(alphas, dim=1)
        return fused

    def cross_scale_communicate(self, fused) -> CrossScaleState:
        L = len(fused)
        ref_size = fused[self.reference_level - 1].shape[-2:]
        aligned = [resample_to(self.align[i](fused[i]), ref_size) for i in range(L)]
        if L == 1:
            w = torch.ones(aligned[0].shape[0], 1, *ref_size, dtype=aligned[0].dtype)
            return CrossScaleState(aligned=aligned, w_att=w, enhanced=list(aligned))
        w_att = torch.softmax(self.att_head(torch.cat(aligned, dim=1)), dim=1)
        enhanced = []
        for i in range(L):
            others = torch.cat([aligned[j] for j in range(L) if j != i], dim=1)
            mixed = self.other[i](others)
            enhanced.append(aligned[i] + self.gamma * (w_att[:, i:i + 1] * mixed))
        return CrossScaleState(aligned=aligned, w_att=w_att, enhanced=enhanced)

    def gate_and_inject(self, state: CrossScaleState, pyramid):
        routed, gates, out = [], [], []
        for i, f in enumerate(pyramid):
            r = self.route[i](resample_to(state.enhanced[i], f.shape[-2:]))
            g = self.gate[i](r)
            routed.append(r)
            gates.append(g)
            out.append(f + g * r)
        state.routed = routed
        state.gates = gates
        return out

    def forward(self, pyramid, return_state: bool = False):
        paths = self.build_paths(pyramid)
        fused = self.fuse_directions(paths)
        state = self.cross_scale_communicate(fused)
        out = self.gate_and_inject(state, pyramid)
        if return_state:
            return out, paths, state
        return out
