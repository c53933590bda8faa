"""Fusing the two branch outputs into the final frame.

``CombineNet`` is the late-fusion module: the two branch images are
concatenated and passed through two stride-2 downsampling convolutions,
nine residual blocks, two resize-convolution upsampling stages and a
3-channel projection, added onto the mean of the two inputs. The
projection is zero-initialised, so a fresh combiner returns exactly the
two-input average. Upsampling is bilinear resize + convolution rather than
transposed convolution to avoid checkerboard artifacts.

``EarlyFusionHead`` is the ablation alternative that fuses intermediate
feature maps (five from enhancement, two from interpolation) instead of
output images.
"""

from __future__ import annotations

import torch
import torch.nn.functional as F
from torch import nn

from .blocks import ResidualBlock


class CombineNet(nn.Module):
    """Late fusion of the enhanced and interpolated frames."""

    def __init__(self, width: int = 32, num_blocks: int = 9):
        super().__init__()
        self.down1 = nn.Conv2d(6, width, 3, stride=2, padding=1)
        self.down2 = nn.Conv2d(width, width, 3, stride=2, padding=1)
        self.blocks = nn.Sequential(*[ResidualBlock(width) for _ in range(num_blocks)])
        self.up1 = nn.Conv2d(width, width, 3, padding=1)
        self.up2 = nn.Conv2d(width, width, 3, padding=1)
        self.project = nn.Conv2d(width, 3, 3, padding=1)
        nn.init.zeros_(self.project.weight)
        nn.init.zeros_(self.project.bias)
        self.act = nn.SiLU()

    def forward(self, enhanced: torch.Tensor, interpolated: torch.Tensor) -> torch.Tensor:
        if enhanced.shape != interpolated.shape:
            raise ValueError(
                f"branch outputs must share a shape, got {tuple(enhanced.shape)} "
                f"vs {tuple(interpolated.shape)}")
        base = (enhanced + interpolated) / 2
        x = torch.cat([enhanced, interpolated], dim=-3)
        squeeze = x.dim() == 3
        if squeeze:
            x = x.unsqueeze(0)
        h2 = self.act(self.down1(x))
        h4 = self.act(self.down2(h2))
        y = self.blocks(h4)
        y = self.act(self.up1(F.interpolate(y, size=h2.shape[-2:], mode="bilinear",
                                            align_corners=False)))
        y = self.act(self.up2(F.interpolate(y, size=x.shape[-2:], mode="bilinear",
                                            align_corners=False)))
        out = self.project(y)
        if squeeze:
            out = out.squeeze(0)
        out = out + base
        return out if self.training else out.clamp(0.0, 1.0)


class EarlyFusionHead(nn.Module):
    """Feature-level fusion ablation: 5 enhancement + 2 interpolation maps."""

    def __init__(self, width: int = 32, num_blocks: int = 3):
        super().__init__()
        self.reduce = nn.Conv2d(7 * width, width, 1)
        self.blocks = nn.Sequential(*[ResidualBlock(width) for _ in range(num_blocks)])
        self.project = nn.Conv2d(width, 3, 3, padding=1)
        nn.init.zeros_(self.project.weight)
        nn.init.zeros_(self.project.bias)

    def forward(self, enhance_features: list[torch.Tensor],
                interp_features: list[torch.Tensor], base: torch.Tensor) -> torch.Tensor:
        if len(enhance_features) != 5 or len(interp_features) != 2:
            raise ValueError(
                f"expected 5 enhancement and 2 interpolation feature maps, got "
                f"{len(enhance_features)} and {len(interp_features)}")
        feats = list(enhance_features) + list(interp_features)
        shape = feats[0].shape
        for f in feats:
            if f.shape != shape:
                raise ValueError("all fused feature maps must share a shape")
        y = self.blocks(self.reduce(torch.cat(feats, dim=1)))
        out = self.project(y) + base
        return out if self.training else out.clamp(0.0, 1.0)
