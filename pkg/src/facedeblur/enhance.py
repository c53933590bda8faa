"""Enhancement branch: align the four neighbour frames to the blurry
target across a 3-level feature pyramid, fuse, and reconstruct.

Alignment runs coarse-to-fine. At the coarsest level the offset estimator
sees both frames' features directly; at finer levels it sees a lateral
convolution of the concatenated features plus the upsampled coarser field
(offsets scaled by 2 to stay in pixel units), and at the finest level also
the two frames' landmark heatmaps. Each level warps the neighbour features
with a deformable convolution and merges them with the upsampled coarser
aligned features through a plain convolution, then one cascade refinement
pass re-estimates offsets from the aligned result against the target. The
merge path is kept purely linear so that, with freshly initialised
estimators (zero offsets, 0.5 modulation), the whole chain is an exact
fixed linear transform of the unwarped neighbour features.
"""

from __future__ import annotations

from typing import NamedTuple

import torch
import torch.nn.functional as F
from torch import nn

from .blocks import ResidualBlock
from .offsets import OffsetField, build_estimator, upsample_offset_field
from .ops import NUM_TAPS, DeformConv


class FeaturePyramid(NamedTuple):
    """Per-frame features at full, half and quarter resolution."""

    level1: torch.Tensor
    level2: torch.Tensor
    level3: torch.Tensor


def _up(x, size):
    return F.interpolate(x, size=size, mode="bilinear", align_corners=False)


class FeatureExtractor(nn.Module):
    """Residual-block extractor at full resolution, strided convs below."""

    def __init__(self, width: int, num_blocks: int):
        super().__init__()
        self.conv_in = nn.Conv2d(3, width, 3, padding=1)
        self.blocks = nn.Sequential(*[ResidualBlock(width) for _ in range(num_blocks)])
        self.down1 = nn.Conv2d(width, width, 3, stride=2, padding=1)
        self.down2 = nn.Conv2d(width, width, 3, stride=2, padding=1)
        self.act = nn.SiLU()

    def forward(self, frame: torch.Tensor) -> FeaturePyramid:
        if frame.shape[-1] % 4 or frame.shape[-2] % 4:
            raise ValueError(f"frame size {tuple(frame.shape[-2:])} must be divisible by 4")
        l1 = self.blocks(self.act(self.conv_in(frame)))
        l2 = self.act(self.down1(l1))
        l3 = self.act(self.down2(l2))
        return FeaturePyramid(l1, l2, l3)


class NeighborAligner(nn.Module):
    """Pyramid + cascade alignment of one neighbour onto the target frame."""

    def __init__(self, width: int, *, offset_mode: str = "foc", foc_width: int = 32,
                 foc_width_simple: int = 16, foc_depth: int = 2,
                 use_heatmaps: bool = True, num_landmarks: int = 68):
        super().__init__()
        self.use_heatmaps = use_heatmaps
        extra = 3 * NUM_TAPS  # prior field planes at non-coarsest levels
        hm = 2 * num_landmarks if use_heatmaps else 0
        self.est3 = build_estimator(offset_mode, 2 * width, foc_width_simple, foc_depth, False)
        self.est2 = build_estimator(offset_mode, width + extra, foc_width_simple, foc_depth, False)
        self.est1 = build_estimator(offset_mode, width + extra + hm, foc_width, foc_depth, use_heatmaps)
        self.est_cascade = build_estimator(offset_mode, 2 * width, foc_width_simple, foc_depth, False)
        self.lat2 = nn.Conv2d(2 * width, width, 3, padding=1)
        self.lat1 = nn.Conv2d(2 * width, width, 3, padding=1)
        self.dconv3 = DeformConv(width, width)
        self.dconv2 = DeformConv(width, width)
        self.dconv1 = DeformConv(width, width)
        self.dconv_cascade = DeformConv(width, width)
        self.merge2 = nn.Conv2d(2 * width, width, 3, padding=1)
        self.merge1 = nn.Conv2d(2 * width, width, 3, padding=1)

    def forward(self, pyr_t: FeaturePyramid, pyr_n: FeaturePyramid,
                hm_t: torch.Tensor | None = None,
                hm_n: torch.Tensor | None = None) -> torch.Tensor:
        for a, b in zip(pyr_t, pyr_n):
            if a.shape != b.shape:
                raise ValueError(f"pyramid shapes differ: {tuple(a.shape)} vs {tuple(b.shape)}")
        if self.use_heatmaps:
            if hm_t is None or hm_n is None:
                raise ValueError("aligner was built with heatmaps; both stacks are required")
            if hm_t.shape[-2:] != pyr_t.level1.shape[-2:]:
                raise ValueError("heatmaps must match the finest pyramid resolution")

        field3 = self.est3([pyr_n.level3, pyr_t.level3])
        a3 = self.dconv3(pyr_n.level3, field3)

        size2 = pyr_t.level2.shape[-2:]
        prior2 = upsample_offset_field(field3, size2)
        field2 = self.est2([self.lat2(torch.cat([pyr_n.level2, pyr_t.level2], 1))], prior=prior2)
        a2 = self.merge2(torch.cat([self.dconv2(pyr_n.level2, field2), _up(a3, size2)], 1))

        size1 = pyr_t.level1.shape[-2:]
        prior1 = upsample_offset_field(field2, size1)
        hm = [hm_n, hm_t] if self.use_heatmaps else None
        field1 = self.est1([self.lat1(torch.cat([pyr_n.level1, pyr_t.level1], 1))],
                           heatmaps=hm, prior=prior1)
        a1 = self.merge1(torch.cat([self.dconv1(pyr_n.level1, field1), _up(a2, size1)], 1))

        cascade = self.est_cascade([a1, pyr_t.level1])
        return self.dconv_cascade(a1, cascade)


class FusionModule(nn.Module):
    """Order-sensitive fusion: 1x1 conv over concatenated maps + residual blocks."""

    def __init__(self, width: int, count: int, num_blocks: int = 2):
        super().__init__()
        self.count = count
        self.reduce = nn.Conv2d(count * width, width, 1)
        self.blocks = nn.Sequential(*[ResidualBlock(width) for _ in range(num_blocks)])

    def forward(self, features: list[torch.Tensor]) -> torch.Tensor:
        if len(features) != self.count:
            raise ValueError(f"expected {self.count} feature maps, got {len(features)}")
        shape = features[0].shape
        for f in features:
            if f.shape != shape:
                raise ValueError("all fused feature maps must share a shape")
        return self.blocks(self.reduce(torch.cat(features, dim=1)))


class Reconstructor(nn.Module):
    """Residual blocks + zero-initialised projection, added onto a base frame.

    Output is clamped to [0, 1] only in eval mode; training sees raw values.
    """

    def __init__(self, width: int, num_blocks: int):
        super().__init__()
        self.blocks = nn.Sequential(*[ResidualBlock(width) for _ in range(num_blocks)])
        self.project = nn.Conv2d(width, 3, 3, padding=1)
        nn.init.zeros_(self.project.weight)
        nn.init.zeros_(self.project.bias)

    def forward(self, feature: torch.Tensor, base: torch.Tensor) -> torch.Tensor:
        out = self.project(self.blocks(feature)) + base
        return out if self.training else out.clamp(0.0, 1.0)


class EnhanceBranch(nn.Module):
    """Full enhancement path over a 5-frame window centred on the target.

    forward(frames, heatmaps):
        frames: (B, 5, 3, H, W) ordered [t-2, t-1, t, t+1, t+2]
        heatmaps: (B, 5, L, H, W) or None when built without heatmaps
    """

    def __init__(self, width: int, *, num_extract_blocks=3, num_fusion_blocks=2,
                 num_reconstruct_blocks=3, offset_mode="foc", foc_width=32,
                 foc_width_simple=16, foc_depth=2, use_heatmaps=True, num_landmarks=68):
        super().__init__()
        self.use_heatmaps = use_heatmaps
        self.extract = FeatureExtractor(width, num_extract_blocks)
        self.align = NeighborAligner(
            width, offset_mode=offset_mode, foc_width=foc_width,
            foc_width_simple=foc_width_simple, foc_depth=foc_depth,
            use_heatmaps=use_heatmaps, num_landmarks=num_landmarks)
        self.fuse = FusionModule(width, count=5, num_blocks=num_fusion_blocks)
        self.reconstruct = Reconstructor(width, num_reconstruct_blocks)

    def aligned_features(self, frames: torch.Tensor,
                         heatmaps: torch.Tensor | None = None) -> list[torch.Tensor]:
        """The five fusion inputs: aligned neighbours with the target's own
        finest-level features at index 2."""
        if frames.dim() != 5 or frames.shape[1] != 5:
            raise ValueError(f"frames must have shape (B, 5, 3, H, W), got {tuple(frames.shape)}")
        pyramids = [self.extract(frames[:, i]) for i in range(5)]
        hm = [None] * 5
        if self.use_heatmaps:
            if heatmaps is None:
                raise ValueError("branch was built with heatmaps; none were given")
            hm = [heatmaps[:, i] for i in range(5)]
        feats = []
        for i in range(5):
            if i == 2:
                feats.append(pyramids[2].level1)
            else:
                feats.append(self.align(pyramids[2], pyramids[i], hm[2], hm[i]))
        return feats

    def forward(self, frames: torch.Tensor, heatmaps: torch.Tensor | None = None) -> torch.Tensor:
        feats = self.aligned_features(frames, heatmaps)
        fused = self.fuse(feats)
        return self.reconstruct(fused, frames[:, 2])
