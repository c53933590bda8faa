"""Interpolation branch: synthesise the centre frame from its neighbours.

The centre frame is treated as missing. A forward pass consumes the frames
[t-2, t-1, t+1] and a backward pass [t+2, t+1, t-1] (decreasing order);
each estimates deformable offsets from all of its input frames' features
jointly, coarse-to-fine like the enhancement aligner but with no target
features available, and warps the middle frame of its triple toward time
t. The two directional features are fused and decoded by a dedicated head
with no residual path from the centre frame, so the output provably never
reads it. Forward and backward passes have separate parameters: their
temporal spacings differ, so weight sharing has no symmetry to exploit.

The four-frame ablation variant feeds all four neighbours to each
direction's estimator; the warped middle frame stays the same.
"""

from __future__ import annotations

import torch
from torch import nn

from .blocks import ResidualBlock
from .enhance import FeatureExtractor, FeaturePyramid, FusionModule, _up
from .offsets import build_estimator, upsample_offset_field
from .ops import NUM_TAPS, DeformConv

# Window positions (indexes into the 4 non-centre frames ordered
# [t-2, t-1, t+1, t+2]) consumed by each direction, and which of them is
# warped toward the centre.
FORWARD_3 = (0, 1, 2)
BACKWARD_3 = (3, 2, 1)
FORWARD_4 = (0, 1, 2, 3)
BACKWARD_4 = (3, 2, 1, 0)
WARP_POSITION = 1  # the second frame of the ordered set is the warp source


class DirectionalSynthesizer(nn.Module):
    """Warp one direction's middle frame toward the missing centre frame."""

    def __init__(self, width: int, num_inputs: int, *, offset_mode="foc", foc_width=32,
                 foc_width_simple=16, foc_depth=2, use_heatmaps=True, num_landmarks=68):
        super().__init__()
        self.num_inputs = num_inputs
        self.use_heatmaps = use_heatmaps
        extra = 3 * NUM_TAPS
        hm = num_inputs * num_landmarks if use_heatmaps else 0
        self.est3 = build_estimator(offset_mode, num_inputs * width, foc_width_simple, foc_depth, False)
        self.est2 = build_estimator(offset_mode, width + extra, foc_width_simple, foc_depth, False)
        self.est1 = build_estimator(offset_mode, width + extra + hm, foc_width, foc_depth, use_heatmaps)
        self.lat2 = nn.Conv2d(num_inputs * width, width, 3, padding=1)
        self.lat1 = nn.Conv2d(num_inputs * width, width, 3, padding=1)
        self.dconv3 = DeformConv(width, width)
        self.dconv2 = DeformConv(width, width)
        self.dconv1 = DeformConv(width, width)
        self.merge2 = nn.Conv2d(2 * width, width, 3, padding=1)
        self.merge1 = nn.Conv2d(2 * width, width, 3, padding=1)

    def forward(self, pyramids: list[FeaturePyramid],
                heatmaps: list[torch.Tensor] | None = None) -> torch.Tensor:
        if len(pyramids) != self.num_inputs:
            raise ValueError(f"expected {self.num_inputs} pyramids, got {len(pyramids)}")
        if self.use_heatmaps:
            if heatmaps is None or len(heatmaps) != self.num_inputs:
                raise ValueError(f"expected {self.num_inputs} heatmap stacks")
        mid = pyramids[WARP_POSITION]

        field3 = self.est3([p.level3 for p in pyramids])
        a3 = self.dconv3(mid.level3, field3)

        size2 = mid.level2.shape[-2:]
        prior2 = upsample_offset_field(field3, size2)
        field2 = self.est2([self.lat2(torch.cat([p.level2 for p in pyramids], 1))], prior=prior2)
        a2 = self.merge2(torch.cat([self.dconv2(mid.level2, field2), _up(a3, size2)], 1))

        size1 = mid.level1.shape[-2:]
        prior1 = upsample_offset_field(field2, size1)
        field1 = self.est1([self.lat1(torch.cat([p.level1 for p in pyramids], 1))],
                           heatmaps=heatmaps if self.use_heatmaps else None, prior=prior1)
        return self.merge1(torch.cat([self.dconv1(mid.level1, field1), _up(a2, size1)], 1))


class InterpBranch(nn.Module):
    """Bidirectional synthesis of the missing centre frame.

    forward(frames, heatmaps):
        frames: (B, 4, 3, H, W) ordered [t-2, t-1, t+1, t+2]
        heatmaps: (B, 4, L, H, W) or None when built without heatmaps
    """

    def __init__(self, width: int, *, num_extract_blocks=3, num_fusion_blocks=2,
                 num_reconstruct_blocks=3, offset_mode="foc", foc_width=32,
                 foc_width_simple=16, foc_depth=2, use_heatmaps=True,
                 num_landmarks=68, num_frames: int = 3):
        super().__init__()
        if num_frames not in (3, 4):
            raise ValueError(f"num_frames must be 3 or 4, got {num_frames}")
        self.use_heatmaps = use_heatmaps
        self.forward_order = FORWARD_3 if num_frames == 3 else FORWARD_4
        self.backward_order = BACKWARD_3 if num_frames == 3 else BACKWARD_4
        self.extract = FeatureExtractor(width, num_extract_blocks)
        kwargs = dict(offset_mode=offset_mode, foc_width=foc_width,
                      foc_width_simple=foc_width_simple, foc_depth=foc_depth,
                      use_heatmaps=use_heatmaps, num_landmarks=num_landmarks)
        self.synth_forward = DirectionalSynthesizer(width, num_frames, **kwargs)
        self.synth_backward = DirectionalSynthesizer(width, num_frames, **kwargs)
        self.fuse = FusionModule(width, count=2, num_blocks=num_fusion_blocks)
        self.head_blocks = nn.Sequential(
            *[ResidualBlock(width) for _ in range(num_reconstruct_blocks)])
        self.project = nn.Conv2d(width, 3, 3, padding=1)

    def directional_features(self, frames: torch.Tensor,
                             heatmaps: torch.Tensor | None = None):
        if frames.dim() != 5 or frames.shape[1] != 4:
            raise ValueError(f"frames must have shape (B, 4, 3, H, W), got {tuple(frames.shape)}")
        if self.use_heatmaps and heatmaps is None:
            raise ValueError("branch was built with heatmaps; none were given")
        pyramids = [self.extract(frames[:, i]) for i in range(4)]

        def pick(order):
            pyrs = [pyramids[i] for i in order]
            hms = [heatmaps[:, i] for i in order] if self.use_heatmaps else None
            return pyrs, hms

        f_pyrs, f_hms = pick(self.forward_order)
        b_pyrs, b_hms = pick(self.backward_order)
        return self.synth_forward(f_pyrs, f_hms), self.synth_backward(b_pyrs, b_hms)

    def forward(self, frames: torch.Tensor, heatmaps: torch.Tensor | None = None) -> torch.Tensor:
        fwd, bwd = self.directional_features(frames, heatmaps)
        fused = self.fuse([fwd, bwd])
        out = self.project(self.head_blocks(fused))
        return out if self.training else out.clamp(0.0, 1.0)
