"""Offset field estimation for the deformable alignment layers.

``OffsetEstimator`` is the guided estimator: an encoder-decoder with skip
connections that maps concatenated frame features (plus, at the finest
pyramid level, landmark heatmaps and an upsampled coarser-level field) to
per-tap offsets and modulation scalars. ``PlainOffsetPredictor`` is the
two-convolution baseline used by the ``no-foc`` ablation preset.

Both emit 3K planes: the first 2K pass through as (dy, dx) offsets in the
layout documented in :mod:`facedeblur.ops`; the last K go through a sigmoid
so modulation lands in [0, 1] by construction. The final layer is
zero-initialised, so a fresh estimator outputs zero offsets and 0.5
modulation everywhere.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn.functional as F
from torch import nn

from .errors import ConfigError
from .ops import NUM_TAPS


@dataclass
class OffsetField:
    """Per-position deformable offsets and modulation for a K-tap kernel.

    offsets: (..., 2K, H, W), interleaved (dy, dx) pairs in tap order.
    modulation: (..., K, H, W), values in [0, 1].
    """

    offsets: torch.Tensor
    modulation: torch.Tensor

    def __post_init__(self):
        if self.offsets.shape[-3] != 2 * NUM_TAPS:
            raise ValueError(
                f"offsets must have {2 * NUM_TAPS} channels, got {self.offsets.shape[-3]}"
            )
        if self.modulation.shape[-3] != NUM_TAPS:
            raise ValueError(
                f"modulation must have {NUM_TAPS} channels, got {self.modulation.shape[-3]}"
            )
        if self.offsets.shape[-2:] != self.modulation.shape[-2:]:
            raise ValueError("offsets and modulation must share spatial shape")

    @property
    def spatial_shape(self):
        return tuple(self.offsets.shape[-2:])

    def as_channels(self) -> torch.Tensor:
        """Concatenate offsets and modulation for injection as input planes."""
        return torch.cat([self.offsets, self.modulation], dim=-3)


def zero_field(batch: int, height: int, width: int, *, modulation_value: float = 1.0,
               dtype=torch.float32, device=None) -> OffsetField:
    """All-zero offsets with constant modulation (1.0 = plain convolution)."""
    off = torch.zeros(batch, 2 * NUM_TAPS, height, width, dtype=dtype, device=device)
    mod = torch.full((batch, NUM_TAPS, height, width), modulation_value, dtype=dtype, device=device)
    return OffsetField(off, mod)


def upsample_offset_field(field: OffsetField, size) -> OffsetField:
    """Bilinear 2x (or to explicit size) upsampling of an offset field.

    Offsets are multiplied by the height ratio so displacements stay
    correct in the finer level's pixel units; modulation is upsampled
    unscaled.
    """
    offsets = field.offsets
    modulation = field.modulation
    squeeze = offsets.dim() == 3
    if squeeze:
        offsets = offsets.unsqueeze(0)
        modulation = modulation.unsqueeze(0)
    scale = size[0] / offsets.shape[-2]
    up_off = F.interpolate(offsets, size=size, mode="bilinear", align_corners=False) * scale
    up_mod = F.interpolate(modulation, size=size, mode="bilinear", align_corners=False)
    if squeeze:
        up_off = up_off.squeeze(0)
        up_mod = up_mod.squeeze(0)
    return OffsetField(up_off, up_mod)


def _split_raw(raw: torch.Tensor) -> OffsetField:
    return OffsetField(raw[:, : 2 * NUM_TAPS], torch.sigmoid(raw[:, 2 * NUM_TAPS:]))


def _gather_inputs(features, heatmaps, prior, use_heatmaps):
    if not isinstance(features, (list, tuple)) or not features:
        raise ValueError("features must be a non-empty list of tensors")
    if use_heatmaps and heatmaps is None:
        raise ConfigError("estimator was built with heatmap input but none was given")
    if not use_heatmaps and heatmaps is not None:
        raise ConfigError("estimator was built without heatmap input but heatmaps were given")
    planes = list(features)
    if heatmaps is not None:
        planes.extend(heatmaps)
    if prior is not None:
        planes.append(prior.as_channels())
    shape = planes[0].shape[-2:]
    for p in planes:
        if p.shape[-2:] != shape:
            raise ValueError(f"input spatial shapes differ: {p.shape[-2:]} vs {shape}")
    x = torch.cat(planes, dim=1)
    return x


class OffsetEstimator(nn.Module):
    """Encoder-decoder offset estimator (optionally landmark-guided).

    Args:
        in_channels: total channels of concatenated features, heatmaps and
            prior field planes.
        base_width: channels of the first encoder stage; deeper stages
            double once and then stay flat.
        depth: number of 2x down/up stages.
        use_heatmaps: whether heatmap stacks are a required input.
    """

    def __init__(self, in_channels: int, base_width: int, depth: int = 2,
                 use_heatmaps: bool = False):
        super().__init__()
        if depth < 1:
            raise ConfigError(f"depth must be >= 1, got {depth}")
        self.use_heatmaps = use_heatmaps
        self.in_channels = in_channels
        widths = [base_width * (2 if i > 0 else 1) for i in range(depth + 1)]
        self.head = nn.Conv2d(in_channels, widths[0], 3, padding=1)
        self.encoders = nn.ModuleList(
            nn.Conv2d(widths[i], widths[i + 1], 3, stride=2, padding=1) for i in range(depth)
        )
        self.decoders = nn.ModuleList(
            nn.Conv2d(widths[i + 1] + widths[i], widths[i], 3, padding=1)
            for i in reversed(range(depth))
        )
        self.out = nn.Conv2d(widths[0], 3 * NUM_TAPS, 3, padding=1)
        nn.init.zeros_(self.out.weight)
        nn.init.zeros_(self.out.bias)
        self.act = nn.SiLU()

    def forward(self, features, heatmaps=None, prior: OffsetField | None = None) -> OffsetField:
        x = _gather_inputs(features, heatmaps, prior, self.use_heatmaps)
        if x.shape[1] != self.in_channels:
            raise ValueError(f"expected {self.in_channels} input channels, got {x.shape[1]}")
        skips = [self.act(self.head(x))]
        for enc in self.encoders:
            skips.append(self.act(enc(skips[-1])))
        y = skips.pop()
        for dec in self.decoders:
            skip = skips.pop()
            y = F.interpolate(y, size=skip.shape[-2:], mode="bilinear", align_corners=False)
            y = self.act(dec(torch.cat([y, skip], dim=1)))
        return _split_raw(self.out(y))


class PlainOffsetPredictor(nn.Module):
    """Two-convolution offset baseline (the pre-guided-estimator design)."""

    def __init__(self, in_channels: int, base_width: int, use_heatmaps: bool = False):
        super().__init__()
        self.use_heatmaps = use_heatmaps
        self.in_channels = in_channels
        self.conv1 = nn.Conv2d(in_channels, base_width, 3, padding=1)
        self.out = nn.Conv2d(base_width, 3 * NUM_TAPS, 3, padding=1)
        nn.init.zeros_(self.out.weight)
        nn.init.zeros_(self.out.bias)
        self.act = nn.SiLU()

    def forward(self, features, heatmaps=None, prior: OffsetField | None = None) -> OffsetField:
        x = _gather_inputs(features, heatmaps, prior, self.use_heatmaps)
        if x.shape[1] != self.in_channels:
            raise ValueError(f"expected {self.in_channels} input channels, got {x.shape[1]}")
        return _split_raw(self.out(self.act(self.conv1(x))))


def build_estimator(mode: str, in_channels: int, base_width: int, depth: int,
                    use_heatmaps: bool) -> nn.Module:
    if mode == "foc":
        return OffsetEstimator(in_channels, base_width, depth, use_heatmaps)
    if mode == "plain":
        return PlainOffsetPredictor(in_channels, base_width, use_heatmaps)
    raise ConfigError(f"unknown offset_mode {mode!r}")
