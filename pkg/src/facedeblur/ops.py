"""Bilinear sampling and modulated deformable convolution.

Everything here is written against a single shared convention:

* kernels are 3x3 (K = 9 taps), stride 1, dilation 1, zero padding 1;
* tap positions are enumerated row-major from (-1, -1) to (1, 1), i.e.
  ``TAP_GRID[k] = (dy_k, dx_k)``;
* an offset plane stores K (dy, dx) pairs interleaved along the channel
  axis: channel ``2k`` is dy of tap k, channel ``2k + 1`` is dx of tap k,
  both in pixel units at the plane's own resolution;
* samples outside ``[0, H-1] x [0, W-1]`` use zero padding: any of the
  four bilinear neighbours that falls off the map contributes 0.

The output value at position p of output channel o is

    sum_k sum_c  w[o, c, k] * sample(F_c, p + tap_k + offset_k(p)) * mod_k(p)

which degenerates to a plain zero-padded convolution when all offsets are
zero and all modulation scalars are one. All operations are pure tensor
code, so gradients flow to features, weights, offsets and modulation.
"""

from __future__ import annotations

import math

import torch
from torch import nn

KERNEL_SIZE = 3
NUM_TAPS = KERNEL_SIZE * KERNEL_SIZE

# (dy, dx) per tap, row-major from the top-left of the 3x3 stencil.
TAP_GRID = tuple(
    (dy, dx)
    for dy in range(-(KERNEL_SIZE // 2), KERNEL_SIZE // 2 + 1)
    for dx in range(-(KERNEL_SIZE // 2), KERNEL_SIZE // 2 + 1)
)


def _check_feature(feature: torch.Tensor):
    if feature.dim() != 3:
        raise ValueError(f"feature must have shape (C, H, W), got {tuple(feature.shape)}")
    if feature.shape[0] < 1 or feature.shape[1] < 1 or feature.shape[2] < 1:
        raise ValueError(f"feature dimensions must be >= 1, got {tuple(feature.shape)}")


def bilinear_sample(feature: torch.Tensor, y, x, channel: int) -> torch.Tensor:
    """Sample one channel of a (C, H, W) map at fractional (y, x).

    Returns a 0-dim tensor so gradients can flow to the feature values and,
    when ``y``/``x`` are tensors with ``requires_grad``, to the coordinates.
    Out-of-range neighbours contribute zero.
    """
    _check_feature(feature)
    y = torch.as_tensor(y, dtype=feature.dtype)
    x = torch.as_tensor(x, dtype=feature.dtype)
    if not (torch.isfinite(y) and torch.isfinite(x)):
        raise ValueError(f"sample coordinates must be finite, got y={y}, x={x}")
    _, h, w = feature.shape
    y0 = torch.floor(y)
    x0 = torch.floor(x)
    wy = y - y0
    wx = x - x0
    out = feature.new_zeros(())
    plane = feature[channel]
    for yi, weight_y in ((y0, 1 - wy), (y0 + 1, wy)):
        for xi, weight_x in ((x0, 1 - wx), (x0 + 1, wx)):
            inside = (0 <= yi) & (yi <= h - 1) & (0 <= xi) & (xi <= w - 1)
            if bool(inside):
                out = out + plane[int(yi), int(xi)] * weight_y * weight_x
    return out


def sample_grid(feature: torch.Tensor, ys: torch.Tensor, xs: torch.Tensor) -> torch.Tensor:
    """Vectorised zero-padded bilinear sampling.

    Args:
        feature: (B, C, H, W)
        ys, xs: (B, K, H, W) absolute sample coordinates per output position.

    Returns:
        (B, C, K, H, W) sampled values.
    """
    b, c, h, w = feature.shape
    k = ys.shape[1]
    y0 = torch.floor(ys)
    x0 = torch.floor(xs)
    wy = ys - y0
    wx = xs - x0

    flat = feature.reshape(b, c, h * w)
    out = feature.new_zeros((b, c, k, h, w))
    for yi, weight_y in ((y0, 1 - wy), (y0 + 1, wy)):
        inside_y = (yi >= 0) & (yi <= h - 1)
        yc = yi.clamp(0, h - 1).long()
        for xi, weight_x in ((x0, 1 - wx), (x0 + 1, wx)):
            inside = inside_y & (xi >= 0) & (xi <= w - 1)
            xc = xi.clamp(0, w - 1).long()
            lin = (yc * w + xc).reshape(b, 1, k * h * w).expand(b, c, k * h * w)
            vals = flat.gather(2, lin).reshape(b, c, k, h, w)
            weight = (weight_y * weight_x * inside.to(feature.dtype)).unsqueeze(1)
            out = out + vals * weight
    return out


def _tap_offsets(dtype, device):
    taps = torch.tensor(TAP_GRID, dtype=dtype, device=device)  # (K, 2)
    return taps[:, 0], taps[:, 1]


def deform_conv_batched(
    feature: torch.Tensor,
    weight: torch.Tensor,
    offsets: torch.Tensor,
    modulation: torch.Tensor,
) -> torch.Tensor:
    """Modulated deformable convolution on a batch.

    Args:
        feature: (B, C_in, H, W)
        weight: (C_out, C_in, 3, 3)
        offsets: (B, 2K, H, W), interleaved (dy, dx) per tap.
        modulation: (B, K, H, W) in [0, 1].

    Returns:
        (B, C_out, H, W)
    """
    b, c_in, h, w = feature.shape
    out_c, w_in, kh, kw = weight.shape
    if (kh, kw) != (KERNEL_SIZE, KERNEL_SIZE):
        raise ValueError(f"kernel must be {KERNEL_SIZE}x{KERNEL_SIZE}, got {kh}x{kw}")
    if w_in != c_in:
        raise ValueError(f"kernel expects {w_in} input channels, feature has {c_in}")
    if offsets.shape != (b, 2 * NUM_TAPS, h, w):
        raise ValueError(
            f"offsets must have shape {(b, 2 * NUM_TAPS, h, w)}, got {tuple(offsets.shape)}"
        )
    if modulation.shape != (b, NUM_TAPS, h, w):
        raise ValueError(
            f"modulation must have shape {(b, NUM_TAPS, h, w)}, got {tuple(modulation.shape)}"
        )

    tap_dy, tap_dx = _tap_offsets(feature.dtype, feature.device)
    base_y = torch.arange(h, dtype=feature.dtype, device=feature.device).view(1, 1, h, 1)
    base_x = torch.arange(w, dtype=feature.dtype, device=feature.device).view(1, 1, 1, w)
    ys = base_y + tap_dy.view(1, NUM_TAPS, 1, 1) + offsets[:, 0::2]
    xs = base_x + tap_dx.view(1, NUM_TAPS, 1, 1) + offsets[:, 1::2]

    sampled = sample_grid(feature, ys, xs)              # (B, C_in, K, H, W)
    sampled = sampled * modulation.unsqueeze(1)
    return torch.einsum("bckhw,ock->bohw", sampled, weight.reshape(out_c, c_in, NUM_TAPS))


def deform_conv(feature: torch.Tensor, weight: torch.Tensor, field) -> torch.Tensor:
    """Single-map form: feature (C, H, W) with an OffsetField of matching size."""
    _check_feature(feature)
    out = deform_conv_batched(
        feature.unsqueeze(0),
        weight,
        field.offsets.unsqueeze(0) if field.offsets.dim() == 3 else field.offsets,
        field.modulation.unsqueeze(0) if field.modulation.dim() == 3 else field.modulation,
    )
    return out.squeeze(0)


class DeformConv(nn.Module):
    """3x3 modulated deformable convolution layer (weights only, no bias)."""

    def __init__(self, in_channels: int, out_channels: int):
        super().__init__()
        self.weight = nn.Parameter(torch.empty(out_channels, in_channels, KERNEL_SIZE, KERNEL_SIZE))
        nn.init.kaiming_uniform_(self.weight, a=math.sqrt(5))

    def forward(self, feature, field):
        return deform_conv_batched(feature, self.weight, field.offsets, field.modulation)
