"""Training losses: L1 plus spatial-gradient terms for the branches,
plain L1 for the combiner. All reductions are means, so loss scale is
independent of batch and image size.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch


@dataclass
class LossValue:
    total: torch.Tensor
    components: dict

    def item(self) -> float:
        return float(self.total)


def spatial_gradients(image: torch.Tensor):
    """Forward differences along x and y with a zero final column / row.

    gx[..., x] = I[..., x+1] - I[..., x] for x < W-1 and gx[..., W-1] = 0;
    gy analogously over rows. Constant images map to all-zero maps.
    """
    gx = torch.zeros_like(image)
    gy = torch.zeros_like(image)
    gx[..., :, :-1] = image[..., :, 1:] - image[..., :, :-1]
    gy[..., :-1, :] = image[..., 1:, :] - image[..., :-1, :]
    return gx, gy


def _check_same_shape(pred, gt):
    if pred.shape != gt.shape:
        raise ValueError(f"prediction and target shapes differ: "
                         f"{tuple(pred.shape)} vs {tuple(gt.shape)}")


def branch_loss(pred: torch.Tensor, gt: torch.Tensor) -> LossValue:
    """Mean |gt - pred| plus mean L1 of the x and y gradient residuals."""
    _check_same_shape(pred, gt)
    l1 = (gt - pred).abs().mean()
    gx_p, gy_p = spatial_gradients(pred)
    gx_t, gy_t = spatial_gradients(gt)
    grad_x = (gx_t - gx_p).abs().mean()
    grad_y = (gy_t - gy_p).abs().mean()
    total = l1 + grad_x + grad_y
    return LossValue(total, {"l1": l1, "grad_x": grad_x, "grad_y": grad_y})


def combine_loss(pred: torch.Tensor, gt: torch.Tensor) -> LossValue:
    """Mean |gt - pred| only."""
    _check_same_shape(pred, gt)
    l1 = (gt - pred).abs().mean()
    return LossValue(l1, {"l1": l1})
