"""Assembly of the full dual-branch deblurring network."""

from __future__ import annotations

from dataclasses import dataclass

import torch
from torch import nn

from .combine import CombineNet, EarlyFusionHead
from .config import ModelConfig
from .enhance import EnhanceBranch
from .interpolate import InterpBranch

NEIGHBOR_INDICES = [0, 1, 3, 4]  # window positions feeding the interpolation branch


@dataclass
class DeblurResult:
    """The three outputs of a deblurring pass, plus ground truth if known."""

    enhanced: torch.Tensor
    interpolated: torch.Tensor
    combined: torch.Tensor
    gt: torch.Tensor | None = None


def build_enhance(cfg: ModelConfig, *, width=None, use_heatmaps=None) -> EnhanceBranch:
    width = cfg.width if width is None else width
    use_hm = cfg.use_heatmaps if use_heatmaps is None else use_heatmaps
    scale = max(1, cfg.width // max(width, 1))
    return EnhanceBranch(
        width,
        num_extract_blocks=cfg.num_extract_blocks,
        num_fusion_blocks=cfg.num_fusion_blocks,
        num_reconstruct_blocks=cfg.num_reconstruct_blocks,
        offset_mode=cfg.offset_mode,
        foc_width=max(4, cfg.foc_width // scale),
        foc_width_simple=max(4, cfg.foc_width_simple // scale),
        foc_depth=cfg.foc_depth,
        use_heatmaps=use_hm,
        num_landmarks=cfg.num_landmarks,
    )


def build_interp(cfg: ModelConfig) -> InterpBranch:
    return InterpBranch(
        cfg.width,
        num_extract_blocks=cfg.num_extract_blocks,
        num_fusion_blocks=cfg.num_fusion_blocks,
        num_reconstruct_blocks=cfg.num_reconstruct_blocks,
        offset_mode=cfg.offset_mode,
        foc_width=cfg.foc_width,
        foc_width_simple=cfg.foc_width_simple,
        foc_depth=cfg.foc_depth,
        use_heatmaps=cfg.use_heatmaps,
        num_landmarks=cfg.num_landmarks,
        num_frames=cfg.interp_frames,
    )


class DeblurModel(nn.Module):
    """Both branches plus the fusion stage selected by the config."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        cfg.validate()
        self.cfg = cfg
        self.enhance = build_enhance(cfg)
        self.interp = build_interp(cfg)
        if cfg.fusion == "late":
            self.combiner = CombineNet(cfg.combine_width, cfg.combine_blocks)
            self.early_head = None
        else:
            self.combiner = None
            self.early_head = EarlyFusionHead(cfg.width)

    def _split_inputs(self, frames, heatmaps):
        hm_all = heatmaps if self.cfg.use_heatmaps else None
        hm_nbr = heatmaps[:, NEIGHBOR_INDICES] if self.cfg.use_heatmaps else None
        return hm_all, frames[:, NEIGHBOR_INDICES], hm_nbr

    def forward(self, frames: torch.Tensor, heatmaps: torch.Tensor | None = None) -> DeblurResult:
        """Inference composition; frames (B, 5, 3, H, W) ordered [t-2 .. t+2]."""
        hm_all, nbr_frames, hm_nbr = self._split_inputs(frames, heatmaps)
        enhanced = self.enhance(frames, hm_all)
        interpolated = self.interp(nbr_frames, hm_nbr)
        if self.combiner is not None:
            combined = self.combiner(enhanced.clamp(0, 1), interpolated.clamp(0, 1))
        else:
            enh_feats = self.enhance.aligned_features(frames, hm_all)
            fwd, bwd = self.interp.directional_features(nbr_frames, hm_nbr)
            combined = self.early_head(enh_feats, [fwd, bwd], frames[:, 2])
        return DeblurResult(enhanced, interpolated, combined)
