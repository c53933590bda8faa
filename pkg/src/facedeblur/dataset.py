"""In-memory window dataset serving (frames, heatmaps, ground truth) batches.

Desk-scale corpora fit in RAM, so every video of a split is loaded once,
heatmaps are pre-rendered from the landmark sidecars, and batches are
gathered by plain indexing. Batch composition is a pure function of
(seed, step), which is what makes checkpoint resume bit-identical.
"""

from __future__ import annotations

import numpy as np
import torch

from .data import load_video_record, make_windows, read_split
from .heatmaps import render_heatmaps


class WindowDataset:
    """All 5-frame windows of a split, with pre-rendered heatmaps."""

    def __init__(self, records, num_landmarks: int, heatmap_sigma: float):
        self.windows = []            # (video_idx, [5 frame indices], centre t)
        self.blur = []
        self.sharp = []
        self.heatmaps = []
        self.landmarks = []
        self.video_ids = []
        for v, rec in enumerate(records):
            t_frames = rec.sharp.shape[0]
            self.video_ids.append(rec.video_id)
            self.blur.append(torch.from_numpy(rec.blur))
            self.sharp.append(torch.from_numpy(rec.sharp))
            self.landmarks.append(rec.landmarks[:, :num_landmarks])
            h, w = rec.sharp.shape[-2:]
            hm = np.stack([
                render_heatmaps(rec.landmarks[k, :num_landmarks], h, w, heatmap_sigma)
                for k in range(t_frames)
            ])
            self.heatmaps.append(torch.from_numpy(hm))
            for t, idx in enumerate(make_windows(t_frames)):
                self.windows.append((v, idx, t))

    def __len__(self):
        return len(self.windows)

    def gather(self, indices) -> dict:
        frames, heatmaps, gt, meta = [], [], [], []
        for i in indices:
            v, idx, t = self.windows[i]
            frames.append(self.blur[v][idx])
            heatmaps.append(self.heatmaps[v][idx])
            gt.append(self.sharp[v][t])
            meta.append((self.video_ids[v], t))
        return {
            "frames": torch.stack(frames),
            "heatmaps": torch.stack(heatmaps),
            "gt": torch.stack(gt),
            "meta": meta,
        }

    def batch_indices(self, seed: int, step: int, batch_size: int) -> list[int]:
        """Stateless per-step batch selection (resume-safe)."""
        rng = np.random.default_rng([seed, step])
        return rng.integers(0, len(self.windows), size=batch_size).tolist()


def load_split(root, split: str, num_landmarks: int, heatmap_sigma: float) -> WindowDataset:
    records = [load_video_record(root, vid, split) for vid in read_split(root, split)]
    return WindowDataset(records, num_landmarks, heatmap_sigma)
