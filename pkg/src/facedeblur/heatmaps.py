"""Landmark heatmap rendering and the pluggable landmark source.

Heatmaps are unit-peak Gaussians: channel l holds
``exp(-((x - x_l)^2 + (y - y_l)^2) / (2 sigma^2))`` evaluated at pixel
centres, renormalised so the channel maximum is exactly 1 whenever the
landmark lies inside ``[0, W-1] x [0, H-1]``. Out-of-bounds landmarks keep
their truncated tail (possibly all-near-zero) without renormalisation.
"""

from __future__ import annotations

from pathlib import Path
from typing import Protocol

import numpy as np

from .errors import DataMissingError


def render_heatmaps(landmarks, height: int, width: int, sigma: float) -> np.ndarray:
    """Render one Gaussian heatmap per (x, y) landmark.

    Args:
        landmarks: array-like of shape (L, 2), columns (x, y), finite.
        sigma: Gaussian scale in pixels, > 0.

    Returns:
        float32 array (L, height, width) with values in [0, 1].
    """
    if sigma <= 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    pts = np.asarray(landmarks, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 2:
        raise ValueError(f"landmarks must have shape (L, 2), got {pts.shape}")
    if not np.all(np.isfinite(pts)):
        raise ValueError("landmark coordinates must be finite")

    ys = np.arange(height, dtype=np.float64)[None, :, None]
    xs = np.arange(width, dtype=np.float64)[None, None, :]
    lx = pts[:, 0][:, None, None]
    ly = pts[:, 1][:, None, None]
    dist2 = (xs - lx) ** 2 + (ys - ly) ** 2
    maps = np.exp(-dist2 / (2.0 * sigma * sigma))

    in_bounds = (
        (pts[:, 0] >= 0) & (pts[:, 0] <= width - 1)
        & (pts[:, 1] >= 0) & (pts[:, 1] <= height - 1)
    )
    peaks = maps.reshape(len(pts), -1).max(axis=1)
    scale = np.where(in_bounds & (peaks > 0), peaks, 1.0)
    maps = maps / scale[:, None, None]
    return maps.astype(np.float32)


def downscale_heatmaps(stack: np.ndarray, factor: int) -> np.ndarray:
    """Area-average downsampling with unit-peak renormalisation.

    Channels whose input peak is 1 (the in-bounds convention above) are
    rescaled so their peak stays 1 after averaging; other channels are
    left as plain block means.
    """
    if factor not in (1, 2, 4):
        raise ValueError(f"factor must be 1, 2 or 4, got {factor}")
    stack = np.asarray(stack)
    l, h, w = stack.shape
    if h % factor or w % factor:
        raise ValueError(f"heatmap shape {h}x{w} is not divisible by factor {factor}")
    if factor == 1:
        return stack.copy()
    orig_peaks = stack.reshape(l, -1).max(axis=1)
    small = stack.reshape(l, h // factor, factor, w // factor, factor).mean(axis=(2, 4))
    new_peaks = small.reshape(l, -1).max(axis=1)
    renorm = (orig_peaks >= 1.0 - 1e-6) & (new_peaks > 0)
    scale = np.where(renorm, new_peaks, 1.0)
    return (small / scale[:, None, None]).astype(stack.dtype)


class LandmarkSource(Protocol):
    """Where landmark coordinates come from; a real detector would slot in here."""

    def landmarks_for(self, frame_id: str) -> np.ndarray: ...


class SidecarLandmarks:
    """Reads per-frame landmarks from a video directory's sidecar file.

    File format (``landmarks.txt``): one line per frame,
    ``<frame_id> x0 y0 x1 y1 ... x{L-1} y{L-1}`` whitespace-separated.
    """

    def __init__(self, video_dir, filename: str = "landmarks.txt"):
        self.path = Path(video_dir) / filename
        self._records: dict[str, np.ndarray] = {}
        if self.path.exists():
            self._records = read_landmark_sidecar(self.path)

    def landmarks_for(self, frame_id: str) -> np.ndarray:
        if frame_id not in self._records:
            raise DataMissingError(f"no landmark record for frame {frame_id!r} in {self.path}")
        return self._records[frame_id]


def detect_landmarks(frame_id: str, source: LandmarkSource) -> np.ndarray:
    """Detector interface: resolve a frame's landmarks through ``source``."""
    return source.landmarks_for(frame_id)


def read_landmark_sidecar(path) -> dict[str, np.ndarray]:
    records = {}
    with open(path) as f:
        for line in f:
            parts = line.split()
            if not parts:
                continue
            frame_id, values = parts[0], parts[1:]
            if len(values) % 2:
                raise ValueError(f"odd coordinate count for frame {frame_id!r} in {path}")
            coords = np.array(values, dtype=np.float64).reshape(-1, 2)
            records[frame_id] = coords
    return records


def write_landmark_sidecar(path, records: dict[str, np.ndarray]):
    with open(path, "w") as f:
        for frame_id in sorted(records):
            coords = np.asarray(records[frame_id]).reshape(-1)
            f.write(frame_id + " " + " ".join(f"{v:.6f}" for v in coords) + "\n")
