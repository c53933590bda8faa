"""Synthetic corpus: sharp face-like videos with tracked landmarks,
seeded random motion-blur degradation, sliding windows, and the on-disk
dataset layout.

Layout under a dataset root::

    root/
      sharp/<video_id>/NNNNNN.png      8-bit RGB sharp frames
      sharp/<video_id>/landmarks.txt   sidecar, one line per frame
      blur/<video_id>/NNNNNN.png       pixel-aligned degraded frames
      splits/{train,val,test}.txt      one video id per line
      dataset_config.json              generation parameters + seed

Everything is reproducible: video content, blur kernels and noise are all
derived from the config seed, so regenerating a dataset is bit-identical.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image
from scipy import ndimage

from .config import DataConfig
from .errors import ConfigError, DataMissingError
from .heatmaps import read_landmark_sidecar, write_landmark_sidecar

MAX_KERNEL_SIZE = 31


# ---------------------------------------------------------------------------
# blur kernels


@dataclass
class BlurKernelConfig:
    """Parameters of the random motion-trajectory kernel family."""

    min_length: float = 0.0
    max_length: float = 9.0
    max_segments: int = 3
    smooth_sigma: float = 0.7      # smoothing sigma drawn from [0, smooth_sigma]
    strength: float = 1.0          # overall multiplier; 0 gives the delta kernel

    def validate(self):
        if self.strength < 0:
            raise ConfigError(f"strength must be >= 0, got {self.strength}")
        if self.strength > 0 and self.max_length < 1:
            raise ConfigError(
                f"max_length must be >= 1 for a non-degenerate kernel, got {self.max_length}")
        if self.min_length < 0 or self.min_length > self.max_length:
            raise ConfigError("need 0 <= min_length <= max_length")
        if self.max_segments < 1:
            raise ConfigError("max_segments must be >= 1")


def sample_blur_kernel(seed, config: BlurKernelConfig) -> np.ndarray:
    """Draw a random motion-blur kernel, deterministic per seed.

    A polyline trajectory (random segment directions and lengths) is
    rasterised with sub-pixel bilinear splatting, optionally Gaussian
    smoothed, and normalised to sum exactly 1. The kernel is square with
    odd side length <= 31.
    """
    config.validate()
    if config.strength == 0:
        return np.ones((1, 1))
    rng = np.random.default_rng(seed)
    length = rng.uniform(config.min_length, config.max_length) * config.strength
    n_segments = int(rng.integers(1, config.max_segments + 1))
    fractions = rng.dirichlet(np.ones(n_segments))
    angle = rng.uniform(0, 2 * np.pi)
    turns = rng.uniform(-np.pi / 2, np.pi / 2, size=n_segments)
    smooth = rng.uniform(0.0, config.smooth_sigma)

    points = [np.zeros(2)]
    for frac, turn in zip(fractions, turns):
        angle += turn
        step = np.array([np.cos(angle), np.sin(angle)]) * (length * frac)
        points.append(points[-1] + step)
    points = np.array(points)

    # Dense, uniform samples along the polyline; each splats unit mass.
    samples = [points[0]]
    for a, b in zip(points[:-1], points[1:]):
        seg_len = float(np.linalg.norm(b - a))
        n = max(2, int(np.ceil(seg_len / 0.1)) + 1)
        ts = np.linspace(0.0, 1.0, n)[1:]
        samples.extend(a + t * (b - a) for t in ts)
    samples = np.array(samples)
    samples -= samples.mean(axis=0)

    extent = float(np.abs(samples).max()) if len(samples) else 0.0
    pad = int(np.ceil(smooth * 3))
    half = min((MAX_KERNEL_SIZE - 1) // 2, int(np.ceil(extent)) + pad)
    m = 2 * half + 1
    kernel = np.zeros((m, m))
    xs = np.clip(samples[:, 0] + half, 0, m - 1 - 1e-9)
    ys = np.clip(samples[:, 1] + half, 0, m - 1 - 1e-9)
    x0 = np.floor(xs).astype(int)
    y0 = np.floor(ys).astype(int)
    fx = xs - x0
    fy = ys - y0
    np.add.at(kernel, (y0, x0), (1 - fy) * (1 - fx))
    np.add.at(kernel, (y0, np.minimum(x0 + 1, m - 1)), (1 - fy) * fx)
    np.add.at(kernel, (np.minimum(y0 + 1, m - 1), x0), fy * (1 - fx))
    np.add.at(kernel, (np.minimum(y0 + 1, m - 1), np.minimum(x0 + 1, m - 1)), fy * fx)

    if smooth > 1e-3:
        kernel = ndimage.gaussian_filter(kernel, smooth, mode="constant")
    total = kernel.sum()
    if total <= 0:
        kernel[half, half] = 1.0
        total = 1.0
    return kernel / total


def degrade(frame: np.ndarray, kernel: np.ndarray, noise_sigma: float,
            rng: np.random.Generator | None = None) -> np.ndarray:
    """Blur a (3, H, W) frame with reflect padding, add Gaussian noise, clip.

    Deterministic given the kernel and the rng state.
    """
    frame = np.asarray(frame, dtype=np.float64)
    out = np.stack([ndimage.convolve(ch, kernel, mode="reflect") for ch in frame])
    if noise_sigma > 0:
        if rng is None:
            raise ValueError("noise_sigma > 0 requires an rng for reproducibility")
        out = out + rng.normal(0.0, noise_sigma, size=out.shape)
    return np.clip(out, 0.0, 1.0)


# ---------------------------------------------------------------------------
# procedural face-like videos


@dataclass
class SynthVideo:
    video_id: str
    frames: list                      # list of (3, H, W) float64 arrays in [0, 1]
    landmarks: list                   # list of (L, 2) float64 arrays, columns (x, y)


def _face_pattern(rng: np.random.Generator, size: int):
    """A smooth analytic face-like scene: background ramp, head blob and
    feature blobs. Returns (render(ys, xs) -> (3, ...) array, base landmark
    layout in object coordinates)."""
    s = float(size)
    cx, cy = s / 2 + rng.uniform(-2, 2), s / 2 + rng.uniform(-2, 2)
    rx, ry = s * rng.uniform(0.26, 0.33), s * rng.uniform(0.32, 0.4)
    eye_dx = rx * 0.45
    eye_y = cy - ry * 0.25
    mouth_y = cy + ry * 0.45
    nose_y = cy + ry * 0.08
    skin = np.array([0.78, 0.62, 0.52]) + rng.uniform(-0.06, 0.06, 3)
    bg_a = np.array([0.25, 0.3, 0.38]) + rng.uniform(-0.05, 0.05, 3)
    bg_b = rng.uniform(-0.15, 0.15, 3)
    freq = rng.uniform(0.5, 1.5)
    phase = rng.uniform(0, 2 * np.pi)

    blobs = [
        # (x, y, sx, sy, rgb_delta)
        (cx - eye_dx, eye_y, s * 0.035, s * 0.025, np.array([-0.55, -0.5, -0.42])),
        (cx + eye_dx, eye_y, s * 0.035, s * 0.025, np.array([-0.55, -0.5, -0.42])),
        (cx, nose_y, s * 0.03, s * 0.05, np.array([-0.12, -0.12, -0.1])),
        (cx, mouth_y, s * 0.1, s * 0.03, np.array([-0.3, -0.42, -0.35])),
    ]

    def render(ys, xs):
        u = np.asarray(xs, dtype=np.float64)
        v = np.asarray(ys, dtype=np.float64)
        bg = (bg_a[:, None, None]
              + bg_b[:, None, None] * (u / s)[None]
              + 0.08 * np.sin(2 * np.pi * freq * v / s + phase)[None])
        d_head = ((u - cx) / rx) ** 2 + ((v - cy) / ry) ** 2
        head_mask = 1.0 / (1.0 + np.exp((d_head - 1.0) * 12.0))
        img = bg + (skin[:, None, None] - bg) * head_mask[None]
        for bx, by, sx, sy, delta in blobs:
            g = np.exp(-(((u - bx) / sx) ** 2 + ((v - by) / sy) ** 2) / 2.0)
            img = img + delta[:, None, None] * (g * head_mask)[None]
        return np.clip(img, 0.02, 0.98)

    def layout(num_landmarks: int) -> np.ndarray:
        fixed = np.array([
            [cx - eye_dx, eye_y],
            [cx + eye_dx, eye_y],
            [cx, nose_y],
            [cx - rx * 0.5, mouth_y],
            [cx + rx * 0.5, mouth_y],
        ])
        if num_landmarks <= len(fixed):
            return fixed[:num_landmarks].copy()
        extra = num_landmarks - len(fixed)
        theta = np.linspace(0, 2 * np.pi, extra, endpoint=False)
        ring = np.stack([cx + rx * np.cos(theta), cy + ry * np.sin(theta)], axis=1)
        return np.concatenate([fixed, ring], axis=0)

    return render, layout


def synth_video(kind: str, *, size: int, num_frames: int, num_landmarks: int,
                seed, shift=(1.0, 0.0), degrees_per_frame: float = 3.0,
                wobble: float = 0.6, video_id: str | None = None) -> SynthVideo:
    """Generate a sharp sequence with known motion and landmark tracks.

    kind: "translate" (constant (dx, dy) per frame), "rotate" (about the
    image centre) or "landmark-face" (translation plus a small oscillating
    wobble of the whole face).
    """
    if kind not in ("translate", "rotate", "landmark-face"):
        raise ValueError(f"unknown motion kind {kind!r}")
    if num_frames < 1:
        raise ValueError("num_frames must be >= 1")
    rng = np.random.default_rng(seed)
    render, layout = _face_pattern(rng, size)
    base_pts = layout(num_landmarks)
    ys, xs = np.mgrid[0:size, 0:size].astype(np.float64)
    centre = (size - 1) / 2.0
    dx, dy = float(shift[0]), float(shift[1])

    frames, tracks = [], []
    for k in range(num_frames):
        if kind == "rotate":
            ang = np.deg2rad(degrees_per_frame * k)
            cos_a, sin_a = np.cos(ang), np.sin(ang)
            # inverse-rotate the sampling grid; forward-rotate the landmarks
            du, dv = xs - centre, ys - centre
            src_x = centre + cos_a * du + sin_a * dv
            src_y = centre - sin_a * du + cos_a * dv
            px, py = base_pts[:, 0] - centre, base_pts[:, 1] - centre
            pts = np.stack([centre + cos_a * px - sin_a * py,
                            centre + sin_a * px + cos_a * py], axis=1)
        else:
            off_x, off_y = dx * k, dy * k
            if kind == "landmark-face":
                off_x += wobble * np.sin(0.9 * k)
                off_y += wobble * np.cos(1.3 * k)
            src_x = xs - off_x
            src_y = ys - off_y
            pts = base_pts + np.array([off_x, off_y])
        frames.append(render(src_y, src_x))
        tracks.append(pts)
    return SynthVideo(video_id or f"{kind}-{seed}", frames, tracks)


# ---------------------------------------------------------------------------
# windows


def window_indices(num_frames: int, t: int) -> list[int]:
    """Five indices [t-2 .. t+2] with edge replication at the boundaries."""
    return [min(max(i, 0), num_frames - 1) for i in range(t - 2, t + 3)]


def make_windows(num_frames: int) -> list[list[int]]:
    """One window per frame index; a 5-frame video yields 5 windows."""
    if num_frames < 5:
        raise ValueError(f"need at least 5 frames, got {num_frames}")
    return [window_indices(num_frames, t) for t in range(num_frames)]


# ---------------------------------------------------------------------------
# on-disk dataset


@dataclass
class VideoRecord:
    video_id: str
    sharp: np.ndarray        # (T, 3, H, W) float32
    blur: np.ndarray         # (T, 3, H, W) float32
    landmarks: np.ndarray    # (T, L, 2) float64
    split: str = ""


def save_frame_png(path, frame: np.ndarray):
    arr = np.clip(np.asarray(frame), 0.0, 1.0)
    img = (arr * 255.0).round().astype(np.uint8).transpose(1, 2, 0)
    Image.fromarray(img, mode="RGB").save(path)


def load_frame_png(path) -> np.ndarray:
    with Image.open(path) as img:
        arr = np.asarray(img.convert("RGB"), dtype=np.float32) / 255.0
    return arr.transpose(2, 0, 1)


def frame_name(index: int) -> str:
    return f"{index:06d}"


def generate_dataset(root, cfg: DataConfig, num_landmarks: int) -> dict[str, list[str]]:
    """Materialise a full synthetic dataset; returns split -> video ids."""
    cfg.validate()
    root = Path(root)
    blur_cfg = BlurKernelConfig(
        min_length=cfg.blur_min_length, max_length=cfg.blur_max_length,
        max_segments=cfg.blur_max_segments, smooth_sigma=cfg.blur_smooth_sigma,
        strength=cfg.blur_strength)
    blur_cfg.validate()

    splits = {"train": cfg.videos_train, "val": cfg.videos_val, "test": cfg.videos_test}
    manifest: dict[str, list[str]] = {}
    video_index = 0
    for split, count in splits.items():
        ids = []
        for i in range(count):
            kind = cfg.motion_kinds[video_index % len(cfg.motion_kinds)]
            vid = f"{split}_{kind}_{i:03d}"
            rng = np.random.default_rng([cfg.seed, video_index])
            shift = rng.uniform(-cfg.max_shift, cfg.max_shift, size=2)
            degrees = rng.uniform(-cfg.max_degrees, cfg.max_degrees)
            video = synth_video(
                kind, size=cfg.frame_size, num_frames=cfg.frames_per_video,
                num_landmarks=num_landmarks, seed=[cfg.seed, video_index, 1],
                shift=shift, degrees_per_frame=degrees, video_id=vid)
            write_video_record(root, video, blur_cfg, cfg.noise_sigma,
                               seed=[cfg.seed, video_index, 2])
            ids.append(vid)
            video_index += 1
        manifest[split] = ids

    (root / "splits").mkdir(parents=True, exist_ok=True)
    for split, ids in manifest.items():
        (root / "splits" / f"{split}.txt").write_text("".join(v + "\n" for v in ids))
    with open(root / "dataset_config.json", "w") as f:
        json.dump({"data": cfg.__dict__, "num_landmarks": num_landmarks},
                  f, indent=2, default=list)
        f.write("\n")
    return manifest


def write_video_record(root, video: SynthVideo, blur_cfg: BlurKernelConfig,
                       noise_sigma: float, seed):
    root = Path(root)
    sharp_dir = root / "sharp" / video.video_id
    blur_dir = root / "blur" / video.video_id
    sharp_dir.mkdir(parents=True, exist_ok=True)
    blur_dir.mkdir(parents=True, exist_ok=True)
    records = {}
    for k, (frame, pts) in enumerate(zip(video.frames, video.landmarks)):
        name = frame_name(k)
        save_frame_png(sharp_dir / f"{name}.png", frame)
        kernel = sample_blur_kernel(list(seed) + [k, 0], blur_cfg)
        noise_rng = np.random.default_rng(list(seed) + [k, 1])
        save_frame_png(blur_dir / f"{name}.png",
                       degrade(frame, kernel, noise_sigma, noise_rng))
        records[name] = pts
    write_landmark_sidecar(sharp_dir / "landmarks.txt", records)


def read_split(root, split: str) -> list[str]:
    path = Path(root) / "splits" / f"{split}.txt"
    if not path.exists():
        raise DataMissingError(f"split manifest not found: {path}")
    return [line.strip() for line in path.read_text().splitlines() if line.strip()]


def load_video_record(root, video_id: str, split: str = "") -> VideoRecord:
    root = Path(root)
    sharp_dir = root / "sharp" / video_id
    blur_dir = root / "blur" / video_id
    if not sharp_dir.is_dir() or not blur_dir.is_dir():
        raise DataMissingError(f"video {video_id!r} not found under {root}")
    names = sorted(p.stem for p in sharp_dir.glob("*.png"))
    if len(names) < 5:
        raise DataMissingError(f"video {video_id!r} has {len(names)} frames; need >= 5")
    sharp = np.stack([load_frame_png(sharp_dir / f"{n}.png") for n in names])
    blur = np.stack([load_frame_png(blur_dir / f"{n}.png") for n in names])
    sidecar = sharp_dir / "landmarks.txt"
    if not sidecar.exists():
        raise DataMissingError(f"landmark sidecar missing for video {video_id!r}")
    recs = read_landmark_sidecar(sidecar)
    try:
        pts = np.stack([recs[n] for n in names])
    except KeyError as e:
        raise DataMissingError(f"no landmark record for frame {e.args[0]!r} of {video_id!r}")
    return VideoRecord(video_id, sharp, blur, pts, split)
