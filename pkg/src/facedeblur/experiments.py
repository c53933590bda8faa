"""Reusable desk-scale experiment harnesses.

These drive the same training/evaluation code paths as the CLI, wired into
small seeded corpora, so the package's behavioural claims (overfit
capacity, fusion benefit, offset-estimator ablations, two-stage gains) are
runnable both from tests and from scripts/.
"""

from __future__ import annotations

import dataclasses
import math
from pathlib import Path

import numpy as np
import torch

from .config import Config
from .data import generate_dataset
from .dataset import WindowDataset, load_split
from .metrics import psnr
from .model import NEIGHBOR_INDICES
from .train import (build_stage_model, evaluate, load_full_model, stage_paths,
                    train_branch)


def toy_config(root, *, frame_size=32, width=16, num_landmarks=5,
               frames_per_video=10, videos=(6, 2, 4), blur_max_length=5.0,
               noise_sigma=0.003, seed=0, batch_size=4) -> Config:
    """A config small enough to train on one CPU core in minutes."""
    cfg = Config()
    cfg.model.width = width
    cfg.model.foc_width = width
    cfg.model.foc_width_simple = max(4, width // 2)
    cfg.model.combine_width = width
    cfg.model.stage1_width = max(4, width // 2)
    cfg.model.num_landmarks = num_landmarks
    cfg.model.heatmap_sigma = 2.0
    cfg.model.num_extract_blocks = 2
    cfg.model.num_reconstruct_blocks = 2
    cfg.model.combine_blocks = 9
    cfg.data.root = str(root)
    cfg.data.frame_size = frame_size
    cfg.data.frames_per_video = frames_per_video
    cfg.data.videos_train, cfg.data.videos_val, cfg.data.videos_test = videos
    cfg.data.blur_max_length = blur_max_length
    cfg.data.noise_sigma = noise_sigma
    cfg.data.seed = seed
    cfg.train.batch_size = batch_size
    cfg.train.seed = seed
    cfg.train.log_every = 25
    cfg.train.val_every = 200
    cfg.validate()
    return cfg


def prepare_corpus(cfg: Config) -> dict[str, WindowDataset]:
    root = Path(cfg.data.root)
    if not (root / "splits" / "train.txt").exists():
        generate_dataset(root, cfg.data, cfg.model.num_landmarks)
    return {
        split: load_split(root, split, cfg.model.num_landmarks, cfg.model.heatmap_sigma)
        for split in ("train", "val", "test")
    }


def run_stages(cfg: Config, datasets, ckpt_dir, stage_steps: dict[str, int],
               quiet=True) -> dict:
    """Train the requested stages in order with per-stage step budgets."""
    results = {}
    for stage in ("stage1", "enhance", "interp", "combine"):
        if stage not in stage_steps:
            continue
        stage_cfg = clone_config(cfg)
        stage_cfg.train.steps = stage_steps[stage]
        results[stage] = train_branch(stage, stage_cfg, datasets["train"],
                                      datasets["val"], ckpt_dir, quiet=quiet)
    return results


def clone_config(cfg: Config) -> Config:
    from .config import config_from_dict
    return config_from_dict(dataclasses.asdict(cfg))


def mean_output_psnr(model, dataset: WindowDataset, output: str = "combined",
                     limit: int | None = None) -> float:
    """Mean PSNR of one model output over a dataset (sentinels capped at 99)."""
    if hasattr(model, "eval"):
        model.eval()
    n = len(dataset) if limit is None else min(limit, len(dataset))
    scores = []
    with torch.no_grad():
        for i in range(n):
            batch = dataset.gather([i])
            result = model(batch["frames"], batch["heatmaps"])
            img = getattr(result, output) if hasattr(result, output) else result
            scores.append(min(psnr(img[0].clamp(0, 1), batch["gt"][0]), 99.0))
    return float(np.mean(scores))


def branch_mean_psnr(stage: str, cfg: Config, ckpt_dir, dataset: WindowDataset,
                     limit: int | None = None) -> float:
    """Mean PSNR of a single trained branch over a dataset."""
    from .train import load_checkpoint
    _, best = stage_paths(ckpt_dir, stage)
    payload = load_checkpoint(best, expected_stage=stage, expected_cfg=cfg.model)
    model = build_stage_model(stage, cfg, ckpt_dir)
    model.load_state_dict(payload["model_state"])
    model.eval()
    n = len(dataset) if limit is None else min(limit, len(dataset))
    scores = []
    with torch.no_grad():
        for i in range(n):
            batch = dataset.gather([i])
            hm = batch["heatmaps"] if cfg.model.use_heatmaps else None
            if stage == "interp":
                out = model(batch["frames"][:, NEIGHBOR_INDICES],
                            hm[:, NEIGHBOR_INDICES] if hm is not None else None)
            else:
                out = model(batch["frames"], hm if stage == "enhance" else None)
            scores.append(min(psnr(out[0].clamp(0, 1), batch["gt"][0]), 99.0))
    return float(np.mean(scores))


def run_overfit(cfg: Config, datasets, ckpt_dir, stage_steps) -> dict:
    """Train all three stages and report mean *training* PSNR of each output."""
    run_stages(cfg, datasets, ckpt_dir, stage_steps)
    model = load_full_model(cfg.model, ckpt_dir)
    report = {}
    for output in ("enhanced", "interpolated", "combined"):
        report[output] = mean_output_psnr(model, datasets["train"], output)
    report["steps_total"] = sum(stage_steps.values())
    return report


def run_fusion_experiment(cfg: Config, datasets, ckpt_dir, stage_steps,
                          report_path=None) -> dict:
    """Train the pipeline, evaluate the held-out split, report fusion gains."""
    run_stages(cfg, datasets, ckpt_dir, stage_steps)
    model = load_full_model(cfg.model, ckpt_dir)
    summary = evaluate(model, datasets["test"], report_path)
    n = summary["frames"]
    summary["win_rate_over_enhanced"] = summary["wins"]["combined_over_enhanced"] / n
    summary["win_rate_over_interpolated"] = summary["wins"]["combined_over_interpolated"] / n
    return summary


def run_offset_ablation(base_cfg: Config, datasets, work_dir, steps: int,
                        quiet=True) -> dict[str, float]:
    """Train the enhancement branch under three offset-estimator settings
    with a matched budget and compare held-out PSNR."""
    from .config import apply_preset
    variants = {
        "foc_landmarks": clone_config(base_cfg),
        "foc_plain": apply_preset(base_cfg, "no-landmarks"),
        "two_conv": apply_preset(base_cfg, "no-foc"),
    }
    scores = {}
    for name, cfg in variants.items():
        cfg.train.steps = steps
        ckpt_dir = Path(work_dir) / name
        train_branch("enhance", cfg, datasets["train"], datasets["val"],
                     ckpt_dir, quiet=quiet)
        scores[name] = branch_mean_psnr("enhance", cfg, ckpt_dir, datasets["test"])
    return scores


def run_interp_frames_ablation(base_cfg: Config, datasets, work_dir, steps: int,
                               quiet=True) -> dict[str, float]:
    """Three-frame vs four-frame interpolation at matched budget."""
    from .config import apply_preset
    scores = {}
    for name, cfg in (("three_frame", clone_config(base_cfg)),
                      ("four_frame", apply_preset(base_cfg, "four-frame"))):
        cfg.train.steps = steps
        ckpt_dir = Path(work_dir) / name
        train_branch("interp", cfg, datasets["train"], datasets["val"],
                     ckpt_dir, quiet=quiet)
        scores[name] = branch_mean_psnr("interp", cfg, ckpt_dir, datasets["test"])
    return scores


def run_two_stage_comparison(cfg: Config, datasets, ckpt_dir, stage1_steps: int,
                             quiet=True) -> dict[str, float]:
    """Single-stage vs two-stage inference of an already-trained full model.

    Trains the stage-1 pre-deblurring model on the same corpus, then
    evaluates both strategies on the test split.
    """
    from .train import load_checkpoint, two_stage_deblur

    stage_cfg = clone_config(cfg)
    stage_cfg.train.steps = stage1_steps
    train_branch("stage1", stage_cfg, datasets["train"], datasets["val"],
                 ckpt_dir, quiet=quiet)
    model = load_full_model(cfg.model, ckpt_dir)
    _, s1_best = stage_paths(ckpt_dir, "stage1")
    payload = load_checkpoint(s1_best, expected_stage="stage1", expected_cfg=cfg.model)
    stage1 = build_stage_model("stage1", cfg, ckpt_dir)
    stage1.load_state_dict(payload["model_state"])
    stage1.eval()

    test = datasets["test"]
    single, double = [], []
    with torch.no_grad():
        for i in range(len(test)):
            batch = test.gather([i])
            gt = batch["gt"][0]
            res_single = model(batch["frames"], batch["heatmaps"])
            single.append(min(psnr(res_single.combined[0].clamp(0, 1), gt), 99.0))
            v, idx, _ = test.windows[i]
            lms = test.landmarks[v][idx]
            res_double = two_stage_deblur(model, stage1, batch["frames"][0], lms,
                                          cfg.model.heatmap_sigma, gt)
            double.append(min(psnr(res_double.combined.clamp(0, 1), gt), 99.0))
    return {"single_stage": float(np.mean(single)), "two_stage": float(np.mean(double))}
