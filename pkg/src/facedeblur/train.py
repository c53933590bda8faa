"""Stage-wise training, checkpointing, evaluation and two-stage inference.

Stage order is enforced: the combine stage loads frozen enhancement and
interpolation checkpoints and refuses to start without them. Checkpoints
are single torch files carrying a format version, the architecture hash of
the config that built them, the parameter blocks and the optimizer state;
loading under a different architecture fails loudly.

Determinism contract: model init is seeded, batch composition is a pure
function of (seed, step), and the loss surface has no other randomness, so
resuming from a checkpoint reproduces the next step's loss bit-for-bit.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .config import Config, ModelConfig, config_hash
from .dataset import WindowDataset
from .errors import CheckpointError, DependencyError
from .losses import branch_loss, combine_loss
from .metrics import psnr, ssim
from .model import NEIGHBOR_INDICES, DeblurModel, DeblurResult, build_enhance, build_interp

FORMAT_VERSION = 1
STAGES = ("stage1", "enhance", "interp", "combine")


# ---------------------------------------------------------------------------
# checkpoints


def save_checkpoint(path, stage: str, model: torch.nn.Module, cfg: ModelConfig,
                    optimizer=None, step: int = 0, best_val_psnr: float = -math.inf):
    payload = {
        "format_version": FORMAT_VERSION,
        "stage": stage,
        "config_hash": config_hash(cfg),
        "config": cfg.__dict__.copy(),
        "model_state": model.state_dict(),
        "optimizer_state": optimizer.state_dict() if optimizer is not None else None,
        "step": step,
        "best_val_psnr": best_val_psnr,
    }
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    torch.save(payload, path)


def load_checkpoint(path, expected_stage: str | None = None,
                    expected_cfg: ModelConfig | None = None) -> dict:
    path = Path(path)
    if not path.exists():
        raise CheckpointError(f"checkpoint not found: {path}")
    payload = torch.load(path, map_location="cpu", weights_only=False)
    if payload.get("format_version") != FORMAT_VERSION:
        raise CheckpointError(
            f"checkpoint {path} has format version {payload.get('format_version')}, "
            f"expected {FORMAT_VERSION}")
    if expected_stage is not None and payload.get("stage") != expected_stage:
        raise CheckpointError(
            f"checkpoint {path} holds stage {payload.get('stage')!r}, expected {expected_stage!r}")
    if expected_cfg is not None and payload.get("config_hash") != config_hash(expected_cfg):
        raise CheckpointError(
            f"checkpoint {path} was trained under a different architecture "
            f"(hash {payload.get('config_hash')} != {config_hash(expected_cfg)})")
    return payload


def stage_paths(ckpt_dir, stage: str):
    d = Path(ckpt_dir)
    return d / f"{stage}_last.pt", d / f"{stage}_best.pt"


# ---------------------------------------------------------------------------
# stage models


def build_stage1(cfg: ModelConfig):
    return build_enhance(cfg, width=cfg.stage1_width, use_heatmaps=False)


def build_stage_model(stage: str, cfg: Config, ckpt_dir=None) -> torch.nn.Module:
    """The trainable module for a stage; combine loads frozen branches."""
    mc = cfg.model
    if stage == "enhance":
        return build_enhance(mc)
    if stage == "interp":
        return build_interp(mc)
    if stage == "stage1":
        return build_stage1(mc)
    if stage == "combine":
        model = DeblurModel(mc)
        for branch_stage, module in (("enhance", model.enhance), ("interp", model.interp)):
            _, best = stage_paths(ckpt_dir, branch_stage)
            if not best.exists():
                raise DependencyError(
                    f"combine stage requires a trained {branch_stage!r} checkpoint at {best}")
            payload = load_checkpoint(best, expected_stage=branch_stage, expected_cfg=mc)
            module.load_state_dict(payload["model_state"])
        return model
    raise ValueError(f"unknown stage {stage!r}; choose from {STAGES}")


def _stage_step(stage: str, model, batch, use_heatmaps: bool):
    frames = batch["frames"]
    heatmaps = batch["heatmaps"] if use_heatmaps else None
    gt = batch["gt"]
    if stage in ("enhance", "stage1"):
        pred = model(frames, heatmaps if stage == "enhance" else None)
        return branch_loss(pred, gt)
    if stage == "interp":
        hm = heatmaps[:, NEIGHBOR_INDICES] if heatmaps is not None else None
        pred = model(frames[:, NEIGHBOR_INDICES], hm)
        return branch_loss(pred, gt)
    if stage == "combine":
        hm_all = heatmaps
        hm_nbr = heatmaps[:, NEIGHBOR_INDICES] if heatmaps is not None else None
        with torch.no_grad():
            model.enhance.eval()
            model.interp.eval()
            enhanced = model.enhance(frames, hm_all)
            interpolated = model.interp(frames[:, NEIGHBOR_INDICES], hm_nbr)
        if model.combiner is not None:
            pred = model.combiner(enhanced, interpolated)
        else:
            with torch.no_grad():
                enh_feats = model.enhance.aligned_features(frames, hm_all)
                fwd, bwd = model.interp.directional_features(frames[:, NEIGHBOR_INDICES], hm_nbr)
            pred = model.early_head(enh_feats, [fwd, bwd], frames[:, 2])
        return combine_loss(pred, gt)
    raise ValueError(f"unknown stage {stage!r}")


def _trainable_parameters(stage: str, model):
    if stage != "combine":
        return list(model.parameters())
    head = model.combiner if model.combiner is not None else model.early_head
    return list(head.parameters())


def _stage_val_output(stage: str, model, batch, use_heatmaps: bool):
    frames = batch["frames"]
    heatmaps = batch["heatmaps"] if use_heatmaps else None
    if stage in ("enhance", "stage1"):
        return model(frames, heatmaps if stage == "enhance" else None)
    if stage == "interp":
        hm = heatmaps[:, NEIGHBOR_INDICES] if heatmaps is not None else None
        return model(frames[:, NEIGHBOR_INDICES], hm)
    result = model(frames, heatmaps)
    return result.combined


@dataclass
class TrainResult:
    stage: str
    last_path: Path
    best_path: Path
    steps_run: int
    history: list = field(default_factory=list)       # (step, mean interval loss)
    val_history: list = field(default_factory=list)   # (step, mean val psnr)
    best_val_psnr: float = -math.inf


def _validate(stage, model, dataset, cfg, use_heatmaps):
    model.eval()
    n = min(len(dataset), cfg.train.val_max_windows)
    scores = []
    with torch.no_grad():
        for start in range(0, n, cfg.train.batch_size):
            idx = list(range(start, min(start + cfg.train.batch_size, n)))
            batch = dataset.gather(idx)
            out = _stage_val_output(stage, model, batch, use_heatmaps)
            out = out.clamp(0, 1)
            for b in range(out.shape[0]):
                value = psnr(out[b], batch["gt"][b])
                scores.append(min(value, 99.0))  # cap the identical-frame sentinel
    model.train()
    return float(np.mean(scores))


def train_branch(stage: str, cfg: Config, train_set: WindowDataset,
                 val_set: WindowDataset | None = None, ckpt_dir="checkpoints",
                 resume=None, quiet: bool = True) -> TrainResult:
    """Optimize one stage to convergence or budget; returns ckpt paths.

    Adam with the configured (beta1, beta2), constant or cosine lr, global
    norm clipping, periodic validation PSNR with best-checkpoint retention
    and early stopping after ``patience`` stale validations.
    """
    if stage not in STAGES:
        raise ValueError(f"unknown stage {stage!r}; choose from {STAGES}")
    cfg.validate()
    tc = cfg.train
    ckpt_dir = Path(ckpt_dir)
    ckpt_dir.mkdir(parents=True, exist_ok=True)
    last_path, best_path = stage_paths(ckpt_dir, stage)
    use_heatmaps = cfg.model.use_heatmaps

    torch.manual_seed(tc.seed)
    model = build_stage_model(stage, cfg, ckpt_dir)
    params = _trainable_parameters(stage, model)
    optimizer = torch.optim.Adam(params, lr=tc.lr, betas=(tc.beta1, tc.beta2))

    start_step = 0
    best_val = -math.inf
    if resume is not None:
        payload = load_checkpoint(resume, expected_stage=stage, expected_cfg=cfg.model)
        model.load_state_dict(payload["model_state"])
        if payload["optimizer_state"] is not None:
            optimizer.load_state_dict(payload["optimizer_state"])
        start_step = payload["step"]
        best_val = payload["best_val_psnr"]

    model.train()
    result = TrainResult(stage, last_path, best_path, 0, best_val_psnr=best_val)
    interval_losses = []
    stale = 0
    step = start_step
    for step in range(start_step, tc.steps):
        if tc.lr_schedule == "cosine":
            lr = tc.lr * 0.5 * (1 + math.cos(math.pi * step / max(1, tc.steps)))
            for group in optimizer.param_groups:
                group["lr"] = lr
        idx = train_set.batch_indices(tc.seed, step, tc.batch_size)
        loss = _stage_step(stage, model, train_set.gather(idx), use_heatmaps)
        optimizer.zero_grad()
        loss.total.backward()
        torch.nn.utils.clip_grad_norm_(params, tc.grad_clip)
        optimizer.step()
        interval_losses.append(loss.item())

        if (step + 1) % tc.log_every == 0:
            mean_loss = float(np.mean(interval_losses))
            result.history.append((step + 1, mean_loss))
            interval_losses = []
            if not quiet:
                print(f"[{stage}] step {step + 1}/{tc.steps} loss {mean_loss:.5f}")

        if val_set is not None and (step + 1) % tc.val_every == 0:
            score = _validate(stage, model, val_set, cfg, use_heatmaps)
            result.val_history.append((step + 1, score))
            if score > best_val:
                best_val = score
                stale = 0
                save_checkpoint(best_path, stage, model, cfg.model, optimizer,
                                step + 1, best_val)
            else:
                stale += 1
            if not quiet:
                print(f"[{stage}] step {step + 1} val psnr {score:.2f} (best {best_val:.2f})")
            if stale >= tc.patience:
                break

    if interval_losses:
        result.history.append((step + 1, float(np.mean(interval_losses))))
    result.steps_run = step + 1 - start_step
    result.best_val_psnr = best_val
    save_checkpoint(last_path, stage, model, cfg.model, optimizer, step + 1, best_val)
    if not best_path.exists():
        save_checkpoint(best_path, stage, model, cfg.model, optimizer, step + 1, best_val)
    return result


def train_step_loss(stage: str, cfg: Config, train_set: WindowDataset,
                    checkpoint, step: int | None = None) -> float:
    """Loss of the next step from a checkpoint, without updating anything.

    Used to verify resume determinism.
    """
    payload = load_checkpoint(checkpoint, expected_stage=stage, expected_cfg=cfg.model)
    torch.manual_seed(cfg.train.seed)
    model = build_stage_model(stage, cfg, Path(checkpoint).parent)
    model.load_state_dict(payload["model_state"])
    model.train()
    step = payload["step"] if step is None else step
    idx = train_set.batch_indices(cfg.train.seed, step, cfg.train.batch_size)
    with torch.no_grad():
        loss = _stage_step(stage, model, train_set.gather(idx), cfg.model.use_heatmaps)
    return loss.item()


# ---------------------------------------------------------------------------
# inference and evaluation


def load_full_model(cfg: ModelConfig, ckpt_dir) -> DeblurModel:
    """The deployed model = the combine-stage checkpoint (it embeds both branches)."""
    _, best = stage_paths(ckpt_dir, "combine")
    payload = load_checkpoint(best, expected_stage="combine", expected_cfg=cfg)
    model = DeblurModel(cfg)
    model.load_state_dict(payload["model_state"])
    model.eval()
    return model


def deblur_window(model: DeblurModel, frames: torch.Tensor,
                  heatmaps: torch.Tensor | None, gt: torch.Tensor | None = None) -> DeblurResult:
    model.eval()
    with torch.no_grad():
        result = model(frames.unsqueeze(0),
                       heatmaps.unsqueeze(0) if heatmaps is not None else None)
    return DeblurResult(result.enhanced[0], result.interpolated[0],
                        result.combined[0], gt)


def two_stage_deblur(model: DeblurModel, stage1_model, frames: torch.Tensor,
                     landmarks: np.ndarray, heatmap_sigma: float,
                     gt: torch.Tensor | None = None) -> DeblurResult:
    """Pre-deblur every window frame with the stage-1 model, re-render the
    heatmaps, then run the full model on the cleaned window.

    frames: (5, 3, H, W); landmarks: (5, L, 2). Each frame's stage-1 window
    is built from the five available frames with edge replication.
    """
    from .data import window_indices
    from .heatmaps import render_heatmaps

    stage1_model.eval()
    h, w = frames.shape[-2:]
    cleaned = []
    with torch.no_grad():
        for t in range(5):
            idx = window_indices(5, t)
            window = frames[idx].unsqueeze(0)
            cleaned.append(stage1_model(window, None)[0])
    cleaned = torch.stack(cleaned)
    hm = torch.from_numpy(np.stack([
        render_heatmaps(landmarks[t], h, w, heatmap_sigma) for t in range(5)
    ]))
    if not model.cfg.use_heatmaps:
        hm = None
    return deblur_window(model, cleaned, hm, gt)


def identity_stage1(cfg: ModelConfig):
    """A stage-1 model whose output equals its input frame exactly."""
    model = build_stage1(cfg)
    torch.nn.init.zeros_(model.reconstruct.project.weight)
    torch.nn.init.zeros_(model.reconstruct.project.bias)
    model.eval()
    return model


def evaluate(model, dataset: WindowDataset, out_path=None) -> dict:
    """Per-frame PSNR/SSIM for all three outputs plus winner tallies.

    Writes a JSON-lines report (one record per frame, then one summary
    record) when ``out_path`` is given, and returns the summary.
    """
    records = []
    wins = {"combined_over_enhanced": 0, "combined_over_interpolated": 0}
    tallies = {"enhanced": 0, "interpolated": 0, "combined": 0}
    if hasattr(model, "eval"):
        model.eval()
    for i in range(len(dataset)):
        batch = dataset.gather([i])
        with torch.no_grad():
            result = model(batch["frames"], batch["heatmaps"])
        gt = batch["gt"][0]
        video_id, t = batch["meta"][0]
        row = {"type": "frame", "video": video_id, "frame": t}
        values = {}
        for name, img in (("enhanced", result.enhanced[0]),
                          ("interpolated", result.interpolated[0]),
                          ("combined", result.combined[0])):
            img = img.clamp(0, 1)
            values[name] = psnr(img, gt)
            row[f"psnr_{name}"] = values[name]
            row[f"ssim_{name}"] = ssim(img, gt)
        # deterministic tie-break: first of this fixed order wins
        winner = max(("combined", "enhanced", "interpolated"), key=lambda k: values[k])
        row["winner"] = winner
        tallies[winner] += 1
        if values["combined"] > values["enhanced"]:
            wins["combined_over_enhanced"] += 1
        if values["combined"] > values["interpolated"]:
            wins["combined_over_interpolated"] += 1
        records.append(row)

    n = len(records)
    summary = {"type": "summary", "frames": n, "wins": wins, "winner_tallies": tallies}
    for name in ("enhanced", "interpolated", "combined"):
        summary[f"mean_psnr_{name}"] = float(np.mean([r[f"psnr_{name}"] for r in records]))
        summary[f"mean_ssim_{name}"] = float(np.mean([r[f"ssim_{name}"] for r in records]))
    if out_path is not None:
        write_report(out_path, records + [summary])
    return summary


def write_report(path, rows: list[dict]):
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as f:
        for row in rows:
            f.write(json.dumps(row) + "\n")


def read_report(path) -> list[dict]:
    rows = []
    with open(path) as f:
        for line in f:
            if line.strip():
                rows.append(json.loads(line))
    return rows
