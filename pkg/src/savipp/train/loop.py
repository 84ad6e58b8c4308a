"""Batch assembly and the optimization loop."""

from __future__ import annotations

import csv
import dataclasses
import json
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .. import ndgrad as nd
from ..augment import CropParams, augment_sample, sample_crop
from ..model import SAVi, read_checkpoint, save_checkpoint
from ..scenegen.sparse import add_depth_noise
from ..targets import assemble_targets, parse_selection, target_channels
from .losses import huber_loss, masked_l2_loss
from .optim import AdamState, adam_step, clip_global_norm, lr_schedule

LOG_FIELDS = ("step", "lr", "loss_target", "loss_readout", "grad_norm")


class TrainingDiverged(RuntimeError):
    def __init__(self, step: int, what: str):
        super().__init__(f"non-finite {what} at step {step}")
        self.step = step


@dataclass
class TrainConfig:
    total_steps: int = 2000
    warmup_steps: int = 100
    peak_lr: float = 2e-4
    batch_size: int = 4
    clip_norm: float = 0.05
    seq_len: int = 6
    targets: str = "depth"
    sparse: bool = False
    noise_sigma: float = 0.0
    augment: bool = True
    min_cover: float = 0.2
    readout_weight: float = 1.0
    seed: int = 0
    checkpoint_every: int = 500
    supervised: bool = False

    def __post_init__(self):
        self.targets = "+".join(parse_selection(self.targets))
        if self.total_steps < 0:
            raise ValueError("total_steps must be >= 0")
        if self.total_steps > 0 and not 0 <= self.warmup_steps < self.total_steps:
            raise ValueError("need 0 <= warmup_steps < total_steps")
        if self.clip_norm <= 0:
            raise ValueError("clip_norm must be positive")
        if self.batch_size < 1 or self.seq_len < 1:
            raise ValueError("batch_size and seq_len must be >= 1")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be >= 0")
        if self.noise_sigma > 0 and not self.sparse:
            raise ValueError("depth noise applies to sparse supervision; set sparse=True")
        if self.checkpoint_every < 1:
            raise ValueError("checkpoint_every must be >= 1")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @property
    def target_channels(self) -> int:
        return target_channels(self.targets)


def pad_boxes(boxes: np.ndarray, k: int) -> np.ndarray:
    """``[..., M, 4]`` -> ``[..., K, 4]``: zero rows for unused slots, extra objects dropped."""
    m = boxes.shape[-2]
    if m >= k:
        return boxes[..., :k, :]
    pad = np.zeros(boxes.shape[:-2] + (k - m, 4), dtype=boxes.dtype)
    return np.concatenate([boxes, pad], axis=-2)


def step_rng(seed: int, step: int, index: int = 0) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(seed), int(step), int(index)]))


def _worker_count() -> int:
    try:
        return max(1, int(os.environ.get("SVPP_THREADS", "1")))
    except ValueError:
        return 1


def prepare_clip(video, cfg: TrainConfig, rng: np.random.Generator, num_slots: int, flow_max: float):
    """Pick a sub-sequence, crop it, perturb sparse depth, build targets."""
    t = video.num_frames
    uses_flow = "flow" in cfg.targets
    length = min(cfg.seq_len, t - 1 if uses_flow else t)
    last_start = t - length - (1 if uses_flow else 0)
    start = int(rng.integers(0, max(last_start, 0) + 1))
    clip = video.clip(start, length)
    h, w = clip.depth.shape[-2:]
    crop = sample_crop(rng, h, w, cfg.min_cover) if cfg.augment else CropParams.full(h, w)
    clip = augment_sample(clip, crop)
    points = clip.sparse
    if cfg.sparse and cfg.noise_sigma > 0:
        points = add_depth_noise(points, cfg.noise_sigma, rng)
    bundle = assemble_targets(cfg.targets, clip, flow_max, sparse=cfg.sparse, points=points)
    boxes = pad_boxes(clip.boxes, num_slots).astype(np.float32)
    return clip.rgb.astype(np.float32), boxes, bundle.values, bundle.valid


def build_batch(videos, cfg: TrainConfig, step: int, num_slots: int, flow_max: float) -> dict:
    rng = step_rng(cfg.seed, step)
    picks = rng.integers(0, len(videos), size=cfg.batch_size)
    jobs = [(videos[int(i)], step_rng(cfg.seed, step, j + 1)) for j, i in enumerate(picks)]

    def run(job):
        return prepare_clip(job[0], cfg, job[1], num_slots, flow_max)

    workers = _worker_count()
    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            parts = list(pool.map(run, jobs))
    else:
        parts = [run(j) for j in jobs]
    rgb, boxes, values, valid = (np.stack(x) for x in zip(*parts))
    return {"rgb": rgb, "boxes": boxes, "targets": values, "valid": valid}


def compute_losses(model: SAVi, batch: dict, cfg: TrainConfig):
    """(total, target loss, readout loss) for one batch."""
    boxes0 = batch["boxes"][:, 0]
    out = model.unroll(batch["rgb"], boxes0 if model.cfg.conditional else None,
                       decode=model.decoder is not None)
    readout = huber_loss(out.boxes, batch["boxes"])
    if cfg.supervised:
        return readout, None, readout
    target = masked_l2_loss(out.prediction, batch["targets"], batch["valid"])
    if model.cfg.conditional and cfg.readout_weight > 0:
        # the readout sees stop-gradient slots, so this term only trains the readout head
        total = nd.add(target, nd.mul(readout, cfg.readout_weight))
    else:
        total = target
    return total, target, readout


@dataclass
class TrainResult:
    log: list
    checkpoints: list
    seconds: float

    def losses(self) -> np.ndarray:
        key = "loss_target" if self.log and self.log[0]["loss_target"] != "" else "loss_readout"
        return np.array([float(r[key]) for r in self.log])


def _fmt(x) -> str:
    return "" if x is None else repr(float(x))


def save_optimizer(path, names: list, state: AdamState, cfg, step: int) -> None:
    arrays = {f"m/{n}": m for n, m in zip(names, state.m)}
    arrays.update({f"v/{n}": v for n, v in zip(names, state.v)})
    save_checkpoint(path, arrays, cfg, step)


def load_optimizer(path, names: list) -> AdamState:
    """Adam moments written next to a checkpoint; the update count is the sidecar step."""
    _, arrays = read_checkpoint(path)
    step = json.loads(Path(path).with_suffix(".json").read_text())["step"]
    if not arrays:
        return AdamState(step=step)
    return AdamState([arrays[f"m/{n}"] for n in names], [arrays[f"v/{n}"] for n in names], step)


def _truncate_log(path: Path, start_step: int) -> None:
    """Drop log rows at or after ``start_step`` so a resumed run appends cleanly."""
    lines = path.read_text().splitlines(keepends=True)
    keep = lines[:1] + [ln for ln in lines[1:] if int(ln.split(",", 1)[0]) < start_step]
    path.write_text("".join(keep))


def train_loop(model: SAVi, videos, cfg: TrainConfig, out_dir=None, flow_max: float = 1.0,
               start_step: int = 0, progress=None, opt_state: AdamState | None = None) -> TrainResult:
    """Adam on sampled sub-sequences with warmup+cosine lr and global-norm clipping.

    Writes ``loss_log.csv``, ``ckpt_XXXXXX.bin`` checkpoints (including the
    initial state) and matching ``opt_XXXXXX.bin`` Adam moments when
    ``out_dir`` is given. Resuming at ``start_step`` with the model and
    ``opt_state`` loaded from that step reproduces an uninterrupted run.
    """
    if not videos:
        raise ValueError("training set is empty")
    if cfg.supervised and model.decoder is not None:
        raise ValueError("supervised training expects a model built without a decoder")
    if not cfg.supervised and model.cfg.target_channels != cfg.target_channels:
        raise ValueError(f"model predicts {model.cfg.target_channels} channels, targets have {cfg.target_channels}")
    out = Path(out_dir) if out_dir is not None else None
    params = model.parameters()
    names = [n for n, _ in model.named_parameters()]
    state = opt_state if opt_state is not None else AdamState()
    log, ckpts = [], []
    writer = fh = None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        if start_step > 0:
            _truncate_log(out / "loss_log.csv", start_step)
        fh = open(out / "loss_log.csv", "w" if start_step == 0 else "a", newline="")
        writer = csv.writer(fh, lineterminator="\n")
        if start_step == 0:
            writer.writerow(LOG_FIELDS)

    def checkpoint(step):
        if out is None:
            return
        path = out / f"ckpt_{step:06d}.bin"
        save_checkpoint(path, dict(zip(names, (p.data for p in params))), model.cfg, step)
        save_optimizer(out / f"opt_{step:06d}.bin", names, state, model.cfg, step)
        ckpts.append(path)

    t0 = time.time()
    try:
        if start_step == 0:
            checkpoint(0)
        for step in range(start_step, cfg.total_steps):
            lr = lr_schedule(step, cfg.total_steps, cfg.warmup_steps, cfg.peak_lr)
            batch = build_batch(videos, cfg, step, model.cfg.num_slots, flow_max)
            model.zero_grad()
            total, target, readout = compute_losses(model, batch, cfg)
            if not np.isfinite(total.item()):
                raise TrainingDiverged(step, "loss")
            total.backward()
            grads = [p.grad if p.grad is not None else np.zeros_like(p.data) for p in params]
            grads, norm = clip_global_norm(grads, cfg.clip_norm)
            if not np.isfinite(norm):
                raise TrainingDiverged(step, "gradient norm")
            adam_step(params, grads, state, lr)
            row = {"step": str(step), "lr": _fmt(lr), "loss_target": _fmt(target.item() if target is not None else None),
                   "loss_readout": _fmt(readout.item()), "grad_norm": _fmt(norm)}
            log.append(row)
            if writer is not None:
                writer.writerow([row[k] for k in LOG_FIELDS])
            if (step + 1) % cfg.checkpoint_every == 0 or step + 1 == cfg.total_steps:
                checkpoint(step + 1)
            if progress is not None:
                progress(step, row)
    finally:
        if fh is not None:
            fh.close()
    return TrainResult(log, ckpts, time.time() - t0)


def supervised_model_config(model_cfg):
    """Variant without a decoder; box readout trained directly from conditional slots."""
    return model_cfg.replace(use_decoder=False, conditional=True)


def train_supervised_variant(model_cfg, videos, cfg: TrainConfig, out_dir=None, flow_max: float = 1.0):
    model = SAVi(supervised_model_config(model_cfg))
    cfg = dataclasses.replace(cfg, supervised=True)
    return model, train_loop(model, videos, cfg, out_dir, flow_max)


def read_loss_log(path) -> list:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))
