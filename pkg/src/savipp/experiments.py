"""Seed-pinned training experiments shared by the scripts and the acceptance suite.

Each run is cached as JSON under ``results/`` keyed by its full configuration
plus a digest of the package source that determines the numbers; set
``SVPP_RECOMPUTE=1`` to ignore the cache.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import os
import time
from pathlib import Path

import numpy as np

from .evaluate import evaluate_baseline, evaluate_model
from .model import SAVi, smoke_config
from .scenegen import Dataset, DatasetConfig, generate_dataset
from .train import TrainConfig, train_loop

PACKAGE_DIR = Path(__file__).resolve().parent
REPO_DIR = PACKAGE_DIR.parent.parent
RESULTS_DIR = REPO_DIR / "results"
DIGEST_PARTS = ("ndgrad", "model", "train", "scenegen", "augment.py", "targets.py", "metrics.py",
                "baselines.py", "evaluate.py", "experiments.py")

SMOKE_DATA = DatasetConfig(out="", regime="c", num_train=200, num_val=20, resolution=(64, 64), frames=8,
                           min_objects=3, max_objects=3, sparse_density=0.1, seed=0)
NOISE_DATA = DatasetConfig(out="", regime="e", num_train=200, num_val=20, resolution=(64, 64), frames=8,
                           min_objects=3, max_objects=3, sparse_density=0.1, seed=1)
SMOKE_TRAIN = TrainConfig(total_steps=2000, warmup_steps=100, peak_lr=2e-4, batch_size=4, clip_norm=0.05,
                          seq_len=6, targets="depth", augment=True, min_cover=0.2, seed=0,
                          checkpoint_every=1000)
NOISE_SIGMAS = (0.0, 0.1, 0.2, 0.4)


def source_digest() -> str:
    h = hashlib.sha256()
    files = []
    for part in DIGEST_PARTS:
        p = PACKAGE_DIR / part
        files.extend(sorted(p.rglob("*.py")) if p.is_dir() else [p])
    for f in files:
        h.update(str(f.relative_to(PACKAGE_DIR)).encode())
        h.update(f.read_bytes())
    return h.hexdigest()


def cached(name: str, key: dict, compute, results_dir=None) -> dict:
    """Return the stored result for ``key`` or compute and store it."""
    results_dir = Path(results_dir or RESULTS_DIR)
    path = results_dir / f"{name}.json"
    key = dict(key, source=source_digest())
    if path.exists() and os.environ.get("SVPP_RECOMPUTE", "") in ("", "0"):
        stored = json.loads(path.read_text())
        if stored.get("key") == key:
            return stored["result"]
    result = compute()
    results_dir.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps({"key": key, "result": result}, indent=2, sort_keys=True) + "\n")
    return result


def ensure_dataset(cfg: DatasetConfig, root) -> Dataset:
    """Generate ``cfg`` under ``root`` unless an identical manifest is already there."""
    root = Path(root)
    cfg = dataclasses.replace(cfg, out=str(root))
    manifest = root / "manifest.json"
    if manifest.exists():
        stored = json.loads(manifest.read_text())["config"]
        if stored == {k: v for k, v in cfg.to_dict().items() if k != "out"}:
            return Dataset(root)
    generate_dataset(cfg)
    return Dataset(root)


def loss_window_means(losses: np.ndarray, early=(0, 100), late=(1900, 2000)) -> tuple[float, float]:
    return float(np.mean(losses[early[0]:early[1]])), float(np.mean(losses[late[0]:late[1]]))


def _train(model_cfg, train_cfg: TrainConfig, data: Dataset, out_dir, progress=None):
    model = SAVi(model_cfg)
    res = train_loop(model, data.split("train"), train_cfg, out_dir, data.flow_max_magnitude, progress=progress)
    return model, res


def run_smoke(work_dir, progress=None) -> dict:
    """Depth-only conditional training on the static-camera set, then held-out FG-ARI vs baselines."""
    work = Path(work_dir)
    data = ensure_dataset(SMOKE_DATA, work / "smoke_data")
    model_cfg = smoke_config(target_channels=1)
    t0 = time.time()
    model, res = _train(model_cfg, SMOKE_TRAIN, data, work / "smoke_run", progress)
    losses = res.losses()
    early, late = loss_window_means(losses)
    val = data.split("val")
    model_report = evaluate_model(model, val, "ordered")
    km = evaluate_baseline("kmeans", val, model_cfg.num_slots, "depth")
    bc = evaluate_baseline("bbox_copy", val, model_cfg.num_slots)
    return {
        "steps": len(losses), "loss_early_mean": early, "loss_late_mean": late,
        "loss_ratio": late / early, "finite": bool(np.all(np.isfinite(losses))),
        "train_seconds": res.seconds, "total_seconds": time.time() - t0,
        "model": model_report.aggregate(), "kmeans_depth": km.aggregate(), "bbox_copy": bc.aggregate(),
        "losses": [float(x) for x in losses],
    }


def smoke_key() -> dict:
    return {"data": SMOKE_DATA.to_dict(), "train": SMOKE_TRAIN.to_dict(),
            "model": smoke_config(target_channels=1).to_dict()}


def noise_train_config(sigma: float) -> TrainConfig:
    return dataclasses.replace(SMOKE_TRAIN, sparse=True, noise_sigma=sigma, min_cover=0.75)


def run_noise(sigma: float, work_dir, progress=None) -> dict:
    """Sparse, noisy depth supervision on the moving-camera set."""
    work = Path(work_dir)
    data = ensure_dataset(NOISE_DATA, work / "noise_data")
    model_cfg = smoke_config(target_channels=1)
    try:
        _, res = _train(model_cfg, noise_train_config(sigma), data, work / f"noise_{sigma:g}", progress)
    except Exception as exc:  # divergence is a result here, not a crash
        return {"sigma": sigma, "completed": False, "error": str(exc)}
    losses = res.losses()
    early, late = loss_window_means(losses)
    return {"sigma": sigma, "completed": True, "steps": len(losses), "finite": bool(np.all(np.isfinite(losses))),
            "loss_early_mean": early, "loss_late_mean": late, "train_seconds": res.seconds}


def noise_key(sigma: float) -> dict:
    return {"data": NOISE_DATA.to_dict(), "train": noise_train_config(sigma).to_dict(),
            "model": smoke_config(target_channels=1).to_dict()}


def smoke_result(work_dir, results_dir=None, progress=None) -> dict:
    return cached("smoke", smoke_key(), lambda: run_smoke(work_dir, progress), results_dir)


def noise_result(sigma: float, work_dir, results_dir=None, progress=None) -> dict:
    return cached(f"noise_{sigma:g}", noise_key(sigma), lambda: run_noise(sigma, work_dir, progress), results_dir)
