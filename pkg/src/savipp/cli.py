"""Command line: generate, train, eval, baseline, visualize.

Exit codes: 0 success, 2 usage error, 1 runtime failure. Every command writes
``resolved_config.json`` next to its outputs; ``--config`` reads such a file
(or any subset of its keys) back as defaults, and explicit flags still win.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .baselines import train_bbox_propagation
from .evaluate import evaluate_baseline, evaluate_model, predict_video
from .model import CheckpointMismatch, SAVi, full_config, load_checkpoint, load_config, smoke_config, tiny_config
from .scenegen import Dataset, DatasetConfig, generate_dataset
from .targets import target_channels
from .train import TrainConfig, TrainingDiverged, load_optimizer, train_loop, train_supervised_variant
from .visualize import render_panels, save_png

PRESETS = {"smoke": smoke_config, "tiny": tiny_config, "full": full_config}
RESOLVED = "resolved_config.json"
# keys in resolved_config.json that describe the invocation rather than parameters
META_KEYS = {"command", "model", "train", "dataset", "video"}


class UsageError(Exception):
    pass


def parse_resolution(text: str) -> tuple:
    parts = text.lower().replace(",", "x").split("x")
    try:
        vals = tuple(int(p) for p in parts)
    except ValueError:
        raise argparse.ArgumentTypeError(f"resolution must be N or HxW, got {text!r}") from None
    if len(vals) == 1:
        vals = vals * 2
    if len(vals) != 2 or min(vals) < 1:
        raise argparse.ArgumentTypeError(f"resolution must be N or HxW, got {text!r}")
    return vals


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="savipp", description="Depth-supervised slot video models")
    sub = ap.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="render a synthetic video dataset")
    g.add_argument("--out", required=True)
    g.add_argument("--regime", choices=["c", "d", "e"], default="c",
                   help="c: all objects move; d: some static; e: d plus moving camera")
    g.add_argument("--videos", type=int, default=8, help="training videos")
    g.add_argument("--val-videos", type=int, default=None, help="held-out videos (default: videos // 10, min 1)")
    g.add_argument("--resolution", type=parse_resolution, default=(64, 64))
    g.add_argument("--frames", type=int, default=8)
    g.add_argument("--min-objects", type=int, default=3)
    g.add_argument("--max-objects", type=int, default=6)
    g.add_argument("--sparse-density", type=float, default=0.1)
    g.add_argument("--sparse-pattern", choices=["scanline", "uniform"], default="scanline")
    g.add_argument("--noise-sigma", type=float, default=0.0, help="stored noise on sparse depth (world units)")
    g.add_argument("--fov", type=float, default=45.0)
    g.add_argument("--seed", type=int, default=0)

    t = sub.add_parser("train", help="train a model on a generated dataset")
    t.add_argument("--data", required=True)
    t.add_argument("--out", required=True)
    t.add_argument("--preset", choices=sorted(PRESETS), default="smoke")
    t.add_argument("--num-slots", type=int, default=None)
    t.add_argument("--targets", default="depth", help="depth, flow, or depth+flow")
    t.add_argument("--no-transformer", action="store_true")
    t.add_argument("--no-augment", action="store_true")
    cond = t.add_mutually_exclusive_group()
    cond.add_argument("--conditional", dest="conditional", action="store_true", default=True)
    cond.add_argument("--unconditional", dest="conditional", action="store_false")
    t.add_argument("--supervised", action="store_true", help="no decoder; box readout trained directly")
    t.add_argument("--sparse", action="store_true", help="supervise depth only at sparse points")
    t.add_argument("--noise-sigma", type=float, default=0.0, help="train-time noise on sparse depth")
    t.add_argument("--steps", type=int, default=2000)
    t.add_argument("--warmup", type=int, default=100)
    t.add_argument("--lr", type=float, default=2e-4)
    t.add_argument("--batch-size", type=int, default=4)
    t.add_argument("--seq-len", type=int, default=6)
    t.add_argument("--clip", type=float, default=0.05)
    t.add_argument("--min-cover", type=float, default=0.2)
    t.add_argument("--checkpoint-every", type=int, default=500)
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--resume", action="store_true", help="continue from the newest checkpoint in --out")

    e = sub.add_parser("eval", help="score a checkpoint on held-out clips")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--out", required=True)
    e.add_argument("--split", default="val")
    e.add_argument("--frames", type=int, default=None, help="evaluation length (default: whole clip)")
    e.add_argument("--matching", choices=["ordered", "hungarian"], default=None,
                   help="default: ordered for conditional models, hungarian otherwise")
    e.add_argument("--sparse-centroid", action="store_true", help="centroids from sparse points only")

    b = sub.add_parser("baseline", help="score a reference baseline")
    b.add_argument("--kind", choices=["bbox_copy", "kmeans", "bbox_propagation"], required=True)
    b.add_argument("--data", required=True)
    b.add_argument("--out", required=True)
    b.add_argument("--split", default="val")
    b.add_argument("--frames", type=int, default=None)
    b.add_argument("--features", default="depth", help="k-means features: depth, flow, or depth+flow")
    b.add_argument("--sparse", action="store_true", help="k-means on sparse depth points")
    b.add_argument("--num-slots", type=int, default=None)
    b.add_argument("--steps", type=int, default=2000, help="box propagation training steps")
    b.add_argument("--seed", type=int, default=0)

    v = sub.add_parser("visualize", help="write a PNG frame grid for one clip")
    v.add_argument("--checkpoint", required=True)
    v.add_argument("--data", required=True)
    v.add_argument("--out", required=True, help="output PNG path")
    v.add_argument("--video", default=None, help="clip name or index into the held-out split (default: first held-out clip)")
    v.add_argument("--frames", type=int, default=None)
    v.add_argument("--filter", action="store_true", help="hide masks larger than the scaled area threshold")
    v.add_argument("--no-gt", action="store_true", help="omit the ground-truth mask row")

    for p in (g, t, e, b, v):
        p.add_argument("--config", default=None, help="JSON file of parameter defaults; unknown keys rejected")
    return ap


def apply_config_file(ap: argparse.ArgumentParser, argv: list) -> argparse.Namespace:
    # first pass with required flags relaxed, since the config file may supply them
    subparsers = ap._subparsers._group_actions[0].choices
    required = [a for sub in subparsers.values() for a in sub._actions if a.required]
    for a in required:
        a.required = False
    try:
        args = ap.parse_args(argv)
    finally:
        for a in required:
            a.required = True
    if args.config is None:
        return ap.parse_args(argv)
    sub = subparsers[args.command]
    dests = {a.dest for a in sub._actions if a.dest not in ("help", "config")}
    try:
        data = json.loads(Path(args.config).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise UsageError(f"cannot read --config: {exc}") from None
    if not isinstance(data, dict):
        raise UsageError("--config must hold a JSON object")
    params = {k: v for k, v in data.items() if k not in META_KEYS}
    unknown = sorted(set(params) - dests)
    if unknown:
        raise UsageError(f"unknown keys in {args.config} for '{args.command}': {unknown}")
    if "resolution" in params:
        params["resolution"] = tuple(params["resolution"])
    sub.set_defaults(**params)
    supplied = [a for a in sub._actions if a.required and a.dest in params]
    for a in supplied:
        a.required = False
    try:
        return ap.parse_args(argv)
    finally:
        for a in supplied:
            a.required = True


def write_resolved(out_dir, args: argparse.Namespace, **extra) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    d = {k: (list(v) if isinstance(v, tuple) else v) for k, v in vars(args).items() if k != "config"}
    d.update(extra)
    (out / RESOLVED).write_text(json.dumps(d, indent=2, sort_keys=True) + "\n")


# -- commands ----------------------------------------------------------------

def cmd_generate(args) -> int:
    val = args.val_videos if args.val_videos is not None else max(1, args.videos // 10)
    try:
        cfg = DatasetConfig(out=args.out, regime=args.regime, num_train=args.videos, num_val=val,
                            resolution=args.resolution, frames=args.frames, min_objects=args.min_objects,
                            max_objects=args.max_objects, sparse_density=args.sparse_density,
                            sparse_pattern=args.sparse_pattern, noise_sigma=args.noise_sigma,
                            fov_degrees=args.fov, seed=args.seed)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    args.val_videos = val
    manifest = generate_dataset(cfg)
    write_resolved(args.out, args, dataset=cfg.to_dict())
    print(f"wrote {len(manifest['videos'])} videos to {args.out}")
    return 0


def model_config_for(args, dataset: Dataset):
    h, w = dataset.manifest["shapes"]["depth"][1:]
    base = PRESETS[args.preset]()
    up = 2 ** len(base.decoder_channels)
    kw = dict(resolution=(h, w), decoder_grid=(h // up, w // up), target_channels=target_channels(args.targets),
              use_transformer=not args.no_transformer, conditional=args.conditional, seed=args.seed)
    if args.num_slots is not None:
        kw["num_slots"] = args.num_slots
    cfg = base.replace(**kw)
    cfg.validate()
    return cfg


def _latest_checkpoint(out: Path):
    ckpts = sorted(out.glob("ckpt_*.bin"))
    return ckpts[-1] if ckpts else None


def cmd_train(args) -> int:
    data = Dataset(args.data)
    try:
        train_cfg = TrainConfig(total_steps=args.steps, warmup_steps=args.warmup, peak_lr=args.lr,
                                batch_size=args.batch_size, clip_norm=args.clip, seq_len=args.seq_len,
                                targets=args.targets, sparse=args.sparse, noise_sigma=args.noise_sigma,
                                augment=not args.no_augment, min_cover=args.min_cover, seed=args.seed,
                                checkpoint_every=args.checkpoint_every)
        model_cfg = model_config_for(args, data)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    videos = data.split("train")
    out = Path(args.out)
    if args.supervised:
        model, res = train_supervised_variant(model_cfg, videos, train_cfg, out, data.flow_max_magnitude)
        write_resolved(out, args, model=model.cfg.to_dict(), train=train_cfg.to_dict())
        print(f"trained {len(res.log)} steps in {res.seconds:.1f}s")
        return 0
    model = SAVi(model_cfg)
    start, opt_state = 0, None
    if args.resume:
        prev = out / RESOLVED
        ckpt = _latest_checkpoint(out)
        if not prev.exists() or ckpt is None:
            raise RuntimeError(f"nothing to resume in {out}")
        old = json.loads(prev.read_text())
        if old.get("model") != model_cfg.to_dict() or old.get("train") != train_cfg.to_dict():
            raise CheckpointMismatch(
                f"refusing to resume: the model/train config resolved from these flags differs from "
                f"{prev}; rerun with --config {prev} --resume to continue that run")
        load_checkpoint(ckpt, model)
        start = json.loads(ckpt.with_suffix(".json").read_text())["step"]
        opt = out / ckpt.name.replace("ckpt_", "opt_")
        opt_state = load_optimizer(opt, [n for n, _ in model.named_parameters()])
    write_resolved(out, args, model=model_cfg.to_dict(), train=train_cfg.to_dict())
    res = train_loop(model, videos, train_cfg, out, data.flow_max_magnitude, start_step=start, opt_state=opt_state)
    print(f"trained steps {start}..{train_cfg.total_steps} in {res.seconds:.1f}s; checkpoints in {out}")
    return 0


def load_model(path) -> SAVi:
    model = SAVi(load_config(path))
    load_checkpoint(path, model)
    return model


def cmd_eval(args) -> int:
    model = load_model(args.checkpoint)
    videos = Dataset(args.data).split(args.split)
    if not videos:
        raise UsageError(f"split {args.split!r} is empty")
    if model.decoder is None:
        raise UsageError("checkpoint has no decoder; masks cannot be evaluated")
    report = evaluate_model(model, videos, args.matching, args.frames, args.sparse_centroid)
    report.write(args.out)
    args.matching = args.matching or ("ordered" if model.cfg.conditional else "hungarian")
    write_resolved(args.out, args, model=model.cfg.to_dict())
    print(json.dumps(report.aggregate(), sort_keys=True))
    return 0


def cmd_baseline(args) -> int:
    data = Dataset(args.data)
    videos = data.split(args.split)
    if not videos:
        raise UsageError(f"split {args.split!r} is empty")
    k = args.num_slots or data.max_objects
    box_model = None
    extra = {}
    if args.kind == "bbox_propagation":
        model_cfg = smoke_config(num_slots=k, seed=args.seed)
        train_cfg = TrainConfig(total_steps=args.steps, warmup_steps=min(100, max(args.steps - 1, 0)),
                                seed=args.seed)
        box_model, _ = train_bbox_propagation(data.split("train"), model_cfg, train_cfg)
        extra = {"model": model_cfg.to_dict(), "train": train_cfg.to_dict()}
    report = evaluate_baseline(args.kind, videos, k, args.features, data.flow_max_magnitude, args.frames,
                               args.sparse, box_model)
    report.write(args.out)
    write_resolved(args.out, args, **extra)
    print(json.dumps(report.aggregate(), sort_keys=True))
    return 0


def cmd_visualize(args) -> int:
    model = load_model(args.checkpoint)
    if model.decoder is None:
        raise UsageError("checkpoint has no decoder; nothing to draw")
    data = Dataset(args.data)
    names = data.names("val") or data.names("train")
    name = args.video or names[0]
    if name.isdigit():
        if int(name) >= len(names):
            raise UsageError(f"video index {name} out of range ({len(names)} clips)")
        name = names[int(name)]
    video = data.video(name)
    pred = predict_video(model, video, args.frames)
    t = pred["masks"].shape[0]
    log_depth = pred["prediction"][..., 0] if "depth" in _targets_of(model) else None
    img = render_panels(video.rgb[:t], pred["masks"], log_depth, None if args.no_gt else video.masks[:t],
                        args.filter)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_png(out, img)
    write_resolved(out.parent, args, model=model.cfg.to_dict(), video=name)
    print(f"wrote {out} ({img.shape[1]}x{img.shape[0]})")
    return 0


def _targets_of(model) -> str:
    # depth occupies channel 0 whenever it is selected; flow alone is 3 channels
    return "flow" if model.cfg.target_channels == 3 else "depth"


COMMANDS = {"generate": cmd_generate, "train": cmd_train, "eval": cmd_eval, "baseline": cmd_baseline,
            "visualize": cmd_visualize}


def main(argv=None) -> int:
    ap = build_parser()
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args = apply_config_file(ap, argv)
        return COMMANDS[args.command](args)
    except SystemExit as exc:  # argparse usage errors
        return int(exc.code) if isinstance(exc.code, int) else 2
    except UsageError as exc:
        print(f"savipp {argv[0] if argv else ''}: error: {exc}", file=sys.stderr)
        return 2
    except TrainingDiverged as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (OSError, ValueError, RuntimeError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
