"""Command-line entry points: train, eval, infer, synth-data, plot-curves.

Every command returns 0 on success. Expected failures (bad config, bad
annotations, unreadable files, divergence) print a one-line ``error:``
message and return 1; argparse usage errors exit with status 2.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import torch

from .config import DEFAULT_TEST_SCALES, ConfigError, DataError, PCKConfig, load_config
from .data import (
    PoseDataset,
    SyntheticSceneSpec,
    generate_synthetic_dataset,
    load_annotations,
    normalize_image,
    read_image,
    warp_image,
    write_dataset,
)
from .evaluation import (
    emit_report,
    format_report,
    pck_curve,
    pck_score,
    plot_curve,
    render_heatmap_overlay,
    write_curve_csv,
)
from .heatmap_codec import build_crop_transform
from .inference import infer_single
from .model import build_model
from .sim import save_weight_maps
from .trainer import Trainer, TrainingDiverged, load_checkpoint, load_model, predict_dataset

log = logging.getLogger("spcnet")


def _dataset(ann: str | Path, model, image_root=None, **kw) -> PoseDataset:
    ann = Path(ann)
    records = load_annotations(ann)
    root = Path(image_root) if image_root else ann.parent
    return PoseDataset(records, model.cfg.codec(), image_root=root, **kw)


def cmd_train(args) -> int:
    cfg = load_config(args.config)
    if not cfg.data.train_ann:
        raise ConfigError("data.train_ann is required for training")
    out = Path(cfg.train.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    torch.manual_seed(cfg.train.seed)
    model = build_model(cfg.model, cfg.train.seed).to(cfg.train.device)
    data_kw = dict(flip_pairs=cfg.data.flip_pairs, mean=cfg.data.mean, std=cfg.data.std,
                   supervise_occluded=cfg.data.supervise_occluded)
    train_ds = _dataset(cfg.data.train_ann, model, cfg.data.image_root,
                        augment=cfg.augment if cfg.train.augment else None, seed=cfg.train.seed, **data_kw)
    val_ds = _dataset(cfg.data.val_ann, model, cfg.data.image_root, **data_kw) if cfg.data.val_ann else None
    trainer = Trainer(model, cfg.schedule, seed=cfg.train.seed, log_path=out / "train.jsonl",
                      log_every=cfg.train.log_every)
    if args.resume:
        load_checkpoint(trainer, args.resume)
        log.info("resumed at epoch %d step %d", trainer.state.epoch, trainer.state.global_step)
    st = trainer.fit(train_ds, val_ds, PCKConfig.parse(cfg.train.metric), eval_every=cfg.train.eval_every,
                     max_steps=args.max_steps, checkpoint_dir=out)
    best = "n/a" if not st.metrics else f"{100 * st.best_metric:.1f}"
    print(f"trained {st.epoch} epochs, {st.global_step} steps; best {cfg.train.metric} {best}; "
          f"checkpoints in {out}")
    return 0


def cmd_eval(args) -> int:
    model = load_model(args.ckpt)
    ds = _dataset(args.ann, model, args.image_root)
    scales = DEFAULT_TEST_SCALES if args.multiscale else None
    preds = predict_dataset(model, ds, flip=args.flip, scales=scales)
    report = pck_score(preds, ds.records, PCKConfig.parse(args.metric))
    label = args.label or Path(args.ckpt).stem
    print(format_report(report, "markdown", label), end="")
    if args.out:
        emit_report(report, args.out, label=label)
    return 0


def cmd_infer(args) -> int:
    model = load_model(args.ckpt)
    codec = model.cfg.codec()
    image = read_image(args.image)
    h, w = image.shape[:2]
    center = tuple(args.center) if args.center else (w / 2, h / 2)
    scale = args.scale if args.scale else max(h, w) / 200.0
    t = build_crop_transform(center, scale, codec)
    crop = warp_image(image, t.matrix, codec.input_size)
    x = torch.from_numpy(normalize_image(crop))
    kps, hm = infer_single(model, x, t, codec)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    stem = Path(args.image).stem
    (out / f"{stem}_keypoints.json").write_text(json.dumps({
        "image": str(args.image), "joints": kps.coords.tolist(), "visibility": kps.visibility.tolist(),
    }, indent=1))
    render_heatmap_overlay(crop, hm, out / f"{stem}_overlay.png")
    if model.cfg.fusion_kind == "sim":
        with torch.no_grad():
            p = next(model.parameters())
            weights = model(x[None].to(p.device, p.dtype)).weights
        save_weight_maps(weights, out, prefix=f"{stem}_fusion")
    print(f"wrote predictions for {args.image} to {out}")
    return 0


def cmd_synth(args) -> int:
    spec = SyntheticSceneSpec(canvas_size=args.canvas, seed=args.seed)
    images, records = generate_synthetic_dataset(spec, args.count, args.seed, split=args.split)
    ann = write_dataset(images, records, args.out)
    print(f"wrote {args.count} images and {ann}")
    return 0


def cmd_curves(args) -> int:
    model = load_model(args.ckpt)
    ds = _dataset(args.ann, model, args.image_root)
    cfg = PCKConfig.parse(args.metric)
    curve = pck_curve(predict_dataset(model, ds), ds.records, cfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_curve_csv(curve, out / "pck_curve.csv")
    plot_curve(curve, out / "pck_curve.png", title=f"{cfg.variant.upper()} curve")
    print(f"wrote {out / 'pck_curve.csv'} and {out / 'pck_curve.png'}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="spcnet", description="SPCNet pose estimation toolkit")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train from a YAML config")
    t.add_argument("--config", required=True)
    t.add_argument("--resume", help="checkpoint to resume from")
    t.add_argument("--max-steps", type=int, default=None, help="stop after this many optimizer steps")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="score a checkpoint on an annotation file")
    e.add_argument("--ckpt", required=True)
    e.add_argument("--ann", required=True)
    e.add_argument("--metric", default="pckh@0.5", help="pckh@0.5 or pck@0.2 (any threshold)")
    e.add_argument("--flip", action="store_true")
    e.add_argument("--multiscale", action="store_true")
    e.add_argument("--image-root")
    e.add_argument("--out", help="write the report (.csv or .md)")
    e.add_argument("--label")
    e.set_defaults(func=cmd_eval)

    i = sub.add_parser("infer", help="predict keypoints for one image")
    i.add_argument("--ckpt", required=True)
    i.add_argument("--image", required=True)
    i.add_argument("--out", required=True)
    i.add_argument("--center", type=float, nargs=2, metavar=("X", "Y"))
    i.add_argument("--scale", type=float, help="person scale (box = 200 * scale px)")
    i.set_defaults(func=cmd_infer)

    s = sub.add_parser("synth-data", help="render a synthetic stick-figure dataset")
    s.add_argument("--count", type=int, required=True)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.add_argument("--canvas", type=int, default=128)
    s.add_argument("--split", default="train", choices=("train", "val", "test"))
    s.set_defaults(func=cmd_synth)

    c = sub.add_parser("plot-curves", help="PCK-vs-threshold table and plot")
    c.add_argument("--ckpt", required=True)
    c.add_argument("--ann", required=True)
    c.add_argument("--out", required=True)
    c.add_argument("--metric", default="pckh@0.5")
    c.add_argument("--image-root")
    c.set_defaults(func=cmd_curves)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s")
    try:
        return args.func(args)
    except (ConfigError, DataError, TrainingDiverged, OSError) as exc:
        msg = " ".join(str(exc).split())
        print(f"error: {msg}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
