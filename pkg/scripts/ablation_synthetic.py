"""Desk-scale ablation over fusion kind, dilation rate and module kind.

Each variant trains for a fixed step budget on augmented synthetic stick
figures and is scored on a held-out synthetic split with PCK@0.2. Numbers
from this script only indicate relative trends on toy data; they say
nothing about MPII accuracy.

    python scripts/ablation_synthetic.py --steps 300 --out runs/ablation.md
"""
import argparse
import dataclasses
from pathlib import Path

import torch

from spcnet.config import AugmentConfig, OptimizerSchedule, PCKConfig, SPCNetConfig
from spcnet.data import PoseDataset, SyntheticSceneSpec, generate_synthetic_dataset
from spcnet.evaluation import format_report
from spcnet.model import build_model, count_parameters
from spcnet.trainer import Trainer, evaluate

VARIANTS = {
    "DHM + SIM (R=2)": {},
    "DHM + sum (R=2)": {"fusion_kind": "sum"},
    "DHM + concat (R=2)": {"fusion_kind": "concat"},
    "DHM, no fusion head": {"fusion_kind": "none"},
    "DHM + SIM (R=1)": {"dilation": 1},
    "DHM + SIM (R=3)": {"dilation": 3},
    "hourglass + SIM": {"module_kind": "hourglass"},
}


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--train-count", type=int, default=64)
    ap.add_argument("--val-count", type=int, default=32)
    ap.add_argument("--steps", type=int, default=300)
    ap.add_argument("--stacks", type=int, default=2)
    ap.add_argument("--channels", type=int, default=32)
    ap.add_argument("--input-size", type=int, default=128)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--only", nargs="*", help="subset of variant names")
    ap.add_argument("--out", type=Path)
    args = ap.parse_args()

    spec = SyntheticSceneSpec(canvas_size=args.input_size)
    train_imgs, train_recs = generate_synthetic_dataset(spec, args.train_count, args.seed)
    val_imgs, val_recs = generate_synthetic_dataset(spec, args.val_count, args.seed + 1, split="val")
    base = SPCNetConfig(stack_count=args.stacks, base_channels=args.channels, input_size=args.input_size)
    sched = OptimizerSchedule(base_lr=1e-3, milestones=(), total_epochs=10**6, batch_size=16)
    aug = AugmentConfig(rotation=30.0, scale_range=(0.85, 1.15))
    metric = PCKConfig(variant="pck", threshold=0.2)
    rows = []
    for name, overrides in VARIANTS.items():
        if args.only and name not in args.only:
            continue
        torch.manual_seed(args.seed)
        cfg = dataclasses.replace(base, **overrides)
        train = PoseDataset(train_recs, cfg.codec(), images=train_imgs, augment=aug, seed=args.seed)
        val = PoseDataset(val_recs, cfg.codec(), images=val_imgs)
        model = build_model(cfg, args.seed)
        Trainer(model, sched, seed=args.seed).fit(train, max_steps=args.steps)
        rep = evaluate(model, val, metric)
        row = format_report(rep, "markdown", label=f"{name} [{count_parameters(model) / 1e6:.2f}M]")
        rows.append(row.splitlines()[-1])
        print(rows[-1], flush=True)
    header = format_report(rep, "markdown", label="x").splitlines()[:2]
    table = "\n".join(header + rows) + "\n"
    print(table)
    if args.out:
        args.out.parent.mkdir(parents=True, exist_ok=True)
        args.out.write_text(table)


if __name__ == "__main__":
    main()
