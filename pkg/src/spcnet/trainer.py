"""RMSProp training loop with step-decay schedule, validation and checkpoints.

Checkpoint layout: ``<name>.pt`` is a ``torch.save`` dict with keys
``model`` (state dict keyed by module path), ``optimizer`` and ``state``;
``<name>.json`` is a sidecar with the model config, its hash, epoch, step
and the latest metric.
"""
from __future__ import annotations

import dataclasses
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
import torch

from .config import ConfigError, OptimizerSchedule, PCKConfig, SPCNetConfig
from .data import PoseDataset
from .evaluation import EvalReport, pck_score
from .heatmap_codec import build_crop_transform
from .inference import heatmaps_to_image_keypoints, infer_flip, infer_multiscale, predict_heatmaps
from .model import SPCNet, compute_loss

log = logging.getLogger(__name__)

CHECKPOINT_VERSION = 1


class TrainingDiverged(RuntimeError):
    pass


class CheckpointMismatch(ConfigError):
    pass


def lr_at_epoch(sched: OptimizerSchedule, epoch: int) -> float:
    if not 0 <= epoch < sched.total_epochs:
        raise ConfigError(f"epoch {epoch} outside [0, {sched.total_epochs})")
    drops = sum(1 for m in sched.milestones if m <= epoch)
    return sched.base_lr * sched.decay_factor**drops


@dataclass
class TrainState:
    epoch: int = 0  # next epoch to run
    global_step: int = 0
    best_metric: float = -math.inf
    seed: int = 0
    losses: list[float] = field(default_factory=list)
    metrics: list[tuple[int, float]] = field(default_factory=list)


def make_optimizer(model: torch.nn.Module, sched: OptimizerSchedule) -> torch.optim.Optimizer:
    return torch.optim.RMSprop(model.parameters(), lr=sched.base_lr, alpha=sched.rms_alpha,
                               eps=sched.rms_eps, weight_decay=sched.weight_decay)


def _collate(items):
    imgs, targets, masks, idx = zip(*items)
    return torch.stack(imgs), torch.stack(targets), torch.stack(masks), list(idx)


@torch.no_grad()
def predict_dataset(model: SPCNet, dataset: PoseDataset, flip: bool = False,
                    scales: Sequence[float] | None = None, batch_size: int = 16):
    """Image-frame keypoints for every record of ``dataset`` (no augmentation)."""
    model.eval()
    saved_aug, dataset.augment = dataset.augment, None
    preds = []
    try:
        for start in range(0, len(dataset), batch_size):
            imgs, _, _, idx = _collate([dataset[i] for i in range(start, min(start + batch_size, len(dataset)))])
            if scales:
                hm = infer_multiscale(model, imgs, scales, flip, dataset.flip_pairs)
            elif flip:
                hm = infer_flip(model, imgs, dataset.flip_pairs)
            else:
                hm = predict_heatmaps(model, imgs)
            for h, i in zip(hm.float().cpu().numpy(), idx):
                rec = dataset.records[i]
                t = build_crop_transform(rec.center, rec.scale, dataset.codec)
                preds.append(heatmaps_to_image_keypoints(h, t, dataset.codec))
    finally:
        dataset.augment = saved_aug
    return preds


def evaluate(model: SPCNet, dataset: PoseDataset, cfg: PCKConfig, **kw) -> EvalReport:
    return pck_score(predict_dataset(model, dataset, **kw), dataset.records, cfg)


class Trainer:
    """Owns model, optimizer and schedule; ``fit`` runs until ``total_epochs`` or a stop request.

    ``hooks`` are called as ``hook(trainer)`` after every epoch; returning
    True stops training. Validation runs every ``eval_every`` epochs when a
    validation set is given.
    """

    def __init__(self, model: SPCNet, sched: OptimizerSchedule, seed: int = 0,
                 loss_weights: Sequence[float] | None = None, log_path: str | Path | None = None,
                 log_every: int = 1):
        self.model = model
        self.sched = sched
        self.optimizer = make_optimizer(model, sched)
        self.state = TrainState(seed=seed)
        self.loss_weights = loss_weights
        self.log_path = Path(log_path) if log_path else None
        self.log_every = log_every
        self.last_terms: list[float] = []

    # -- single step -------------------------------------------------------
    def set_lr(self, lr: float):
        for g in self.optimizer.param_groups:
            g["lr"] = lr

    def train_step(self, images, targets, masks) -> float:
        self.model.train()
        p = next(self.model.parameters())
        images, targets, masks = images.to(p.device, p.dtype), targets.to(p.device, p.dtype), masks.to(p.device)
        try:
            pred = self.model(images)
        except FloatingPointError as exc:  # non-finite fusion logits
            self.last_terms = []
            raise TrainingDiverged(self._diagnostic(str(exc))) from exc
        report = compute_loss(pred, targets, masks, self.loss_weights)
        total = report.total
        self.last_terms = [float(t.detach()) for t in report.per_term]
        if not torch.isfinite(total):
            raise TrainingDiverged(self._diagnostic("non-finite loss"))
        self.optimizer.zero_grad(set_to_none=True)
        total.backward()
        self.optimizer.step()
        self.state.global_step += 1
        return float(total.detach())

    def _diagnostic(self, what: str) -> str:
        return (f"{what} at step {self.state.global_step} "
                f"(lr={self.optimizer.param_groups[0]['lr']:.3g}, terms={self.last_terms})")

    def _log(self, record: dict):
        if self.log_path is None:
            return
        self.log_path.parent.mkdir(parents=True, exist_ok=True)
        with self.log_path.open("a") as f:
            f.write(json.dumps(record) + "\n")

    # -- loop --------------------------------------------------------------
    def batches(self, dataset: PoseDataset, epoch: int):
        dataset.set_epoch(epoch)
        order = np.random.default_rng([self.state.seed, epoch]).permutation(len(dataset))
        bs = self.sched.batch_size
        for start in range(0, len(order), bs):
            chunk = order[start:start + bs]
            if len(chunk) < 2 and len(order) > 1:
                continue  # batch norm needs more than one sample
            yield _collate([dataset[int(i)] for i in chunk])

    def fit(self, dataset: PoseDataset, val_dataset: PoseDataset | None = None,
            pck_cfg: PCKConfig | None = None, eval_every: int = 1, max_steps: int | None = None,
            hooks: Sequence[Callable[["Trainer"], bool | None]] = (),
            checkpoint_dir: str | Path | None = None) -> TrainState:
        pck_cfg = pck_cfg or PCKConfig()
        st = self.state
        while st.epoch < self.sched.total_epochs:
            if max_steps is not None and st.global_step >= max_steps:
                break
            epoch = st.epoch
            lr = lr_at_epoch(self.sched, epoch)
            self.set_lr(lr)
            for images, targets, masks, _ in self.batches(dataset, epoch):
                loss = self.train_step(images, targets, masks)
                st.losses.append(loss)
                if st.global_step % self.log_every == 0:
                    self._log({"step": st.global_step, "epoch": epoch, "lr": lr, "loss": loss,
                               "terms": self.last_terms})
                if max_steps is not None and st.global_step >= max_steps:
                    break
            st.epoch = epoch + 1
            metric = None
            if val_dataset is not None and (st.epoch % eval_every == 0 or st.epoch == self.sched.total_epochs):
                metric = evaluate(self.model, val_dataset, pck_cfg).total
                st.metrics.append((st.epoch, metric))
                self._log({"step": st.global_step, "epoch": epoch, "lr": lr, "val_pck": metric})
                log.info("epoch %d step %d loss %.4f val %.4f", epoch, st.global_step, st.losses[-1], metric)
                if metric > st.best_metric:
                    st.best_metric = metric
                    if checkpoint_dir is not None:
                        save_checkpoint(self, Path(checkpoint_dir) / "best.pt", metric)
            if checkpoint_dir is not None:
                save_checkpoint(self, Path(checkpoint_dir) / "last.pt", metric)
            if any(h(self) for h in hooks):
                break
        return st


def fit(model: SPCNet, dataset: PoseDataset, sched: OptimizerSchedule, hooks=(), seed: int = 0, **kw) -> TrainState:
    return Trainer(model, sched, seed=seed).fit(dataset, hooks=hooks, **kw)


# -- checkpoints ---------------------------------------------------------------

def _sidecar(path: Path) -> Path:
    return path.with_suffix(".json")


def save_checkpoint(trainer: Trainer, path: str | Path, metric: float | None = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    cfg = trainer.model.cfg
    torch.save({
        "version": CHECKPOINT_VERSION,
        "model": trainer.model.state_dict(),
        "optimizer": trainer.optimizer.state_dict(),
        "state": dataclasses.asdict(trainer.state),
        "schedule": dataclasses.asdict(trainer.sched),
    }, path)
    meta = {
        "version": CHECKPOINT_VERSION,
        "config_hash": cfg.config_hash(),
        "model_config": dataclasses.asdict(cfg),
        "epoch": trainer.state.epoch,
        "global_step": trainer.state.global_step,
        "metric": metric,
        "best_metric": None if math.isinf(trainer.state.best_metric) else trainer.state.best_metric,
    }
    _sidecar(path).write_text(json.dumps(meta, indent=1))
    return path


def read_checkpoint_meta(path: str | Path) -> dict:
    side = _sidecar(Path(path))
    if not side.exists():
        raise ConfigError(f"checkpoint metadata not found: {side}")
    return json.loads(side.read_text())


def config_diff(a: dict, b: dict) -> dict[str, tuple]:
    keys = sorted(set(a) | set(b))
    return {k: (a.get(k), b.get(k)) for k in keys if a.get(k) != b.get(k)}


def check_config(meta: dict, cfg: SPCNetConfig):
    if meta["config_hash"] != cfg.config_hash():
        diff = config_diff(meta["model_config"], dataclasses.asdict(cfg))
        detail = ", ".join(f"{k}: checkpoint={v[0]!r} requested={v[1]!r}" for k, v in diff.items())
        raise CheckpointMismatch(f"checkpoint config hash {meta['config_hash']} != {cfg.config_hash()} ({detail})")


def load_checkpoint(trainer: Trainer, path: str | Path) -> TrainState:
    """Restore parameters, optimizer and loop state into ``trainer`` in place."""
    path = Path(path)
    check_config(read_checkpoint_meta(path), trainer.model.cfg)
    blob = torch.load(path, map_location="cpu", weights_only=False)
    trainer.model.load_state_dict(blob["model"])
    trainer.optimizer.load_state_dict(blob["optimizer"])
    st = dict(blob["state"])
    st["metrics"] = [tuple(m) for m in st.get("metrics", [])]
    trainer.state = TrainState(**st)
    return trainer.state


def load_model(path: str | Path, cfg: SPCNetConfig | None = None) -> SPCNet:
    """Build a model from a checkpoint's sidecar config (or check it against ``cfg``)."""
    meta = read_checkpoint_meta(path)
    if cfg is None:
        cfg = SPCNetConfig(**meta["model_config"])
    check_config(meta, cfg)
    model = SPCNet(cfg)
    blob = torch.load(Path(path), map_location="cpu", weights_only=False)
    model.load_state_dict(blob["model"])
    model.eval()
    return model
