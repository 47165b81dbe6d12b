"""Masked attention regularization training.

Each chunk is masked once, mirrored, and both views go through the same
model.  The regression loss is applied to both predicted signals and the
attention-consistency loss ties the original maps to the flip-aligned
maps of the mirrored view.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .data import DatasetManifest, VideoChunk, read_chunk
from .losses import attention_consistency_loss, regression_loss, total_loss
from .model import EREA, ModelConfig
from .numerics import AdamState, OneCycleSchedule, adam_step, make_rng, onecycle_lr, save_checkpoint
from .numerics.rng import TRAIN_STREAM

log = logging.getLogger(__name__)

LOG_COLUMNS = ("step", "lr", "loss_total", "loss_reg_orig", "loss_reg_flip", "loss_ac")


class TrainingDiverged(RuntimeError):
    def __init__(self, record: "TrainStepRecord"):
        self.record = record
        super().__init__(
            f"non-finite loss at step {record.step} (lr={record.lr!r}, total={record.loss_total!r}, "
            f"reg_orig={record.loss_reg_orig!r}, reg_flip={record.loss_reg_flip!r}, ac={record.loss_ac!r})")


@dataclass(frozen=True)
class TrainConfig:
    alpha: float = 0.3
    beta: float = 0.5
    chunk_len: int = 60
    mask_size: int = 16
    mask_fill: float = 0.0
    batch_size: int = 4
    epochs: int = 30
    max_lr: float = 1e-3
    warmup_fraction: float = 0.3
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError("alpha must lie in [0, 1]")
        if not 0.0 <= self.beta < 1.0:
            raise ValueError("beta must lie in [0, 1)")
        if self.chunk_len < 2:
            raise ValueError("chunk_len must be >= 2")
        if self.mask_size < 0 or self.batch_size < 1 or self.epochs < 0:
            raise ValueError("mask_size, batch_size and epochs must be non-negative (batch >= 1)")


@dataclass(frozen=True)
class TrainStepRecord:
    step: int
    lr: float
    loss_total: float
    loss_reg_orig: float
    loss_reg_flip: float
    loss_ac: float

    def is_finite(self) -> bool:
        return all(math.isfinite(v) for v in
                   (self.loss_total, self.loss_reg_orig, self.loss_reg_flip, self.loss_ac))


def horizontal_flip(frames: np.ndarray) -> np.ndarray:
    """Mirror (T, H, W, C) frames about the vertical axis."""
    return np.ascontiguousarray(frames[:, :, ::-1, :])


def random_mask(frames: np.ndarray, rng: np.random.Generator, mask_size: int = 16,
                fill: float = 0.0) -> np.ndarray:
    """Copy of ``frames`` with one square, fixed across time, set to ``fill``.

    The top-left corner is drawn as (row, col), each uniform over valid
    positions; nothing is drawn when ``mask_size`` is 0.
    """
    _, h, w, _ = frames.shape
    if mask_size > min(h, w):
        raise ValueError(f"mask size {mask_size} exceeds frame {h}x{w}")
    out = np.array(frames, copy=True)
    if mask_size == 0:
        return out
    top = int(rng.integers(0, h - mask_size + 1))
    left = int(rng.integers(0, w - mask_size + 1))
    out[:, top:top + mask_size, left:left + mask_size, :] = fill
    return out


class Trainer:
    """Holds the model, Adam state and the one-cycle horizon across steps."""

    def __init__(self, model: EREA, cfg: TrainConfig, total_steps: int):
        self.model = model
        self.cfg = cfg
        self.opt = AdamState(lr=cfg.max_lr)
        self.schedule = OneCycleSchedule(cfg.max_lr, max(total_steps, 1), cfg.warmup_fraction)
        self.rng = make_rng(cfg.seed, TRAIN_STREAM)
        self.step = 0

    def train_step(self, batch: list[VideoChunk]) -> TrainStepRecord:
        """One optimizer step over ``batch``.

        Gradients are accumulated chunk by chunk (each chunk's loss scaled by
        1/len(batch)), which equals a single backward of the batch mean
        while keeping only one chunk's graph alive at a time.
        """
        cfg, model = self.cfg, self.model
        lr = onecycle_lr(min(self.step, self.schedule.total_steps - 1), self.schedule)
        model.zero_grad()
        sums = np.zeros(4)
        # mask draws happen in batch order before any forward pass
        masked = [random_mask(c.frames, self.rng, cfg.mask_size, cfg.mask_fill) for c in batch]
        scale = 1.0 / len(batch)
        for chunk, x in zip(batch, masked):
            z = chunk.ppg.astype(np.float64)
            y, m = model(x)
            y_f, m_f = model(horizontal_flip(x))
            reg_o = regression_loss(y, z, cfg.alpha)
            reg_f = regression_loss(y_f, z, cfg.alpha)
            ac = attention_consistency_loss(m, m_f)
            loss = total_loss(reg_o, reg_f, ac, cfg.beta)
            sums += [loss.item(), reg_o.item(), reg_f.item(), ac.item()]
            if not np.isfinite(loss.item()):
                break
            (loss * scale).backward()
        record = TrainStepRecord(self.step, lr, *(float(v) * scale for v in sums))
        if not record.is_finite():
            raise TrainingDiverged(record)
        params = model.parameters()
        adam_step(params, [p.grad for p in params], self.opt, lr=lr)
        self.step += 1
        return record


def train_step(batch, model: EREA, trainer: Trainer) -> TrainStepRecord:
    return trainer.train_step(batch)


@dataclass
class TrainItem:
    path: Path
    window: int


def training_items(manifest: DatasetManifest, chunk_len: int) -> list[TrainItem]:
    """Every chunk_len window of every train file, in manifest order."""
    items = []
    for path in manifest.split("train"):
        n = read_chunk(path).frames.shape[0] // chunk_len
        items.extend(TrainItem(path, k) for k in range(n))
    return items


def load_item(item: TrainItem, chunk_len: int) -> VideoChunk:
    return read_chunk(item.path).windows(chunk_len)[item.window]


def write_log(path, records: list[TrainStepRecord]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(LOG_COLUMNS)
        for r in records:
            row = asdict(r)
            writer.writerow([row["step"]] + [repr(row[k]) for k in LOG_COLUMNS[1:]])


def train(cfg: TrainConfig, manifest: DatasetManifest, out_dir, model_cfg: ModelConfig | None = None,
          model: EREA | None = None, progress=None) -> tuple[EREA, list[TrainStepRecord]]:
    """Run ``cfg.epochs`` epochs and write ``checkpoint.marw`` + ``training_log.csv``.

    Chunk order is reshuffled every epoch with the training stream, which
    also supplies the mask positions.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    model_cfg = model_cfg or ModelConfig(frames=cfg.chunk_len, height=manifest.dims[1],
                                         width=manifest.dims[2], in_channels=manifest.dims[3])
    model = model or EREA(model_cfg, seed=cfg.seed)
    items = training_items(manifest, cfg.chunk_len)
    batches_per_epoch = math.ceil(len(items) / cfg.batch_size) if items else 0
    trainer = Trainer(model, cfg, cfg.epochs * batches_per_epoch)
    records: list[TrainStepRecord] = []
    for epoch in range(cfg.epochs):
        order = trainer.rng.permutation(len(items))
        for b in range(batches_per_epoch):
            idx = order[b * cfg.batch_size:(b + 1) * cfg.batch_size]
            batch = [load_item(items[i], cfg.chunk_len) for i in idx]
            rec = trainer.train_step(batch)
            records.append(rec)
            if progress is not None:
                progress(epoch, rec)
        log.info("epoch %d: last loss %.5f", epoch, records[-1].loss_total if records else float("nan"))
    save_checkpoint(out_dir / "checkpoint.marw", model.state_dict())
    write_log(out_dir / "training_log.csv", records)
    return model, records
