"""Training and evaluation loops.

Adam with bias correction, a step-decayed learning rate, per-epoch loss
logging, and checkpointing at the best validation Dice. Evaluation runs
the tile -> predict -> stitch -> binarize -> confusion chain and reports
per-tile rows, per-image rows, and an aggregate.
"""

import time
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import checkpoint as ckpt
from . import data as dt
from . import metrics as mt
from .autodiff import ShapeError, Tensor
from .data import AugmentConfig
from .losses import LossSpec, SsimConfig, combined_loss

LOG_HEADER = "epoch,split,ce,ssim,iou,total,seconds"


class NonFiniteLossError(RuntimeError):
    """Raised when a training loss stops being finite."""

    def __init__(self, epoch, batch, terms):
        self.epoch = epoch
        self.batch = batch
        self.terms = dict(terms)
        parts = ", ".join(f"{k}={v!r}" for k, v in self.terms.items())
        super().__init__(f"non-finite loss at epoch {epoch}, batch {batch}: {parts}")


@dataclass
class TrainConfig:
    lr: float = 1e-4
    beta1: float = 0.5
    beta2: float = 0.999
    eps: float = 1e-8
    epochs: int = 100
    decay_epochs: int = 10
    decay_rate: float = 0.1
    batch_size: int = 2
    seed: int = 0
    loss: LossSpec = field(default_factory=lambda: LossSpec.parse("ce"))
    augment: AugmentConfig = field(default_factory=AugmentConfig)
    ssim: SsimConfig = field(default_factory=SsimConfig)
    grad_clip: float = None  # element-wise |g| cap; None disables the guard

    def __post_init__(self):
        if not 0 < self.decay_rate <= 1:
            raise ValueError("decay_rate must be in (0, 1]")
        if self.decay_epochs > self.epochs:
            raise ValueError("decay_epochs cannot exceed epochs")
        if self.batch_size < 1:
            raise ValueError("batch_size must be at least 1")
        if self.epochs < 1:
            raise ValueError("epochs must be at least 1")
        if self.grad_clip is not None and self.grad_clip <= 0:
            raise ValueError("grad_clip must be positive when set")


def lr_schedule(epoch, cfg):
    if not 0 <= epoch < cfg.epochs:
        raise ValueError(f"epoch {epoch} outside schedule of {cfg.epochs}")
    if epoch < cfg.epochs - cfg.decay_epochs:
        return cfg.lr
    return cfg.lr * cfg.decay_rate


class AdamState:
    """First/second moment buffers plus the shared step counter."""

    def __init__(self):
        self.m = {}
        self.v = {}
        self.t = 0

    def slot(self, key, shape, dtype):
        if key not in self.m:
            self.m[key] = np.zeros(shape, dtype=dtype)
            self.v[key] = np.zeros(shape, dtype=dtype)
        return self.m[key], self.v[key]


def adam_step(params, grads, state, t, lr_t, beta1=0.5, beta2=0.999, eps=1e-8):
    """One bias-corrected Adam update, in place on the param arrays."""
    if t < 1:
        raise ValueError("step index starts at 1")
    bc1 = 1.0 - beta1**t
    bc2 = 1.0 - beta2**t
    for i, (p, g) in enumerate(zip(params, grads)):
        if p.shape != g.shape:
            raise ShapeError(f"param {i}: shape {p.shape} does not match grad {g.shape}")
        m, v = state.slot(i, p.shape, p.dtype)
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * (g * g)
        p -= lr_t * (m / bc1) / (np.sqrt(v / bc2) + eps)


class Adam:
    def __init__(self, model, cfg):
        self.cfg = cfg
        self.pairs = [(n, p) for n, p in model.named_parameters() if p.trainable]
        self.state = AdamState()

    def step(self, lr_t):
        self.state.t += 1
        params = [p.data for _, p in self.pairs]
        grads = [
            p.grad if p.grad is not None else np.zeros_like(p.data) for _, p in self.pairs
        ]
        if self.cfg.grad_clip is not None:
            c = self.cfg.grad_clip
            grads = [np.clip(g, -c, c) for g in grads]
        adam_step(
            params,
            grads,
            self.state,
            self.state.t,
            lr_t,
            self.cfg.beta1,
            self.cfg.beta2,
            self.cfg.eps,
        )


@dataclass
class TrainLog:
    rows: list = field(default_factory=list)
    best_epoch: int = -1
    best_val_dice: float = -1.0

    def add(self, epoch, split, parts, total, seconds):
        self.rows.append(
            {
                "epoch": epoch,
                "split": split,
                "ce": parts.get("ce", 0.0),
                "ssim": parts.get("ssim", 0.0),
                "iou": parts.get("iou", 0.0),
                "total": total,
                "seconds": seconds,
            }
        )

    def csv(self):
        lines = [LOG_HEADER]
        for r in self.rows:
            lines.append(
                f"{r['epoch']},{r['split']},{r['ce']:.6f},{r['ssim']:.6f},"
                f"{r['iou']:.6f},{r['total']:.6f},{r['seconds']:.6f}"
            )
        return "\n".join(lines) + "\n"

    def term_series(self, split, term):
        return [r[term] for r in self.rows if r["split"] == split]


def _batch_arrays(pairs):
    imgs = np.stack([np.transpose(img, (2, 0, 1)) for img, _ in pairs]).astype(np.float32)
    masks = np.stack([m[None].astype(np.float32) for _, m in pairs])
    return Tensor(imgs), Tensor(masks)


def _epoch_mean(term_sums, n):
    return {k: s / n for k, s in term_sums.items()}


def train(model, train_set, val_set, cfg, out_dir=None, record_seconds=True):
    """Optimize the model, returning a TrainLog.

    train_set / val_set are lists of (image HWC float, mask HW) pairs.
    Checkpoints land in out_dir as best.ckpt / final.ckpt when given.
    With record_seconds off the log's wall-time column is zeroed so two
    runs of the same seed produce byte-identical logs.
    """
    if not train_set:
        raise ValueError("training set is empty")
    rng = np.random.default_rng(cfg.seed)
    opt = Adam(model, cfg)
    log = TrainLog()
    active = set(cfg.loss.terms)

    for epoch in range(cfg.epochs):
        lr_t = lr_schedule(epoch, cfg)
        t0 = time.monotonic()
        model.train()
        order = rng.permutation(len(train_set))
        sums = {k: 0.0 for k in ("ce", "ssim", "iou", "total")}
        seen = 0
        for bstart in range(0, len(order), cfg.batch_size):
            idx = order[bstart : bstart + cfg.batch_size]
            batch = [
                dt.augment(train_set[i][0], train_set[i][1], cfg.augment, rng) for i in idx
            ]
            x, y = _batch_arrays(batch)
            pred = model(x)
            total, parts = combined_loss(pred, y, cfg.loss, cfg.ssim)
            if not all(np.isfinite(v) for v in parts.values()):
                raise NonFiniteLossError(epoch, bstart // cfg.batch_size, parts)
            model.zero_grad()
            total.backward()
            opt.step(lr_t)
            n = len(idx)
            for k in active:
                sums[k] += parts[k] * n
            sums["total"] += float(total.data) * n
            seen += n
        train_secs = time.monotonic() - t0 if record_seconds else 0.0
        means = _epoch_mean(sums, seen)
        log.add(epoch, "train", means, means["total"], train_secs)

        t0 = time.monotonic()
        val_means, val_dice = _validate(model, val_set, cfg)
        val_secs = time.monotonic() - t0 if record_seconds else 0.0
        log.add(epoch, "val", val_means, val_means["total"], val_secs)

        if val_dice > log.best_val_dice:
            log.best_val_dice = val_dice
            log.best_epoch = epoch
            if out_dir is not None:
                ckpt.save_checkpoint(f"{out_dir}/best.ckpt", model)

    if out_dir is not None:
        ckpt.save_checkpoint(f"{out_dir}/final.ckpt", model)
        with open(f"{out_dir}/losses.csv", "w", encoding="utf-8") as fh:
            fh.write(log.csv())
    return log


def _validate(model, val_set, cfg):
    model.eval()
    sums = {k: 0.0 for k in ("ce", "ssim", "iou", "total")}
    counts = mt.ConfusionCounts()
    seen = 0
    active = set(cfg.loss.terms)
    with ad.no_grad():
        for bstart in range(0, len(val_set), cfg.batch_size):
            batch = val_set[bstart : bstart + cfg.batch_size]
            x, y = _batch_arrays(batch)
            pred = model(x)
            total, parts = combined_loss(pred, y, cfg.loss, cfg.ssim)
            n = len(batch)
            for k in active:
                sums[k] += parts[k] * n
            sums["total"] += float(total.data) * n
            seen += n
            counts = counts + mt.confusion(
                mt.binarize(pred.data), y.data.astype(np.int64)
            )
    if seen == 0:
        return {k: 0.0 for k in sums}, 0.0
    dice = mt.derive_metrics(counts)["dc"]
    return _epoch_mean(sums, seen), dice


def predict_wsi(model, image, overlap=None, batch_size=4):
    """Tile a full image, predict each tile, stitch probabilities back."""
    h, w = model.cfg.input_size
    ih, iw = image.shape[:2]
    if ih < h or iw < w:
        raise ValueError(f"image {ih}x{iw} smaller than model input {h}x{w}")
    if overlap is None:
        overlap = h // 2 if (ih > h or iw > w) else 0
    grid = dt.make_grid((ih, iw), h, overlap)
    tiles = dt.extract(image, grid)
    preds = []
    model.eval()
    with ad.no_grad():
        for bstart in range(0, len(tiles), batch_size):
            chunk = tiles[bstart : bstart + batch_size]
            x = Tensor(
                np.stack([np.transpose(t, (2, 0, 1)) for t in chunk]).astype(np.float32)
            )
            out = model(x).data[:, 0]
            preds.extend(out[i] for i in range(out.shape[0]))
    return dt.stitch(preds, grid), grid


@dataclass
class EvalReport:
    csv_text: str
    s_wsi: float
    per_wsi: dict
    aggregate: dict

    def csv(self):
        return self.csv_text

    @property
    def rows(self):
        return self.csv_text.strip("\n").split("\n")


def evaluate(
    model, samples, clip_threshold=mt.DEFAULT_CLIP, overlap=None, batch_size=4, oracle=False
):
    """Score (wsi_id, image, mask) samples at tile and whole-image level.

    With oracle=True the reference mask stands in for the prediction,
    vetting the tile/stitch/score chain itself; model may be None.
    """
    tile_units = []
    wsi_units = []
    per_wsi = {}
    for wsi_id, image, mask in samples:
        if oracle:
            prob = mask.astype(np.float64)
            h, w = mask.shape
            grid = dt.make_grid((h, w), min(h, w), 0)
        else:
            prob, grid = predict_wsi(model, image, overlap=overlap, batch_size=batch_size)
        pred_tiles = dt.extract(prob, grid)
        mask_tiles = dt.extract(mask, grid)
        for pos, pt, gt in zip(grid.positions, pred_tiles, mask_tiles):
            c = mt.confusion(mt.binarize(pt), gt.astype(np.int64))
            tile_units.append((f"{wsi_id}/{pos[0]}_{pos[1]}", c))
        cw = mt.confusion(mt.binarize(prob), mask.astype(np.int64))
        wsi_units.append((wsi_id, cw))
        per_wsi[wsi_id] = mt.derive_metrics(cw)
    tile_counts = [c for _, c in tile_units]
    text = mt.report_rows(tile_units + wsi_units, clip_threshold, aggregate_counts=tile_counts)
    score = mt.s_wsi([m["js"] for m in per_wsi.values()], clip_threshold)
    return EvalReport(text, score, per_wsi, mt.derive_metrics(mt.accumulate(tile_counts)))
