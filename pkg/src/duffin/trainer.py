"""Supervised training, evaluation, quantized retraining and fine-tuning."""

from __future__ import annotations

import csv
import json
import math
import time
import warnings
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from . import autograd as ag
from .data import CsiDataset, cosine_similarity, denormalize, nmse_db, reconstruct_full
from .model import DuffinCsiNet, param_count
from .quantizer import QuantizerCalibration, calibrate

METRIC_COLUMNS = ("epoch", "lr", "train_loss", "val_nmse_db", "val_cosine")


@dataclass(frozen=True)
class TrainConfig:
    """Training schedule. Full-scale runs use ``epochs=1500, batch_size=200``."""

    epochs: int = 200
    batch_size: int = 32
    lr_min: float = 5e-5
    lr_max: float = 2e-3
    warmup: int = 30
    seed: int = 0
    val_fraction: float = 0.1
    mode: str = "scratch"
    quantize_bits: int | None = None
    eval_every: int = 1

    def __post_init__(self):
        if self.epochs < 0:
            raise ValueError("epochs must be non-negative")
        if self.epochs > 0 and not 0 < self.warmup < self.epochs:
            raise ValueError(f"need 0 < warmup < epochs, got warmup={self.warmup}, epochs={self.epochs}")
        if not 0 < self.lr_min < self.lr_max:
            raise ValueError("need 0 < lr_min < lr_max")
        if self.batch_size < 1:
            raise ValueError("batch_size must be positive")
        if not 0 <= self.val_fraction < 1:
            raise ValueError("val_fraction must lie in [0, 1)")
        if self.mode not in ("scratch", "transfer", "quantized-retrain"):
            raise ValueError(f"unknown mode {self.mode!r}")
        if (self.mode == "quantized-retrain") != (self.quantize_bits is not None):
            raise ValueError("quantize_bits is required by, and only valid for, quantized-retrain mode")
        if self.quantize_bits is not None and not 1 <= self.quantize_bits <= 8:
            raise ValueError(f"quantize_bits must be in 1..8, got {self.quantize_bits}")


def default_warmup(epochs: int) -> int:
    """30 warm-up epochs for long runs, a quarter of a short one (at least 1)."""
    return min(30, max(1, epochs // 4))


def lr_at_epoch(epoch: int, cfg: TrainConfig) -> float:
    """Linear warm-up to ``lr_max`` at ``cfg.warmup``, cosine decay to ``lr_min`` at the last epoch."""
    if not 1 <= epoch <= cfg.epochs:
        raise ValueError(f"epoch {epoch} outside 1..{cfg.epochs}")
    lo, hi, tw, te = cfg.lr_min, cfg.lr_max, cfg.warmup, cfg.epochs
    if epoch < tw:
        return lo + (hi - lo) * (epoch - 1) / (tw - 1)
    return lo + 0.5 * (hi - lo) * (1 + math.cos(math.pi * (epoch - tw) / (te - tw)))


@dataclass
class EpochMetrics:
    epoch: int
    lr: float
    train_loss: float
    val_nmse_db: float
    val_cosine: float
    best_val_nmse_db: float


@dataclass
class EvalResult:
    nmse_db: float
    cosine: float


@dataclass
class TrainResult:
    model: DuffinCsiNet
    history: list[EpochMetrics] = field(default_factory=list)
    calibration: QuantizerCalibration | None = None
    epochs_to_threshold: int | None = None
    wall_time: float = 0.0
    config: TrainConfig | None = None


def split_dataset(ds: CsiDataset, val_fraction: float, seed: int) -> tuple[CsiDataset, CsiDataset | None]:
    """Seeded shuffle into train/validation parts. No validation part when the fraction is 0."""
    n_val = int(round(len(ds) * val_fraction))
    if n_val == 0:
        return ds, None
    perm = np.random.default_rng([seed, 0xDA7A]).permutation(len(ds))
    return ds.subset(np.sort(perm[n_val:])), ds.subset(np.sort(perm[:n_val]))


def _check_compatible(model: DuffinCsiNet, ds: CsiDataset) -> None:
    cfg = model.config
    if ds.images.shape[1:] != (cfg.ns, cfg.nt, 2):
        raise ValueError(f"dataset images {ds.images.shape[1:]} do not fit model ({cfg.ns}, {cfg.nt}, 2)")


def has_running_stats(model: DuffinCsiNet) -> bool:
    """True once every batch-norm layer has seen at least one training batch."""
    return all(v.data.item() >= 1 for name, v in model.params.items() if name.endswith("bn/updates"))


def evaluate(model: DuffinCsiNet, ds: CsiDataset, channels: np.ndarray | None = None, batch_size: int = 64) -> EvalResult:
    """Inference-mode NMSE (dB, truncated domain) and cosine similarity (full channels).

    A model that was never trained has no running statistics; it is evaluated
    with batch statistics on a throwaway copy instead, with a warning.
    """
    _check_compatible(model, ds)
    if has_running_stats(model):
        rec = model.reconstruct(ds.images, batch_size)
    else:
        warnings.warn("model has no batch-norm running statistics; evaluating with batch statistics", stacklevel=2)
        scratch = model.copy()
        chunks = [scratch.forward(ds.images[i : i + batch_size], training=True).data for i in range(0, len(ds), batch_size)]
        rec = np.concatenate(chunks)
    nmse = nmse_db(ds.truncated(), denormalize(rec, ds.meta))
    if channels is None:
        channels = ds.channels()
    full = reconstruct_full(rec, ds.meta, ds.offset, ds.nc)
    return EvalResult(nmse, cosine_similarity(channels, full))


def train(model: DuffinCsiNet, ds: CsiDataset, cfg: TrainConfig, log=None) -> TrainResult:
    """Minimise the batch MSE with Adam under the warm-up/cosine schedule.

    The model is updated in place. Validation metrics come from the held-out
    split, or from the training set itself when ``cfg.val_fraction == 0``.
    ``log`` is an optional callable receiving each :class:`EpochMetrics`.
    """
    _check_compatible(model, ds)
    start = time.perf_counter()
    train_ds, val_ds = split_dataset(ds, cfg.val_fraction, cfg.seed)
    eval_ds = val_ds if val_ds is not None else train_ds
    eval_channels = eval_ds.channels()
    rng = np.random.default_rng(cfg.seed)
    opt = ag.Adam(model.params)
    n = len(train_ds)
    n_batches = max(1, math.ceil(n / cfg.batch_size))
    history: list[EpochMetrics] = []
    best = math.inf
    for epoch in range(1, cfg.epochs + 1):
        lr = lr_at_epoch(epoch, cfg)
        order = rng.permutation(n)
        losses = []
        for idx in np.array_split(order, n_batches):
            x = train_ds.images[idx]
            model.params.zero_grad()
            loss = ag.mse_loss(model.forward(x, training=True), x)
            ag.backward(loss)
            opt.step(lr)
            losses.append(float(loss.data) * len(idx))
        if epoch % cfg.eval_every == 0 or epoch == cfg.epochs:
            ev = evaluate(model, eval_ds, eval_channels)
        else:
            ev = EvalResult(math.nan, math.nan)
        if not math.isnan(ev.nmse_db):
            best = min(best, ev.nmse_db)
        m = EpochMetrics(epoch, lr, sum(losses) / n, ev.nmse_db, ev.cosine, best)
        history.append(m)
        if log is not None:
            log(m)
    return TrainResult(model, history, model.quantizer, wall_time=time.perf_counter() - start, config=cfg)


def epochs_to_threshold(history: list[EpochMetrics], threshold_db: float) -> int | None:
    """First epoch whose validation NMSE is at or below ``threshold_db``."""
    for m in history:
        if m.val_nmse_db <= threshold_db:
            return m.epoch
    return None


def train_quantized(pretrained: DuffinCsiNet, ds: CsiDataset, bits: int, cfg: TrainConfig, log=None) -> TrainResult:
    """Second training stage: calibrate the quantizer on pre-trained codewords, then retrain through it.

    The pre-trained model is left untouched; a copy is retrained.
    """
    _check_compatible(pretrained, ds)
    if pretrained.quantizer is not None:
        raise ValueError("stage 2 expects a model pre-trained without quantization")
    if cfg.quantize_bits not in (None, bits):
        raise ValueError(f"bits={bits} contradicts cfg.quantize_bits={cfg.quantize_bits}")
    cfg = replace(cfg, mode="quantized-retrain", quantize_bits=bits)
    model = pretrained.copy()
    model.quantizer = calibrate(model.codewords(ds.images), bits)
    result = train(model, ds, cfg, log)
    result.calibration = model.quantizer
    return result


def quantize_without_retraining(pretrained: DuffinCsiNet, ds: CsiDataset, bits: int) -> DuffinCsiNet:
    model = pretrained.copy()
    model.quantizer = None
    model.quantizer = calibrate(model.codewords(ds.images), bits)
    return model


def transfer_finetune(
    pretrained: DuffinCsiNet, ds: CsiDataset, cfg: TrainConfig, threshold_db: float = -4.0, log=None
) -> TrainResult:
    """Fine-tune every parameter of a copy of ``pretrained`` on a new scenario."""
    _check_compatible(pretrained, ds)
    model = pretrained.copy()
    cfg = replace(cfg, mode="transfer")
    if cfg.epochs == 0:
        return TrainResult(model, config=cfg)
    result = train(model, ds, cfg, log)
    result.epochs_to_threshold = epochs_to_threshold(result.history, threshold_db)
    return result


# ----------------------------------------------------------------------------
# reporting
# ----------------------------------------------------------------------------


def write_metrics_csv(history: list[EpochMetrics], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(METRIC_COLUMNS)
        for m in history:
            w.writerow([m.epoch, repr(m.lr), repr(m.train_loss), repr(m.val_nmse_db), repr(m.val_cosine)])


def summary(result: TrainResult, cfg: TrainConfig | None = None) -> dict:
    cfg = cfg or result.config
    enc, dec = param_count(result.model)
    last = result.history[-1] if result.history else None
    return {
        "train_config": asdict(cfg) if cfg else None,
        "model_config": {k: str(v) for k, v in asdict(result.model.config).items()},
        "params": {"encoder": enc, "decoder": dec},
        "final": asdict(last) if last else None,
        "epochs_to_threshold": result.epochs_to_threshold,
        "calibration": asdict(result.calibration) if result.calibration else None,
        "wall_time_s": result.wall_time,
    }


def write_summary(result: TrainResult, path, cfg: TrainConfig | None = None) -> None:
    Path(path).write_text(json.dumps(summary(result, cfg), indent=2, default=str) + "\n")
