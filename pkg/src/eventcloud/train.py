"""Losses, AdamW with cosine schedule, the training loop and metrics."""

from __future__ import annotations

import json
import logging
import math
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from . import autodiff as ad
from . import model as M
from .events import WindowSpec, load_events, stream_to_clouds

log = logging.getLogger(__name__)


class NonFiniteGradient(FloatingPointError):
    pass


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class TrainConfig:
    lr0: float = 1e-3
    epochs: int = 150
    batch_size: int = 16
    seed: int = 0
    weight_decay: float = 0.01
    betas: tuple = (0.9, 0.999)
    eps: float = 1e-8
    schedule: str = "cosine"

    def __post_init__(self):
        if self.lr0 <= 0:
            raise ValueError("lr0 must be positive")
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be >= 1")
        if self.schedule not in ("cosine", "constant"):
            raise ValueError(f"unknown schedule {self.schedule!r}")
        self.betas = tuple(float(b) for b in self.betas)


@dataclass
class MetricReport:
    accuracy: float | None = None
    mpjpe_2d: float | None = None
    loss: float | None = None
    count: int = 0

    def primary(self) -> float:
        return self.accuracy if self.accuracy is not None else self.mpjpe_2d

    def as_kv(self, prefix: str = "") -> str:
        parts = []
        for key in ("loss", "accuracy", "mpjpe_2d"):
            v = getattr(self, key)
            if v is not None:
                parts.append(f"{prefix}{key}={v:.6g}")
        return " ".join(parts)


# --------------------------------------------------------------------------
# optimisation

def cosine_lr(t: int, total: int, lr0: float) -> float:
    if not 0 <= t <= total:
        raise ValueError(f"step {t} outside [0, {total}]")
    if total == 0:
        return lr0
    return lr0 * 0.5 * (1.0 + math.cos(math.pi * t / total))


def decay_mask(name: str, shape) -> np.ndarray | float:
    """Weights decay fully, filters only on their real part, biases not at all."""
    kind = M.param_kind(name)
    if kind == "bias":
        return 0.0
    if kind == "filter":
        mask = np.zeros(shape)
        mask[..., 0] = 1.0
        return mask
    return 1.0


def adamw_step(params: dict, grads: dict, state: dict, t: int, lr: float, cfg: TrainConfig) -> None:
    """One decoupled-weight-decay Adam update (t counts from 1); updates in place.

    Every gradient is checked first, so a non-finite one leaves params and
    state untouched.
    """
    for name, g in grads.items():
        if g is not None and not np.all(np.isfinite(g)):
            raise NonFiniteGradient(f"non-finite gradient for {name}; step {t} rejected")
    b1, b2 = cfg.betas
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            continue
        data = p.data if isinstance(p, ad.Tensor) else p
        m, v = state.setdefault(name, (np.zeros_like(data), np.zeros_like(data)))
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        state[name] = (m, v)
        if cfg.weight_decay:
            data -= lr * cfg.weight_decay * decay_mask(name, data.shape) * data
        m_hat = m / (1 - b1 ** t)
        v_hat = v / (1 - b2 ** t)
        data -= lr * m_hat / (np.sqrt(v_hat) + cfg.eps)


# --------------------------------------------------------------------------
# metrics

def evaluate_accuracy(predictions, labels) -> MetricReport:
    """``predictions`` are class ids (N,) or logits (N, classes)."""
    pred = np.asarray(predictions)
    labels = np.asarray(labels)
    if pred.ndim == 2:
        pred = pred.argmax(axis=1)
    if pred.shape != labels.shape:
        raise ad.ShapeError(f"accuracy: predictions {pred.shape} vs labels {labels.shape}")
    n = len(labels)
    return MetricReport(accuracy=float((pred == labels).mean()) if n else 0.0, count=n)


def evaluate_mpjpe(predictions, targets, joints: int = 13) -> MetricReport:
    """Mean per-joint Euclidean error: averaged over joints, then samples."""
    pred = np.asarray(predictions, dtype=np.float64)
    gt = np.asarray(targets, dtype=np.float64)
    if pred.shape != gt.shape:
        raise ad.ShapeError(f"mpjpe: predictions {pred.shape} vs ground truth {gt.shape}")
    pred = pred.reshape(len(pred), -1, 2)
    gt = gt.reshape(len(gt), -1, 2)
    if pred.shape[1] != joints:
        raise ad.ShapeError(f"mpjpe: expected {joints} joints of (x, y), got {pred.shape[1:]}")
    per_sample = np.linalg.norm(pred - gt, axis=-1).mean(axis=1)
    return MetricReport(mpjpe_2d=float(per_sample.mean()) if len(pred) else 0.0, count=len(pred))


def loss_fn(out: ad.Tensor, targets, cfg: M.NetworkConfig) -> ad.Tensor:
    if cfg.task == "classification":
        return ad.cross_entropy(out, targets)
    return ad.mse(out, np.asarray(targets).reshape(out.shape))


# --------------------------------------------------------------------------
# data

@dataclass
class Dataset:
    clouds: np.ndarray          # (N, T, 4)
    targets: np.ndarray         # (N,) class ids or (N, 2 * joints) coordinates

    def __len__(self):
        return len(self.clouds)

    def save(self, path) -> None:
        np.savez(path, clouds=self.clouds, targets=self.targets)

    @classmethod
    def load(cls, path) -> "Dataset":
        with np.load(path) as z:
            return cls(z["clouds"], z["targets"])


def read_manifest(path) -> dict:
    """JSON manifest: ``{"train": [{"path": ..., "label": ...}], "test": [...]}``.

    Relative paths resolve against the manifest's directory. Labels are class
    ids, or flat lists of joint coordinates for pose data.
    """
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"manifest not found: {path}")
    with open(path, encoding="utf-8") as fh:
        data = json.load(fh)
    base = path.parent
    splits = {}
    for split, entries in data.items():
        if not isinstance(entries, list):
            continue
        splits[split] = [(str(base / e["path"]), e["label"]) for e in entries]
    return splits


def build_dataset(entries, T: int, window: WindowSpec | None = None, workers: int | None = None) -> Dataset:
    """Load recordings and cut every window into one Event Cloud sample."""
    from concurrent.futures import ThreadPoolExecutor

    def one(entry):
        path, label = entry
        return [(c.coords, label) for c in stream_to_clouds(load_events(path), window, T)]

    workers = workers or int(os.environ.get("EC_THREADS", 0)) or os.cpu_count() or 1
    with ThreadPoolExecutor(max_workers=workers) as pool:
        samples = [s for group in pool.map(one, entries) for s in group]
    if not samples:
        raise ValueError("dataset is empty")
    clouds = np.stack([c for c, _ in samples])
    labels = [lab for _, lab in samples]
    if isinstance(labels[0], (list, tuple)):
        targets = np.asarray(labels, dtype=np.float64)
    else:
        targets = np.asarray(labels, dtype=np.int64)
    return Dataset(clouds, targets)


def check_labels(data: Dataset, cfg: M.NetworkConfig) -> None:
    if len(data) == 0:
        raise ValueError("dataset is empty")
    if cfg.task == "classification":
        if data.targets.ndim != 1 or data.targets.min() < 0 or data.targets.max() >= cfg.classes:
            raise ValueError(f"labels must be class ids in [0, {cfg.classes})")
    elif data.targets.reshape(len(data), -1).shape[1] != cfg.out_dim:
        raise ValueError(f"pose targets must have {cfg.out_dim} values per sample")


# --------------------------------------------------------------------------
# loop

def predict_batches(params, data: Dataset, cfg: M.NetworkConfig, batch_size: int = 32) -> np.ndarray:
    outs = [M.forward(params, data.clouds[i:i + batch_size], cfg).data
            for i in range(0, len(data), batch_size)]
    return np.concatenate(outs)


def evaluate(params, data: Dataset, cfg: M.NetworkConfig, batch_size: int = 32) -> MetricReport:
    out = predict_batches(params, data, cfg, batch_size)
    loss = float(loss_fn(ad.Tensor(out), data.targets, cfg).data)
    if cfg.task == "classification":
        report = evaluate_accuracy(out, data.targets)
    else:
        report = evaluate_mpjpe(out, data.targets.reshape(out.shape), cfg.joints)
    report.loss = loss
    return report


@dataclass
class TrainResult:
    params: dict
    history: list = field(default_factory=list)
    best_checkpoint: str | None = None


def _better(new: MetricReport, old: MetricReport | None, task: str) -> bool:
    if old is None:
        return True
    if task == "classification":
        return new.accuracy > old.accuracy
    return new.mpjpe_2d < old.mpjpe_2d


def train(net_cfg: M.NetworkConfig, train_data: Dataset, train_cfg: TrainConfig,
          test_data: Dataset | None = None, out_dir=None,
          on_epoch: Callable[[dict], None] | None = None, params: dict | None = None) -> TrainResult:
    """Train with AdamW + cosine decay; keeps the best checkpoint under ``out_dir``.

    Each epoch produces one log record (epoch, lr, loss, metrics). Shuffling
    uses a generator seeded from ``train_cfg.seed``, so runs are repeatable.
    """
    check_labels(train_data, net_cfg)
    if test_data is not None:
        check_labels(test_data, net_cfg)
    params = params if params is not None else M.init_params(net_cfg, train_cfg.seed)
    rng = np.random.default_rng(train_cfg.seed)
    drop_rng = np.random.default_rng(train_cfg.seed + 1) if net_cfg.dropout > 0 else None
    n = len(train_data)
    per_epoch = math.ceil(n / train_cfg.batch_size)
    total = per_epoch * train_cfg.epochs
    state: dict = {}
    step = 0
    out_dir = Path(out_dir) if out_dir is not None else None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
    result = TrainResult(params)
    best = None

    for epoch in range(train_cfg.epochs):
        order = rng.permutation(n)
        losses = []
        for b in range(per_epoch):
            idx = order[b * train_cfg.batch_size:(b + 1) * train_cfg.batch_size]
            for p in params.values():
                p.grad = None
            with ad.Tape() as tape:
                out = M.forward(params, train_data.clouds[idx], net_cfg, dropout_rng=drop_rng)
                loss = loss_fn(out, train_data.targets[idx], net_cfg)
            value = float(loss.data)
            if not math.isfinite(value):
                raise TrainingDiverged(f"loss became {value} at epoch {epoch} step {step}; "
                                       f"last good checkpoint: {result.best_checkpoint}")
            tape.backward(loss)
            lr = cosine_lr(step, total, train_cfg.lr0) if train_cfg.schedule == "cosine" else train_cfg.lr0
            step += 1
            adamw_step(params, {k: p.grad for k, p in params.items()}, state, step, lr, train_cfg)
            losses.append(value * len(idx))

        record = {"epoch": epoch, "lr": lr, "loss": float(np.sum(losses) / n)}
        if test_data is not None:
            report = evaluate(params, test_data, net_cfg, train_cfg.batch_size)
            record.update({f"test_{k}": v for k, v in vars(report).items()
                           if k in ("accuracy", "mpjpe_2d", "loss") and v is not None})
            if _better(report, best, net_cfg.task):
                best = report
                if out_dir is not None:
                    result.best_checkpoint = str(out_dir / "best.ckpt")
                    ad.save_checkpoint(result.best_checkpoint, params)
        result.history.append(record)
        log.info(format_log(record))
        if on_epoch is not None:
            on_epoch(record)

    if out_dir is not None:
        ad.save_checkpoint(out_dir / "last.ckpt", params)
        if result.best_checkpoint is None:
            result.best_checkpoint = str(out_dir / "last.ckpt")
    return result


def format_log(record: dict) -> str:
    return " ".join(f"{k}={v:.6g}" if isinstance(v, float) else f"{k}={v}" for k, v in record.items())


def params_from_checkpoint(path, cfg: M.NetworkConfig) -> dict:
    arrays = ad.load_checkpoint(path)
    M.check_params(cfg, arrays)
    return {k: ad.Tensor(v, requires_grad=True, name=k) for k, v in arrays.items()}
