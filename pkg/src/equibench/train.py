"""Deterministic supervised training shared by every message kind."""

from __future__ import annotations

import csv
import io
import logging
import math
from dataclasses import asdict, dataclass, field, fields
from typing import Optional

import numpy as np

from equibench.errors import ConfigError, ContractError, DomainError, NumericalError
from equibench.graphdata import Dataset, collate
from equibench.layers import GNNModel
from equibench.metrics import roc_auc
from equibench.seeding import stream
from equibench.tensor import GradTape, Tensor, bce_with_logits

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 10
    batch_size: int = 64
    learning_rate: float = 1e-3
    betas: tuple = (0.9, 0.999)
    eps: float = 1e-8
    seed: int = 0
    val_fraction: float = 0.2
    patience: int = 5

    def __post_init__(self):
        if self.epochs < 0:
            raise ConfigError("epochs", "must be >= 0")
        if self.batch_size < 1:
            raise ConfigError("batch_size", "must be >= 1")
        if not self.learning_rate > 0:
            raise ConfigError("learning_rate", "must be > 0")
        if not 0.0 <= self.val_fraction <= 0.5:
            raise ConfigError("val_fraction", "must lie in [0, 0.5]")
        if len(self.betas) != 2 or not all(0.0 <= b < 1.0 for b in self.betas):
            raise ConfigError("betas", "need two decay rates in [0, 1)")
        if self.patience < 1:
            raise ConfigError("patience", "must be >= 1")

    @classmethod
    def from_dict(cls, d: dict, prefix: str = "train") -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        for key in d:
            if key not in known:
                raise ConfigError(f"{prefix}.{key}", "unknown field")
        kwargs = {k: tuple(v) if isinstance(v, list) else v for k, v in d.items()}
        try:
            return cls(**kwargs)
        except ConfigError as err:
            raise ConfigError(f"{prefix}.{err.field}", str(err).split(": ", 1)[-1]) from None

    def to_dict(self) -> dict:
        d = asdict(self)
        d["betas"] = list(self.betas)
        return d


@dataclass
class TrainHistory:
    train_loss: list = field(default_factory=list)
    val_loss: list = field(default_factory=list)
    val_auc: list = field(default_factory=list)
    best_epoch: Optional[int] = None

    def __len__(self):
        return len(self.train_loss)

    def rows(self) -> list[tuple]:
        return [(k + 1, a, b, c) for k, (a, b, c) in enumerate(zip(self.train_loss, self.val_loss, self.val_auc))]

    def to_csv(self, header: str = "") -> str:
        buf = io.StringIO()
        if header:
            buf.write(header)
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["epoch", "train_loss", "val_loss", "val_auc"])
        for row in self.rows():
            w.writerow([row[0]] + [repr(float(v)) for v in row[1:]])
        return buf.getvalue()


def bce_loss(logits, labels) -> float:
    """Mean binary cross-entropy of raw logits (stable branch form)."""
    z = np.asarray(logits, dtype=np.float64).reshape(-1)
    y = np.asarray(labels, dtype=np.float64).reshape(-1)
    if z.size == 0:
        raise DomainError("bce_loss of empty input")
    if z.shape != y.shape:
        raise DomainError(f"{z.size} logits but {y.size} labels")
    if np.any((y != 0) & (y != 1)):
        raise DomainError("labels must be 0 or 1")
    return float(bce_with_logits(Tensor._wrap(z), y).data)


class Adam:
    def __init__(self, params, lr=1e-3, betas=(0.9, 0.999), eps=1e-8):
        self.params = list(params)
        self.lr, self.b1, self.b2, self.eps = lr, betas[0], betas[1], eps
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]
        self.t = 0

    def step(self, grads: dict) -> None:
        self.t += 1
        c1 = 1.0 - self.b1**self.t
        c2 = 1.0 - self.b2**self.t
        for k, p in enumerate(self.params):
            g = grads[p].data
            self.m[k] = self.b1 * self.m[k] + (1.0 - self.b1) * g
            self.v[k] = self.b2 * self.v[k] + (1.0 - self.b2) * g * g
            p.data = p.data - self.lr * (self.m[k] / c1) / (np.sqrt(self.v[k] / c2) + self.eps)


def loss_and_grads(model: GNNModel, batch) -> tuple[float, dict]:
    with GradTape() as tape:
        loss = bce_with_logits(model.forward(batch), batch.labels)
    return float(loss.data), tape.backward(loss)


def gradient_check(
    model: GNNModel, batch, steps=(2.0**-18, 2.0**-22), dtype=np.longdouble, floor: float = 1e-8
) -> float:
    """Max per-coordinate relative gap between tape gradients and central differences.

    The numeric side runs on a ``dtype`` copy of the model (extended precision
    by default) so that coordinates with tiny gradients are not swamped by
    float64 roundoff in the loss. Each coordinate is differenced at every
    power-of-two step in ``steps`` and the closest estimate is kept: a step
    that straddles a relu kink gives a wrong slope, the smaller one does not.
    ``floor`` is added to the denominator since gradients far below it are
    indistinguishable from zero at this precision.
    """
    _, grads = loss_and_grads(model, batch)
    twin = model.astype(dtype)

    def loss():
        return bce_with_logits(twin.forward(batch), batch.labels).data

    worst = 0.0
    for p, q in zip(model.parameters(), twin.parameters()):
        analytic = grads[p].data.reshape(-1)
        flat = q.data.reshape(-1)
        for k in range(flat.size):
            old = flat[k]
            gap = np.inf
            for step in steps:
                flat[k] = old + step
                up = loss()
                flat[k] = old - step
                down = loss()
                flat[k] = old
                gap = min(gap, abs(analytic[k] - float((up - down) / (2 * step))))
            worst = max(worst, gap / (abs(analytic[k]) + floor))
    return worst


def evaluate_loss(model: GNNModel, ds: Dataset, batch_size: int = 256) -> tuple[float, float]:
    """(mean BCE, AUC) over every scored item in ``ds``."""
    scores = model.predict(ds.events, batch_size)
    labels = ds.labels()
    loss = bce_loss(scores, labels)
    auc = roc_auc(scores, labels) if 0 < labels.sum() < labels.size else float("nan")
    return loss, auc


def _param_norm(model) -> float:
    return float(np.sqrt(sum(float((p.data**2).sum()) for p in model.parameters())))


def train(model: GNNModel, ds: Dataset, cfg: TrainConfig, validation: Optional[Dataset] = None):
    """Fit ``model`` in place; returns (model holding the best checkpoint, history).

    Without an explicit ``validation`` set a ``cfg.val_fraction`` share of
    ``ds`` is held out. Checkpoints are selected by validation loss (training
    loss when nothing is held out).
    """
    if ds.task != model.spec.task:
        raise ContractError(f"{model.spec.head} head cannot train on a {ds.task} dataset")
    history = TrainHistory()
    if cfg.epochs == 0:
        return model, history
    if validation is None and cfg.val_fraction > 0:
        perm = stream(cfg.seed, "validation").permutation(len(ds))
        k = int(round(cfg.val_fraction * len(ds)))
        validation = ds.subset(np.sort(perm[:k])) if k else None
        ds = ds.subset(np.sort(perm[k:]))
    if len(ds) == 0:
        raise DomainError("no training events left after the validation split")
    opt = Adam(model.parameters(), cfg.learning_rate, cfg.betas, cfg.eps)
    shuffle = stream(cfg.seed, "shuffle")
    best = (math.inf, model.flat_parameters(), 0)
    stale = 0
    for epoch in range(cfg.epochs):
        order = shuffle.permutation(len(ds))
        total, count = 0.0, 0
        for b, start in enumerate(range(0, len(order), cfg.batch_size)):
            batch = collate([ds.events[i] for i in order[start : start + cfg.batch_size]])
            loss, grads = loss_and_grads(model, batch)
            if not math.isfinite(loss):
                raise NumericalError(
                    f"non-finite loss {loss} at epoch {epoch + 1}, batch {b}, parameter norm {_param_norm(model):.6g}"
                )
            opt.step(grads)
            n = batch.labels.size
            total += loss * n
            count += n
        train_loss = total / count
        if validation is not None and len(validation):
            val_loss, val_auc = evaluate_loss(model, validation)
        else:
            val_loss, val_auc = train_loss, float("nan")
        if not math.isfinite(val_loss):
            raise NumericalError(f"non-finite validation loss at epoch {epoch + 1}, parameter norm {_param_norm(model):.6g}")
        history.train_loss.append(train_loss)
        history.val_loss.append(val_loss)
        history.val_auc.append(val_auc)
        logger.debug("epoch %d train %.5f val %.5f auc %.4f", epoch + 1, train_loss, val_loss, val_auc)
        if val_loss < best[0]:
            best = (val_loss, model.flat_parameters(), epoch + 1)
            stale = 0
        else:
            stale += 1
            if stale >= cfg.patience:
                break
    model.set_flat(best[1])
    history.best_epoch = best[2]
    return model, history
