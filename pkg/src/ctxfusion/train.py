"""Minibatch training with best-validation snapshots (no early stopping)."""
from __future__ import annotations

from dataclasses import dataclass, field
import csv
import logging
import time

import numpy as np

from . import tensor as T
from .models import param_count
from .optim import Optimizer, mse_loss, rmse

log = logging.getLogger(__name__)


class TrainingError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    epochs: int = 500
    batch_size: int = 256
    optimizer: str = "adamax"
    lr: float | None = None
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0
    shuffle: bool = True

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be >= 1")


@dataclass
class EvalReport:
    train_rmse: float
    val_rmse: float
    test_rmse: float
    best_epoch: int
    wall_seconds: float
    n_params: dict
    trace: list = field(default_factory=list)  # (epoch, train_loss, val_rmse)


def _chunks(n, size):
    return [np.arange(i, min(i + size, n)) for i in range(0, n, size)]


def text_cache(model, examples, batch_size):
    """Frozen-encoder features for every example, computed chunk by chunk."""
    states, pooled = [], []
    with T.no_grad():
        for idx in _chunks(len(examples), batch_size):
            s, p = model.text_features(examples.ids[idx], examples.mask[idx])
            states.append(s.data)
            if p is not None:
                pooled.append(p.data)
    return np.concatenate(states), (np.concatenate(pooled) if pooled else None)


def _forward(model, examples, idx, cache):
    ids, mask, x = examples.ids[idx], examples.mask[idx], examples.x_tab[idx]
    if cache is None or not model.spec.uses_text:
        return model.forward(ids, mask, x)
    states, pooled = cache
    return model.forward(ids, mask, x, states=states[idx], pooled=None if pooled is None else pooled[idx])


def predict(model, examples, batch_size=256, cache=None):
    """Predictions for every example as a 1-D array (no graph recorded)."""
    out = np.empty(len(examples))
    with T.no_grad():
        for idx in _chunks(len(examples), batch_size):
            out[idx] = _forward(model, examples, idx, cache).data[:, 0]
    return out


def evaluate(model, examples, batch_size=256, cache=None):
    return rmse(examples.y, predict(model, examples, batch_size, cache))


def train(model, data, cfg, on_epoch=None):
    """Train for exactly ``cfg.epochs`` epochs and report at the best-validation snapshot.

    The model's parameters are left at the snapshot when this returns.
    """
    if min(len(data.train), len(data.validation), len(data.test)) == 0:
        raise ValueError("every split must be non-empty")
    start = time.perf_counter()
    rng = np.random.default_rng(cfg.seed)
    caches = {}
    if model.text_frozen:
        caches = {k: text_cache(model, v, cfg.batch_size) for k, v in data.parts().items()}
    named = {k: p for k, p in model.params.items() if p.requires_grad}
    opt = Optimizer(named, cfg.optimizer, lr=cfg.lr, beta1=cfg.beta1, beta2=cfg.beta2, eps=cfg.eps)
    train_set = data.train
    n = len(train_set)
    best = (np.inf, 0, None)
    trace = []
    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(n) if cfg.shuffle else np.arange(n)
        total = 0.0
        for b, lo in enumerate(range(0, n, cfg.batch_size)):
            idx = order[lo : lo + cfg.batch_size]
            opt.zero_grad()
            try:
                loss = mse_loss(_forward(model, train_set, idx, caches.get("train")), train_set.y[idx])
                value = loss.item()
            except T.NonFiniteError as e:
                raise TrainingError(f"non-finite values at epoch {epoch}, batch {b}: {e}") from e
            if not np.isfinite(value):
                raise TrainingError(f"non-finite loss at epoch {epoch}, batch {b}")
            T.backward(loss)
            opt.step()
            total += value * len(idx)
        val = evaluate(model, data.validation, cfg.batch_size, caches.get("validation"))
        trace.append((epoch, total / n, val))
        if val < best[0]:
            best = (val, epoch, {k: p.data.copy() for k, p in named.items()})
        if on_epoch is not None:
            on_epoch(epoch, total / n, val)
    for k, arr in best[2].items():
        named[k].data[...] = arr
    opt.zero_grad()
    report = EvalReport(
        train_rmse=evaluate(model, data.train, cfg.batch_size, caches.get("train")),
        val_rmse=evaluate(model, data.validation, cfg.batch_size, caches.get("validation")),
        test_rmse=evaluate(model, data.test, cfg.batch_size, caches.get("test")),
        best_epoch=best[1],
        wall_seconds=time.perf_counter() - start,
        n_params=param_count(model.spec),
        trace=trace,
    )
    log.info("best epoch %d: val %.5f test %.5f", report.best_epoch, report.val_rmse, report.test_rmse)
    return report


def write_trace(path, trace):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", "train_loss", "val_rmse"])
        for epoch, loss, val in trace:
            w.writerow([epoch, repr(float(loss)), repr(float(val))])
