"""Experiment cells and the CSV tables they produce."""
from __future__ import annotations

import csv
import json
import os
import time

import numpy as np

from .data import strata_summary
from .models import (
    BENCHMARKS,
    MODALITY,
    Model,
    ModelSpec,
    fit_linear_regression,
    load_model,
    predict_linear,
    random_predict,
    save_checkpoint,
)
from .optim import rmse
from .text import preset
from .train import TrainConfig, predict, text_cache, train, write_trace

# wall_seconds stays last so determinism checks can drop one column
REPORT_COLUMNS = (
    "model", "modality", "encoder", "optimizer", "seed",
    "train_rmse", "val_rmse", "test_rmse", "best_epoch", "n_params", "wall_seconds",
)
STRATA_COLUMNS = ("split", "stratum", "n", "mean_tokens", "rmse")


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def write_table(path, columns, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for row in rows:
            w.writerow([_fmt(row.get(c)) for c in columns])


def read_table(path):
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


def sort_by_test(rows):
    """Ascending test RMSE; ``sorted`` is stable so ties keep cell order."""
    return sorted(rows, key=lambda r: r["test_rmse"])


def model_spec(dataset, architecture, encoder="tiny", seed=0, roles="tabular-query", frozen=True):
    enc = None
    if architecture not in ("tabular",) + BENCHMARKS:
        enc = preset(encoder, vocab_size=len(dataset.vocab), len_max=dataset.meta["len_max"], frozen=frozen)
    return ModelSpec(architecture, encoder=enc, cross_attention_roles=roles, seed=seed)


def write_spec(path, spec):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(spec.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")


def read_spec(path):
    with open(path, encoding="utf-8") as fh:
        return ModelSpec.from_dict(json.load(fh))


def run_benchmark(dataset, name, seed=0):
    """Report row for ``linear-regression`` (tabular OLS) or ``random``."""
    parts = dataset.splits.parts()
    start = time.perf_counter()
    if name == "linear-regression":
        coef = fit_linear_regression(parts["train"].x_tab, parts["train"].y)
        preds = {k: predict_linear(coef, p.x_tab) for k, p in parts.items()}
        n_params = coef.size
    elif name == "random":
        rng = np.random.default_rng(seed)
        preds = {k: random_predict(len(p), rng) for k, p in parts.items()}
        n_params = 0
    else:
        raise ValueError(f"unknown benchmark {name!r}; choose from {BENCHMARKS}")
    return {
        "model": name,
        "modality": MODALITY[name],
        "encoder": "",
        "optimizer": "",
        "seed": seed,
        "train_rmse": rmse(parts["train"].y, preds["train"]),
        "val_rmse": rmse(parts["validation"].y, preds["validation"]),
        "test_rmse": rmse(parts["test"].y, preds["test"]),
        "best_epoch": None,
        "n_params": n_params,
        "wall_seconds": None,
        "_elapsed": time.perf_counter() - start,
    }


def run_neural(dataset, spec, cfg, out_dir=None, encoder_name=""):
    """Train one model; with ``out_dir`` also write checkpoint, spec, trace and report."""
    model = Model(spec)
    report = train(model, dataset.splits, cfg)
    row = {
        "model": spec.architecture,
        "modality": MODALITY[spec.architecture],
        "encoder": encoder_name if spec.uses_text else "",
        "optimizer": cfg.optimizer,
        "seed": cfg.seed,
        "train_rmse": report.train_rmse,
        "val_rmse": report.val_rmse,
        "test_rmse": report.test_rmse,
        "best_epoch": report.best_epoch,
        "n_params": report.n_params["trainable"],
        "wall_seconds": round(report.wall_seconds, 3),
    }
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        save_checkpoint(os.path.join(out_dir, "model.ckpt"), spec, model.params)
        write_spec(os.path.join(out_dir, "model_spec.json"), spec)
        write_trace(os.path.join(out_dir, "trace.csv"), report.trace)
        write_table(os.path.join(out_dir, "report.csv"), REPORT_COLUMNS, [row])
    return row, report, model


def run_cell(dataset, cell):
    """One grid cell given as a plain dict (picklable for worker processes)."""
    if cell["model"] in BENCHMARKS:
        return run_benchmark(dataset, cell["model"], cell["seed"])
    spec = model_spec(dataset, cell["model"], cell["encoder"], cell["seed"], cell.get("roles", "tabular-query"))
    cfg = TrainConfig(
        epochs=cell["epochs"],
        batch_size=cell["batch_size"],
        optimizer=cell["optimizer"],
        lr=cell.get("lr"),
        seed=cell["seed"],
    )
    row, _, _ = run_neural(dataset, spec, cfg, cell.get("out_dir"), cell["encoder"])
    return row


def evaluate_checkpoint(dataset, spec, checkpoint, batch_size=256):
    """Per-split RMSE of a saved model, recomputed from scratch."""
    model = load_model(checkpoint, spec)
    out = {}
    for name, part in dataset.splits.parts().items():
        cache = text_cache(model, part, batch_size) if model.text_frozen else None
        out[name] = rmse(part.y, predict(model, part, batch_size, cache))
    return out


def strata_rows(dataset, spec, checkpoint, k=5, batch_size=256):
    """Token-count strata per split with the checkpoint's RMSE in each."""
    model = load_model(checkpoint, spec)
    rows = []
    for name, part in dataset.splits.parts().items():
        cache = text_cache(model, part, batch_size) if model.text_frozen else None
        y_hat = predict(model, part, batch_size, cache)
        n_tokens = part.mask.sum(axis=1)
        for r in strata_summary(n_tokens, k, part.y, y_hat):
            rows.append({"split": name, **r})
    return rows
