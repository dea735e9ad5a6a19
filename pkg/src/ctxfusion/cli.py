"""``ctxfusion`` command line: ingest, synth, train, evaluate, grid, compare-optimizers, strata.

Options may also come from a flat ``key=value`` file given with ``--config``;
precedence is flag > file > default and the resolved values are printed to
stderr. Relative output paths resolve under ``$CTXFUSION_OUT`` when it is set.
"""
from __future__ import annotations

import argparse
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor

from . import data as D
from . import report as R
from .models import ARCHITECTURES, BENCHMARKS, NEURAL, ROLES, CheckpointError
from .optim import KINDS, NonFiniteGradientError
from .synth import synth_generate
from .text import PRESETS
from .train import TrainConfig, TrainingError, write_trace

OUT_ENV = "CTXFUSION_OUT"

# exit status per error category
EXIT = {"usage": 2, "input": 3, "checkpoint": 4, "training": 5}


class UsageError(Exception):
    pass


def _bool(s):
    if isinstance(s, bool):
        return s
    v = str(s).strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def _opt_float(s):
    return None if s in (None, "", "none") else float(s)


def _choice(options):
    def parse(s):
        if s not in options:
            raise ValueError(f"{s!r} is not one of {', '.join(options)}")
        return s

    return parse


def _csv_of(parse):
    return lambda s: [parse(x.strip()) for x in str(s).split(",") if x.strip()]


# name -> (parser, default, help); dashes in flags, underscores in config keys
COMMANDS = {
    "synth": {
        "n": (int, 2000, "number of reviews"),
        "seed": (int, 0, "generator seed"),
        "sigma": (float, 0.05, "rating noise"),
        "out": (str, "synth", "output directory"),
    },
    "ingest": {
        "review": (str, None, "review JSON-lines file"),
        "user": (str, None, "user JSON-lines file"),
        "business": (str, None, "business JSON-lines file"),
        "source": (str, None, "directory holding review.json, user.json, business.json"),
        "category": (_choice(D.CATEGORIES), "restaurants", "category rule"),
        "n": (int, 10000, "sample size"),
        "seed": (int, 0, "sampling and split seed"),
        "len_max": (int, 64, "token sequence length"),
        "vocab_size": (int, 2000, "vocabulary size including specials"),
        "normalize_counts": (_bool, True, "min-max scale count features on the train split"),
        "year": (int, 2018, "keep reviews from this year (0 keeps all)"),
        "out": (str, "dataset", "output directory"),
    },
    "train": {
        "dataset": (str, None, "dataset directory"),
        "model": (_choice(ARCHITECTURES), "context-aware", "architecture or benchmark"),
        "optimizer": (_choice(KINDS), "adamax", "optimizer"),
        "preset": (_choice(tuple(PRESETS)), "tiny", "encoder preset"),
        "roles": (_choice(ROLES), "tabular-query", "cross-attention roles"),
        "frozen": (_bool, True, "freeze the text encoder"),
        "seed": (int, 0, "initialisation and shuffle seed"),
        "epochs": (int, 500, "training epochs"),
        "batch_size": (int, 256, "minibatch size"),
        "lr": (_opt_float, None, "learning rate (default per optimizer)"),
        "out": (str, "run", "output directory"),
    },
    "evaluate": {
        "dataset": (str, None, "dataset directory"),
        "run": (str, None, "run directory holding model.ckpt and model_spec.json"),
        "out": (str, None, "output directory (default: the run directory)"),
    },
    "grid": {
        "dataset": (str, None, "dataset directory"),
        "models": (_csv_of(_choice(NEURAL)), list(NEURAL), "comma-separated architectures"),
        "benchmarks": (_csv_of(_choice(BENCHMARKS)), list(BENCHMARKS), "comma-separated benchmarks"),
        "optimizers": (_csv_of(_choice(KINDS)), ["adamax"], "comma-separated optimizers"),
        "seeds": (_csv_of(int), [0], "comma-separated seeds"),
        "preset": (_choice(tuple(PRESETS)), "tiny", "encoder preset"),
        "roles": (_choice(ROLES), "tabular-query", "cross-attention roles"),
        "epochs": (int, 500, "training epochs"),
        "batch_size": (int, 256, "minibatch size"),
        "lr": (_opt_float, None, "learning rate (default per optimizer)"),
        "workers": (int, 1, "parallel worker processes"),
        "out": (str, "grid", "output directory"),
    },
    "compare-optimizers": {
        "dataset": (str, None, "dataset directory"),
        "model": (_choice(NEURAL), "context-aware", "architecture"),
        "optimizers": (_csv_of(_choice(KINDS)), list(KINDS), "comma-separated optimizers"),
        "preset": (_choice(tuple(PRESETS)), "tiny", "encoder preset"),
        "seed": (int, 0, "seed shared by every optimizer"),
        "epochs": (int, 500, "training epochs"),
        "batch_size": (int, 256, "minibatch size"),
        "out": (str, "optimizers", "output directory"),
    },
    "strata": {
        "dataset": (str, None, "dataset directory"),
        "checkpoint": (str, None, "model checkpoint"),
        "spec": (str, None, "model_spec.json (default: next to the checkpoint)"),
        "k": (int, 5, "number of strata"),
        "out": (str, None, "output directory (default: the checkpoint's directory)"),
    },
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def build_parser():
    ap = _Parser(prog="ctxfusion", description="Multimodal rating prediction experiments.")
    ap.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = ap.add_subparsers(dest="command", required=True)
    for name, options in COMMANDS.items():
        p = sub.add_parser(name)
        p.add_argument("--config", help="flat key=value file")
        for key, (_, default, text) in options.items():
            shown = ",".join(map(str, default)) if isinstance(default, list) else default
            p.add_argument("--" + key.replace("_", "-"), dest=key, default=None, help=f"{text} [{shown}]")
    return ap


def read_config(path):
    out = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise UsageError(f"{path}:{lineno}: expected key=value")
            k, v = line.split("=", 1)
            out[k.strip().replace("-", "_")] = v.strip()
    return out


def resolve(command, args):
    """Merge flag > config file > default and parse every value."""
    options = COMMANDS[command]
    file_values = read_config(args.config) if args.config else {}
    unknown = sorted(set(file_values) - set(options))
    if unknown:
        raise UsageError(f"unknown config key(s) for {command}: {', '.join(unknown)}")
    cfg = {}
    for key, (parse, default, _) in options.items():
        raw = getattr(args, key)
        if raw is None:
            raw = file_values.get(key)
        if raw is None:
            cfg[key] = default
            continue
        try:
            cfg[key] = parse(raw)
        except ValueError as e:
            raise UsageError(f"--{key.replace('_', '-')}: {e}") from None
    return cfg


def out_path(path):
    root = os.environ.get(OUT_ENV)
    if path is None or os.path.isabs(path) or not root:
        return path
    return os.path.join(root, path)


def _need(cfg, *keys):
    for k in keys:
        if cfg.get(k) in (None, ""):
            raise UsageError(f"--{k.replace('_', '-')} is required")


def _print_config(command, cfg):
    print(f"# {command}", file=sys.stderr)
    for k in sorted(cfg):
        v = cfg[k]
        print(f"{k}={','.join(map(str, v)) if isinstance(v, list) else v}", file=sys.stderr)


# -- commands ---------------------------------------------------------------------


def cmd_synth(cfg):
    out = out_path(cfg["out"])
    os.makedirs(out, exist_ok=True)
    reviews, users, businesses = D.records_to_yelp(synth_generate(cfg["n"], cfg["seed"], cfg["sigma"]))
    for name, rows in (("review", reviews), ("user", users), ("business", businesses)):
        D.write_jsonl(os.path.join(out, f"{name}.json"), rows)
    print(out)


def cmd_ingest(cfg):
    if cfg["source"]:
        for k in ("review", "user", "business"):
            cfg[k] = cfg[k] or os.path.join(cfg["source"], f"{k}.json")
    _need(cfg, "review", "user", "business")
    records, stats = D.load_yelp(cfg["review"], cfg["user"], cfg["business"])
    logging.getLogger(__name__).info("ingest: %s", stats)
    ds = D.build_dataset(
        records,
        category=cfg["category"],
        n=cfg["n"],
        seed=cfg["seed"],
        len_max=cfg["len_max"],
        vocab_size=cfg["vocab_size"],
        normalize_counts=cfg["normalize_counts"],
        year=cfg["year"] or None,
    )
    out = out_path(cfg["out"])
    D.save_dataset(ds, out)
    print(out)


def cmd_train(cfg):
    _need(cfg, "dataset")
    ds = D.load_dataset(cfg["dataset"])
    out = out_path(cfg["out"])
    if cfg["model"] in BENCHMARKS:
        os.makedirs(out, exist_ok=True)
        R.write_table(os.path.join(out, "report.csv"), R.REPORT_COLUMNS, [R.run_benchmark(ds, cfg["model"], cfg["seed"])])
    else:
        spec = R.model_spec(ds, cfg["model"], cfg["preset"], cfg["seed"], cfg["roles"], cfg["frozen"])
        tc = TrainConfig(
            epochs=cfg["epochs"], batch_size=cfg["batch_size"], optimizer=cfg["optimizer"], lr=cfg["lr"], seed=cfg["seed"]
        )
        R.run_neural(ds, spec, tc, out, cfg["preset"])
    print(os.path.join(out, "report.csv"))


def cmd_evaluate(cfg):
    _need(cfg, "dataset", "run")
    ds = D.load_dataset(cfg["dataset"])
    spec = R.read_spec(os.path.join(cfg["run"], "model_spec.json"))
    scores = R.evaluate_checkpoint(ds, spec, os.path.join(cfg["run"], "model.ckpt"))
    out = out_path(cfg["out"]) or cfg["run"]
    os.makedirs(out, exist_ok=True)
    row = {"train_rmse": scores["train"], "val_rmse": scores["validation"], "test_rmse": scores["test"]}
    R.write_table(os.path.join(out, "evaluation.csv"), ("train_rmse", "val_rmse", "test_rmse"), [row])
    print(os.path.join(out, "evaluation.csv"))


def _grid_cells(cfg, out):
    cells = []
    for seed in cfg["seeds"]:
        for opt in cfg["optimizers"]:
            for m in cfg["models"]:
                cells.append(
                    {
                        "model": m, "optimizer": opt, "seed": seed, "encoder": cfg["preset"],
                        "roles": cfg["roles"], "epochs": cfg["epochs"], "batch_size": cfg["batch_size"],
                        "lr": cfg["lr"], "out_dir": os.path.join(out, "cells", f"{m}-{opt}-s{seed}"),
                    }
                )
        for b in cfg["benchmarks"]:
            cells.append({"model": b, "seed": seed})
    return cells


def _grid_worker(args):
    dataset_dir, cell = args
    return R.run_cell(D.load_dataset(dataset_dir), cell)


def cmd_grid(cfg):
    _need(cfg, "dataset")
    if cfg["workers"] < 1:
        raise UsageError("--workers must be >= 1")
    out = out_path(cfg["out"])
    cells = _grid_cells(cfg, out)
    if cfg["workers"] == 1:
        ds = D.load_dataset(cfg["dataset"])
        rows = [R.run_cell(ds, c) for c in cells]
    else:
        with ProcessPoolExecutor(cfg["workers"]) as pool:
            rows = list(pool.map(_grid_worker, [(cfg["dataset"], c) for c in cells]))
    os.makedirs(out, exist_ok=True)
    R.write_table(os.path.join(out, "results.csv"), R.REPORT_COLUMNS, R.sort_by_test(rows))
    print(os.path.join(out, "results.csv"))


def cmd_compare_optimizers(cfg):
    _need(cfg, "dataset")
    if not cfg["optimizers"]:
        raise UsageError("--optimizers is empty")
    ds = D.load_dataset(cfg["dataset"])
    out = out_path(cfg["out"])
    os.makedirs(out, exist_ok=True)
    spec = R.model_spec(ds, cfg["model"], cfg["preset"], cfg["seed"])
    traces, rows = {}, []
    for opt in cfg["optimizers"]:
        tc = TrainConfig(epochs=cfg["epochs"], batch_size=cfg["batch_size"], optimizer=opt, seed=cfg["seed"])
        row, rep, _ = R.run_neural(ds, spec, tc, None, cfg["preset"])
        traces[opt] = rep.trace
        rows.append(row)
        write_trace(os.path.join(out, f"trace_{opt}.csv"), rep.trace)
    cols = ["epoch"] + [f"{o}_{k}" for o in cfg["optimizers"] for k in ("train_loss", "val_rmse")]
    aligned = []
    for i in range(cfg["epochs"]):
        row = {"epoch": i + 1}
        for o in cfg["optimizers"]:
            _, loss, val = traces[o][i]
            row[f"{o}_train_loss"], row[f"{o}_val_rmse"] = float(loss), float(val)
        aligned.append(row)
    R.write_table(os.path.join(out, "optimizer_traces.csv"), cols, aligned)
    R.write_table(os.path.join(out, "optimizer_results.csv"), R.REPORT_COLUMNS, R.sort_by_test(rows))
    print(os.path.join(out, "optimizer_traces.csv"))


def cmd_strata(cfg):
    _need(cfg, "dataset", "checkpoint")
    if cfg["k"] < 1:
        raise UsageError("--k must be >= 1")
    run_dir = os.path.dirname(os.path.abspath(cfg["checkpoint"]))
    spec = R.read_spec(cfg["spec"] or os.path.join(run_dir, "model_spec.json"))
    ds = D.load_dataset(cfg["dataset"])
    rows = R.strata_rows(ds, spec, cfg["checkpoint"], cfg["k"])
    out = out_path(cfg["out"]) or run_dir
    os.makedirs(out, exist_ok=True)
    R.write_table(os.path.join(out, "strata.csv"), R.STRATA_COLUMNS, rows)
    print(os.path.join(out, "strata.csv"))


HANDLERS = {
    "synth": cmd_synth,
    "ingest": cmd_ingest,
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "grid": cmd_grid,
    "compare-optimizers": cmd_compare_optimizers,
    "strata": cmd_strata,
}


def _fail(category, msg):
    print(f"error: {category}: {msg}", file=sys.stderr)
    return EXIT[category]


def main(argv=None):
    try:
        args = build_parser().parse_args(argv)
    except UsageError as e:
        return _fail("usage", e)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve(args.command, args)
        _print_config(args.command, cfg)
        HANDLERS[args.command](cfg)
    except UsageError as e:
        return _fail("usage", e)
    except CheckpointError as e:
        return _fail("checkpoint", e)
    except (TrainingError, NonFiniteGradientError) as e:
        return _fail("training", e)
    except (OSError, D.IngestError, KeyError, ValueError) as e:
        return _fail("input", str(e).splitlines()[0] if str(e) else type(e).__name__)
    return 0


if __name__ == "__main__":
    sys.exit(main())
