"""Command-line front end.

Every command writes its outputs plus a ``manifest.json`` into one run
directory (``--out``, default ``$MARGIN_ENGINE_OUTPUT_DIR/<command>``).
Exit codes: 0 success, 1 runtime error, 2 usage error.
"""

import argparse
import logging
import math
import os
import sys
from concurrent.futures import ThreadPoolExecutor, as_completed

import numpy as np

from . import __version__
from .bounds import BOUND_CSV_HEADER, build_report
from .config import RUN_CONFIG_KEYS, Settings, load_run_config
from .cushion import estimate_profile
from .data import find_mnist, import_csv, load_idx, split_holdout, subset_fraction, synth_blobs
from .errors import InvalidConfigError, MarginEngineError
from .manifest import RunManifest
from .margins import (
    HISTOGRAM_CSV_HEADER,
    LOSS_VARIANTS,
    MARGIN_CSV_HEADER,
    LossConfig,
    margin_histogram,
    margin_rows,
    margin_stats,
    variance_decomposition,
)
from .network import checkpoint_meta, forward_batch, load_checkpoint, save_checkpoint
from .perturb import DELTA_CSV_HEADER, extreme_value_mc, perturbation_experiment
from .runs import RunStore
from .storage import checkpoint_path, ensure_dirs, run_paths, write_csv, write_json
from .trainer import GRID_CSV_HEADER, HISTORY_CSV_HEADER, TrainConfig, evaluate, grid_search, train

logger = logging.getLogger(__name__)

SMALL_SAMPLE_HEADER = (
    "fraction", "loss", "seed", "train_size", "train_accuracy", "test_accuracy", "train_lambda",
)
SMALL_SAMPLE_SUMMARY_HEADER = ("fraction", "loss", "runs", "mean_test_accuracy", "std_test_accuracy")

_TRUE = ("1", "true", "yes", "on")

# Defaults for options that may also come from a run config file.
DEFAULTS = {
    "data": None,
    "data_dir": None,
    "loss": "mdnet",
    "r": 2.0,
    "theta": 0.5,
    "eta": 1.0,
    "hinge_margin": 1.0,
    "theta_scale_a": 1.0,
    "adaptive_theta": False,
    "layers": "64,64",
    "epochs": 20,
    "batch_size": 64,
    "learning_rate": 0.01,
    "momentum": 0.9,
    "seed": 0,
    "telemetry_every": 1,
    "bound_telemetry": False,
    "delta": None,
    "classes": 3,
    "dim": 10,
    "per_class": 100,
    "separation": 4.0,
    "train_size": None,
    "test_size": None,
    "fraction": 1.0,
    "holdout": 100,
}

CONVERTERS = {
    "r": float, "theta": float, "eta": float, "hinge_margin": float, "theta_scale_a": float,
    "learning_rate": float, "momentum": float, "delta": float, "separation": float, "fraction": float,
    "epochs": int, "batch_size": int, "seed": int, "telemetry_every": int, "classes": int,
    "dim": int, "per_class": int, "train_size": int, "test_size": int, "holdout": int,
    "adaptive_theta": lambda v: v if isinstance(v, bool) else str(v).lower() in _TRUE,
    "bound_telemetry": lambda v: v if isinstance(v, bool) else str(v).lower() in _TRUE,
}


def _int_list(text):
    return [int(v) for v in str(text).split(",") if v.strip()]


def _float_list(text):
    return [float(v) for v in str(text).split(",") if v.strip()]


def _str_list(text):
    return [v.strip() for v in str(text).split(",") if v.strip()]


# ── Option resolution ─────────────────────────────────────────────────────────

def _resolve(args, parser):
    """Merge flags > config file > defaults into a plain dict."""
    file_values = {}
    if getattr(args, "config", None):
        try:
            file_values = load_run_config(args.config)
        except InvalidConfigError as exc:
            parser.error(str(exc))
    opts = dict(vars(args))
    for key in RUN_CONFIG_KEYS:
        if opts.get(key) is not None:
            continue
        if key in file_values:
            raw = file_values[key]
            try:
                opts[key] = CONVERTERS.get(key, str)(raw)
            except ValueError:
                parser.error(f"config value {key}={raw!r} is not valid")
        else:
            opts[key] = DEFAULTS.get(key)
    return opts


def _require(opts, parser, *keys):
    missing = [k for k in keys if opts.get(k) is None]
    if missing:
        parser.error("missing required option(s): " + ", ".join("--" + k.replace("_", "-") for k in missing))


def _loss_config(opts, variant=None) -> LossConfig:
    return LossConfig(
        variant=variant or opts["loss"],
        r=opts["r"],
        theta=opts["theta"],
        eta=opts["eta"],
        hinge_margin=opts["hinge_margin"],
        theta_scale_a=opts["theta_scale_a"],
        adaptive_theta=opts["adaptive_theta"],
    )


def _train_config(opts, data, variant=None, seed=None) -> TrainConfig:
    hidden = _int_list(opts["layers"])
    return TrainConfig(
        loss=_loss_config(opts, variant),
        layer_dims=tuple([data.n] + hidden + [data.k]),
        epochs=opts["epochs"],
        batch_size=opts["batch_size"],
        learning_rate=opts["learning_rate"],
        momentum=opts["momentum"],
        seed=opts["seed"] if seed is None else seed,
        telemetry_every=opts["telemetry_every"],
        bound_telemetry=opts["bound_telemetry"],
        delta=opts["delta"],
    )


def _data_config(opts) -> dict:
    keys = ("data", "data_dir", "classes", "dim", "per_class", "separation", "train_size",
            "test_size", "data_seed", "images", "labels", "test_images", "test_labels", "csv", "test_csv")
    return {k: opts.get(k) for k in keys if opts.get(k) is not None}


def _shrink(data, size, seed):
    if size is None or size >= len(data):
        return data
    return subset_fraction(data, size / len(data), seed, stratified=True)


def _load_datasets(opts, settings):
    """(train, test, input file paths) for the selected data source."""
    source = opts["data"]
    seed = opts.get("data_seed") or 0
    inputs = {}
    if source == "synth":
        k, per_class = opts["classes"], opts["per_class"]
        test_per_class = opts["test_size"] // k if opts["test_size"] else max(1, per_class // 4)
        full = synth_blobs(k, opts["dim"], per_class + test_per_class, opts["separation"], seed)
        train_data, test_data = split_holdout(full, k * test_per_class, seed)
    elif source == "mnist":
        data_dir = opts["data_dir"] or settings.data_dir
        images, labels = find_mnist(data_dir, "train")
        inputs.update(train_images=images, train_labels=labels)
        train_data = _shrink(load_idx(images, labels), opts["train_size"], seed)
        try:
            t_images, t_labels = find_mnist(data_dir, "test")
        except FileNotFoundError:
            test_data = None
        else:
            inputs.update(test_images=t_images, test_labels=t_labels)
            test_data = _shrink(load_idx(t_images, t_labels), opts["test_size"], seed)
    elif source == "idx":
        if not opts.get("images") or not opts.get("labels"):
            raise InvalidConfigError("--data idx needs --images and --labels")
        inputs.update(train_images=opts["images"], train_labels=opts["labels"])
        train_data = _shrink(load_idx(opts["images"], opts["labels"]), opts["train_size"], seed)
        test_data = None
        if opts.get("test_images") and opts.get("test_labels"):
            inputs.update(test_images=opts["test_images"], test_labels=opts["test_labels"])
            test_data = load_idx(opts["test_images"], opts["test_labels"], k=train_data.k)
    elif source == "csv":
        if not opts.get("csv"):
            raise InvalidConfigError("--data csv needs --csv")
        inputs["train_csv"] = opts["csv"]
        train_data = import_csv(opts["csv"])
        test_data = None
        if opts.get("test_csv"):
            inputs["test_csv"] = opts["test_csv"]
            test_data = import_csv(opts["test_csv"], k=train_data.k)
    else:
        raise InvalidConfigError(f"unknown data source {source!r}")
    logger.info("data %s: %d train / %s test samples", source, len(train_data),
                "-" if test_data is None else len(test_data))
    return train_data, test_data, inputs


def _run_dir(opts, settings, command):
    run_dir = opts.get("out") or run_paths(settings.output_dir, command)[0]
    run_dir = os.path.abspath(run_dir)
    ensure_dirs(run_dir)
    return run_dir, os.path.join(run_dir, "manifest.json")


# ── Commands ──────────────────────────────────────────────────────────────────

def cmd_train(opts, settings):
    train_data, test_data, inputs = _load_datasets(opts, settings)
    cfg = _train_config(opts, train_data)
    run_dir, manifest_path = _run_dir(opts, settings, "train")
    outputs = {}

    def keep_checkpoint(params, record):
        if opts.get("checkpoint_every") and record.epoch % opts["checkpoint_every"] == 0:
            path = checkpoint_path(run_dir, record.epoch)
            save_checkpoint(params, path, extra={"epoch": record.epoch})
            outputs[f"checkpoint_epoch{record.epoch:04d}"] = path

    params, history = train(cfg, train_data, test_data, on_telemetry=keep_checkpoint)
    outputs["checkpoint"] = save_checkpoint(params, checkpoint_path(run_dir), extra={"epoch": cfg.epochs})
    outputs["history_csv"] = write_csv(os.path.join(run_dir, "history.csv"), HISTORY_CSV_HEADER, history.rows())
    outputs["history_json"] = write_json(
        os.path.join(run_dir, "history.json"),
        {"manifest": "manifest.json", "config": cfg.to_dict(), **history.to_dict()},
    )
    manifest = RunManifest(
        command="train",
        config={"train": cfg.to_dict(), "data": _data_config(opts)},
        seeds=[cfg.seed, opts.get("data_seed") or 0],
        inputs=inputs,
        outputs=outputs,
    )
    manifest.write(manifest_path)
    final = history.final
    print(f"train accuracy {final.train_accuracy:.4f}"
          + ("" if final.eval_accuracy is None else f", eval accuracy {final.eval_accuracy:.4f}"))
    return manifest_path


def _checkpoint_order(paths):
    def key(item):
        position, path = item
        epoch = checkpoint_meta(path).get("epoch")
        return (math.inf if epoch is None else epoch, position)

    return [path for _, path in sorted(enumerate(paths), key=key)]


def _checkpoint_labels(paths):
    """Paths relative to their common directory, index-prefixed when still ambiguous."""
    absolute = [os.path.abspath(p) for p in paths]
    root = os.path.commonpath([os.path.dirname(p) for p in absolute])
    labels = [os.path.relpath(p, root) for p in absolute]
    if len(set(labels)) < len(labels):
        labels = [f"{i}:{label}" for i, label in enumerate(labels)]
    return labels


def cmd_bounds(opts, settings):
    train_data, _, inputs = _load_datasets(opts, settings)
    run_dir, manifest_path = _run_dir(opts, settings, "bounds")
    delta = opts["delta"]
    reports, rows, profiles = [], [], {}
    ordered = _checkpoint_order(opts["checkpoint"])
    for index, (label, path) in enumerate(zip(_checkpoint_labels(ordered), ordered)):
        inputs[f"checkpoint_{index}"] = path
        params = load_checkpoint(path)
        epoch = checkpoint_meta(path).get("epoch")
        stats = margin_stats(params, train_data)
        profile = estimate_profile(
            params, train_data, denominator=opts["cushion_variant"],
            smoothness_trials=opts["smoothness_trials"], seed=opts["seed"],
        )
        report = build_report(
            params, train_data, stats, profile, delta=delta, policy=opts["gamma_policy"],
            percentile=opts["percentile"], transpose=opts["transpose_norms"],
        )
        if not report.extra["mdnet_valid"]:
            logger.warning("%s: margin ratio lambda=%.4g is not < 1; margin-ratio terms flagged invalid",
                           path, stats.ratio_lambda)
        profiles[label] = profile.to_dict()
        reports.append({"checkpoint": label, "epoch": epoch, **report.to_dict()})
        rows.append(report.csv_row(label=label, epoch=epoch))
    outputs = {
        "bounds_json": write_json(os.path.join(run_dir, "bounds.json"),
                                  {"manifest": "manifest.json", "reports": reports}),
        "bounds_csv": write_csv(os.path.join(run_dir, "bounds.csv"), BOUND_CSV_HEADER, rows),
        "cushions_json": write_json(os.path.join(run_dir, "cushions.json"),
                                    {"manifest": "manifest.json", "profiles": profiles}),
    }
    RunManifest(
        command="bounds",
        config={"delta": delta, "gamma_policy": opts["gamma_policy"], "percentile": opts["percentile"],
                "transpose_norms": opts["transpose_norms"], "cushion_variant": opts["cushion_variant"],
                "smoothness_trials": opts["smoothness_trials"], "data": _data_config(opts)},
        seeds=[opts["seed"]],
        inputs=inputs,
        outputs=outputs,
    ).write(manifest_path)
    return manifest_path


def _small_sample_cell(opts, train_data, test_data, fraction, variant, seed):
    subset = subset_fraction(train_data, fraction, seed, stratified=True)
    cfg = _train_config(opts, subset, variant=variant, seed=seed)
    params, history = train(cfg, subset)
    test_acc, _ = evaluate(params, test_data)
    final = history.final
    return [fraction, variant, seed, len(subset), final.train_accuracy, test_acc,
            final.train_margins.ratio_lambda]


def cmd_small_sample(opts, settings):
    train_data, test_data, inputs = _load_datasets(opts, settings)
    if test_data is None:
        raise InvalidConfigError("small-sample sweep needs a test set")
    fractions = _float_list(opts["fractions"])
    losses = _str_list(opts["losses"])
    seeds = _int_list(opts["seeds"])
    for variant in losses:
        if variant not in LOSS_VARIANTS:
            raise InvalidConfigError(f"unknown loss {variant!r}")
    cells = [(f, v, s) for f in fractions for v in losses for s in seeds]
    results = {}
    with ThreadPoolExecutor(max_workers=max(1, settings.workers)) as executor:
        futures = {
            executor.submit(_small_sample_cell, opts, train_data, test_data, f, v, s): i
            for i, (f, v, s) in enumerate(cells)
        }
        for future in as_completed(futures):
            results[futures[future]] = future.result()
    rows = [results[i] for i in range(len(cells))]

    summary = []
    for fraction in fractions:
        for variant in losses:
            accs = np.array([row[5] for row in rows if row[0] == fraction and row[1] == variant])
            summary.append([fraction, variant, accs.size, float(accs.mean()), float(accs.std())])

    run_dir, manifest_path = _run_dir(opts, settings, "small_sample")
    outputs = {
        "table_csv": write_csv(os.path.join(run_dir, "small_sample.csv"), SMALL_SAMPLE_HEADER, rows),
        "summary_csv": write_csv(os.path.join(run_dir, "small_sample_summary.csv"),
                                 SMALL_SAMPLE_SUMMARY_HEADER, summary),
    }
    base = _train_config(opts, train_data)
    RunManifest(
        command="small-sample",
        config={"train": base.to_dict(), "fractions": fractions, "losses": losses,
                "data": _data_config(opts)},
        seeds=seeds,
        inputs=inputs,
        outputs=outputs,
    ).write(manifest_path)
    return manifest_path


def cmd_perturb(opts, settings):
    train_data, _, inputs = _load_datasets(opts, settings)
    inputs["checkpoint"] = opts["checkpoint"]
    params = load_checkpoint(opts["checkpoint"])
    stats = margin_stats(params, train_data)
    profile = estimate_profile(params, train_data)
    report = perturbation_experiment(
        params, train_data, stats, profile, trials=opts["trials"], seed=opts["seed"],
        sigma=opts["sigma"], workers=settings.workers,
    )
    run_dir, manifest_path = _run_dir(opts, settings, "perturb")
    outputs = {"perturb_json": write_json(
        os.path.join(run_dir, "perturb.json"),
        {"manifest": "manifest.json", **report.to_dict(include_deltas=True)},
    )}
    if opts["dump_deltas"]:
        outputs["deltas_csv"] = write_csv(os.path.join(run_dir, "deltas.csv"), DELTA_CSV_HEADER,
                                          report.delta_rows())
    RunManifest(
        command="perturb",
        config={"trials": opts["trials"], "sigma": opts["sigma"], "data": _data_config(opts)},
        seeds=[opts["seed"]],
        inputs=inputs,
        outputs=outputs,
    ).write(manifest_path)
    print(f"fraction below threshold {report.fraction_below_threshold:.4f}")
    return manifest_path


def cmd_extreme(opts, settings):
    m, trials, seed = opts["m"], opts["trials"], opts["seed"]
    frequency = extreme_value_mc(m, trials, seed)
    expected = 1.0 / (m + 1)
    run_dir, manifest_path = _run_dir(opts, settings, "extreme")
    outputs = {"extreme_json": write_json(os.path.join(run_dir, "extreme.json"), {
        "manifest": "manifest.json",
        "m": m,
        "trials": trials,
        "seed": seed,
        "frequency": frequency,
        "expected": expected,
        "ci_halfwidth_3sigma": 3.0 * math.sqrt(expected * (1 - expected) / trials),
    })}
    RunManifest(command="extreme", config={"m": m, "trials": trials}, seeds=[seed],
                outputs=outputs).write(manifest_path)
    print(f"frequency {frequency:.6f} (expected {expected:.6f})")
    return manifest_path


def _embedding_summary(params, data):
    if params.d < 2:
        raise InvalidConfigError("embeddings need a network with at least one hidden layer")
    embeddings = forward_batch(params, data.features).phi(params.d - 1)
    decomposition = variance_decomposition(embeddings, data.labels)
    stats = margin_stats(params, data)
    summary = {
        "S_A": decomposition.s_a,
        "S_E": decomposition.s_e,
        "ratio": decomposition.ratio,
        "ratio_infinite": decomposition.ratio_infinite,
        "inverse_lambda": (1.0 / stats.ratio_lambda) if stats.ratio_lambda > 0 else math.inf,
        "count": len(data),
    }
    return embeddings, summary


def cmd_embed(opts, settings):
    train_data, test_data, inputs = _load_datasets(opts, settings)
    inputs["checkpoint"] = opts["checkpoint"]
    params = load_checkpoint(opts["checkpoint"])
    embeddings, train_summary = _embedding_summary(params, train_data)
    run_dir, manifest_path = _run_dir(opts, settings, "embed")
    header = ["sample_id", "label"] + [f"e{j}" for j in range(embeddings.shape[1])]
    rows = [[i, int(label)] + row.tolist() for i, (label, row) in enumerate(zip(train_data.labels, embeddings))]
    summary = {"manifest": "manifest.json", "train": train_summary}
    if test_data is not None:
        summary["eval"] = _embedding_summary(params, test_data)[1]
    outputs = {
        "embeddings_csv": write_csv(os.path.join(run_dir, "embeddings.csv"), header, rows),
        "summary_json": write_json(os.path.join(run_dir, "embed_summary.json"), summary),
    }
    RunManifest(command="embed", config={"data": _data_config(opts)}, seeds=[opts.get("data_seed") or 0],
                inputs=inputs, outputs=outputs).write(manifest_path)
    return manifest_path


def cmd_margins(opts, settings):
    train_data, _, inputs = _load_datasets(opts, settings)
    inputs["checkpoint"] = opts["checkpoint"]
    params = load_checkpoint(opts["checkpoint"])
    stats = margin_stats(params, train_data)
    run_dir, manifest_path = _run_dir(opts, settings, "margins")
    outputs = {
        "margins_csv": write_csv(os.path.join(run_dir, "margins.csv"), MARGIN_CSV_HEADER,
                                 margin_rows(params, train_data)),
        "histogram_csv": write_csv(os.path.join(run_dir, "histogram.csv"), HISTOGRAM_CSV_HEADER,
                                   margin_histogram(stats.margins, opts["bins"])),
        "stats_json": write_json(os.path.join(run_dir, "margin_stats.json"),
                                 {"manifest": "manifest.json", **stats.summary()}),
    }
    RunManifest(command="margins", config={"bins": opts["bins"], "data": _data_config(opts)},
                seeds=[opts.get("data_seed") or 0], inputs=inputs, outputs=outputs).write(manifest_path)
    return manifest_path


def cmd_grid(opts, settings):
    train_data, _, inputs = _load_datasets(opts, settings)
    base = _train_config(opts, train_data)
    result = grid_search(
        base, _float_list(opts["r_values"]), _float_list(opts["theta_values"]),
        _float_list(opts["eta_values"]), train_data, opts["holdout"], workers=settings.workers,
    )
    run_dir, manifest_path = _run_dir(opts, settings, "grid")
    outputs = {
        "grid_csv": write_csv(os.path.join(run_dir, "grid.csv"), GRID_CSV_HEADER, result.table),
        "best_json": write_json(os.path.join(run_dir, "grid_best.json"),
                                {"manifest": "manifest.json", "index": result.best_index,
                                 "config": result.best.to_dict()}),
    }
    RunManifest(command="grid", config={"base": base.to_dict(), "r_values": opts["r_values"],
                                        "theta_values": opts["theta_values"],
                                        "eta_values": opts["eta_values"], "holdout": opts["holdout"],
                                        "data": _data_config(opts)},
                seeds=[base.seed], inputs=inputs, outputs=outputs).write(manifest_path)
    return manifest_path


COMMANDS = {
    "train": cmd_train,
    "bounds": cmd_bounds,
    "small-sample": cmd_small_sample,
    "perturb": cmd_perturb,
    "extreme": cmd_extreme,
    "embed": cmd_embed,
    "margins": cmd_margins,
    "grid": cmd_grid,
}


# ── Parser ────────────────────────────────────────────────────────────────────

def _add_common(p):
    p.add_argument("--out", help="run directory (default: $MARGIN_ENGINE_OUTPUT_DIR/<command>)")
    p.add_argument("--config", help="key=value run config file; flags override it")
    p.add_argument("--log-level", help="DEBUG, INFO, WARNING or ERROR")
    p.add_argument("--seed", type=int)


def _add_data(p):
    p.add_argument("--data", choices=("synth", "mnist", "idx", "csv"))
    p.add_argument("--data-dir", help="directory holding the MNIST IDX files")
    p.add_argument("--data-seed", type=int, help="seed for synthetic data and subsetting")
    p.add_argument("--images")
    p.add_argument("--labels")
    p.add_argument("--test-images")
    p.add_argument("--test-labels")
    p.add_argument("--csv")
    p.add_argument("--test-csv")
    p.add_argument("--classes", type=int)
    p.add_argument("--dim", type=int)
    p.add_argument("--per-class", type=int)
    p.add_argument("--separation", type=float)
    p.add_argument("--train-size", type=int)
    p.add_argument("--test-size", type=int)


def _add_training(p):
    p.add_argument("--loss", choices=LOSS_VARIANTS)
    p.add_argument("--r", type=float)
    p.add_argument("--theta", type=float)
    p.add_argument("--eta", type=float)
    p.add_argument("--hinge-margin", type=float)
    p.add_argument("--theta-scale-a", type=float)
    p.add_argument("--adaptive-theta", action="store_const", const=True)
    p.add_argument("--layers", help="comma-separated hidden layer widths")
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--learning-rate", "--lr", dest="learning_rate", type=float)
    p.add_argument("--momentum", type=float)
    p.add_argument("--telemetry-every", type=int)
    p.add_argument("--bound-telemetry", action="store_const", const=True)
    p.add_argument("--delta", type=float)


def _add_checkpoint(p, many=False):
    if many:
        p.add_argument("--checkpoint", nargs="+", required=True)
    else:
        p.add_argument("--checkpoint", required=True)


def build_parser():
    parser = argparse.ArgumentParser(prog="margin-engine", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a network and write checkpoint + history")
    _add_common(p)
    _add_data(p)
    _add_training(p)
    p.add_argument("--checkpoint-every", type=int, help="also keep a checkpoint every N epochs")

    p = sub.add_parser("bounds", help="cushions, margin statistics and all bound terms")
    _add_common(p)
    _add_data(p)
    _add_checkpoint(p, many=True)
    p.add_argument("--delta", type=float)
    p.add_argument("--gamma-policy", choices=("percentile", "minimum"), default="percentile")
    p.add_argument("--percentile", type=float, default=5.0)
    p.add_argument("--transpose-norms", action="store_true", help="group matrix norms by rows")
    p.add_argument("--cushion-variant", choices=("postact", "preact"), default="postact")
    p.add_argument("--smoothness-trials", type=int, default=0)

    p = sub.add_parser("small-sample", help="accuracy vs training fraction sweep")
    _add_common(p)
    _add_data(p)
    _add_training(p)
    p.add_argument("--fractions", required=True, help="comma-separated, e.g. 0.01,0.05")
    p.add_argument("--losses", default="mdnet,hinge,soft_hinge,cross_entropy")
    p.add_argument("--seeds", default="0")

    p = sub.add_parser("perturb", help="Monte-Carlo weight perturbation experiment")
    _add_common(p)
    _add_data(p)
    _add_checkpoint(p)
    p.add_argument("--trials", type=int, default=100)
    p.add_argument("--sigma", type=float, help="override the margin-derived sigma")
    p.add_argument("--dump-deltas", action="store_true")

    p = sub.add_parser("extreme", help="extreme-value tail frequency check")
    _add_common(p)
    p.add_argument("--m", type=int, required=True)
    p.add_argument("--trials", type=int, default=100000)

    p = sub.add_parser("embed", help="last-hidden-layer embeddings and variance decomposition")
    _add_common(p)
    _add_data(p)
    _add_checkpoint(p)

    p = sub.add_parser("margins", help="per-sample margins, histogram and statistics")
    _add_common(p)
    _add_data(p)
    _add_checkpoint(p)
    p.add_argument("--bins", type=int, default=50)

    p = sub.add_parser("grid", help="hyper-parameter grid over r, theta and eta")
    _add_common(p)
    _add_data(p)
    _add_training(p)
    p.add_argument("--r-values", required=True)
    p.add_argument("--theta-values", required=True)
    p.add_argument("--eta-values", default="1.0")
    p.add_argument("--holdout", type=int)
    return parser


def main(argv=None):
    settings = Settings()
    parser = build_parser()
    args = parser.parse_args(argv)
    opts = _resolve(args, parser)
    if args.command not in ("extreme",):
        _require(opts, parser, "data")
    if opts.get("data") == "synth" and opts.get("test_size") is not None and opts["test_size"] < opts["classes"]:
        parser.error(f"--test-size {opts['test_size']} leaves an empty test split for {opts['classes']} classes")
    opts["seed"] = opts["seed"] if opts["seed"] is not None else 0
    if opts.get("delta") is None:
        opts["delta"] = settings.delta

    level = (opts.get("log_level") or settings.log_level).upper()
    logging.basicConfig(
        level=getattr(logging, level, logging.INFO),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )

    store = None
    run_id = None
    if settings.registry_enabled:
        try:
            ensure_dirs(settings.output_dir)
            store = RunStore(settings.registry_path)
            run_id = store.create_run(args.command, {k: v for k, v in opts.items() if v is not None})
        except OSError as exc:
            logger.warning("run registry unavailable: %s", exc)
            store = None

    try:
        manifest_path = COMMANDS[args.command](opts, settings)
    except (MarginEngineError, OSError) as exc:
        logger.error("%s failed: %s", args.command, exc)
        print(f"error: {exc}", file=sys.stderr)
        if store is not None:
            store.update_run(run_id, status="failed", error=str(exc), exit_code=1)
        return 1
    if store is not None:
        store.update_run(run_id, status="completed", manifest_path=manifest_path, exit_code=0)
    logger.info("%s finished; manifest at %s", args.command, manifest_path)
    return 0
