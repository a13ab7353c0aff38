"""Mini-batch SGD with momentum, per-epoch margin telemetry and grid search."""

import itertools
import logging
import math
from concurrent.futures import ThreadPoolExecutor, as_completed
from dataclasses import dataclass, field, replace

import numpy as np

from .bounds import DEFAULT_DELTA, build_report
from .cushion import estimate_profile
from .data import split_holdout
from .errors import (
    DimensionError,
    EmptyInputError,
    InvalidConfigError,
    MarginEngineError,
    NonFiniteError,
    TrainingDivergedError,
)
from .margins import LossConfig, MarginStats, batch_loss_and_score_grad, margins_batch, stats_from_margins
from .network import NetworkParams, backward_batch, forward_batch, init_params, scores_batch

logger = logging.getLogger(__name__)

HISTORY_CSV_HEADER = (
    "epoch", "train_loss", "train_accuracy", "eval_accuracy", "train_margin_mean",
    "train_margin_var", "train_lambda", "eval_lambda", "theta_used", "mdnet_ratio", "theorem1_gap",
)
GRID_CSV_HEADER = ("index", "r", "theta", "eta", "status", "validation_accuracy", "train_accuracy", "best")

THETA_CEILING = 0.99
THETA_FLOOR = 1e-6


@dataclass(frozen=True)
class TrainConfig:
    loss: LossConfig = field(default_factory=LossConfig)
    layer_dims: tuple = (2, 16, 2)
    epochs: int = 20
    batch_size: int = 64
    learning_rate: float = 0.01
    momentum: float = 0.9
    seed: int = 0
    telemetry_every: int = 1
    bound_telemetry: bool = False
    delta: float = DEFAULT_DELTA

    def validate(self) -> "TrainConfig":
        self.loss.validate()
        if self.epochs < 1:
            raise InvalidConfigError("epochs must be >= 1")
        if self.batch_size < 1:
            raise InvalidConfigError("batch_size must be >= 1")
        if self.learning_rate < 0:
            raise InvalidConfigError("learning_rate must be >= 0")
        if not 0 <= self.momentum < 1:
            raise InvalidConfigError("momentum must lie in [0, 1)")
        if self.telemetry_every < 1:
            raise InvalidConfigError("telemetry_every must be >= 1")
        if len(self.layer_dims) < 2:
            raise InvalidConfigError("layer_dims needs at least an input and an output size")
        return self

    def to_dict(self) -> dict:
        return {
            "loss": {
                "variant": self.loss.variant,
                "r": self.loss.r,
                "theta": self.loss.theta,
                "eta": self.loss.eta,
                "hinge_margin": self.loss.hinge_margin,
                "theta_scale_a": self.loss.theta_scale_a,
                "adaptive_theta": self.loss.adaptive_theta,
            },
            "layer_dims": list(self.layer_dims),
            "epochs": self.epochs,
            "batch_size": self.batch_size,
            "learning_rate": self.learning_rate,
            "momentum": self.momentum,
            "seed": self.seed,
            "telemetry_every": self.telemetry_every,
            "bound_telemetry": self.bound_telemetry,
            "delta": self.delta,
        }


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    train_accuracy: float
    eval_accuracy: float
    train_margins: MarginStats
    eval_margins: MarginStats = None
    theta_used: float = None
    bounds: object = None

    def row(self) -> list:
        bounds = self.bounds
        return [
            self.epoch,
            self.train_loss,
            self.train_accuracy,
            "" if self.eval_accuracy is None else self.eval_accuracy,
            self.train_margins.mean_r,
            self.train_margins.var_theta2,
            self.train_margins.ratio_lambda,
            "" if self.eval_margins is None else self.eval_margins.ratio_lambda,
            "" if self.theta_used is None else self.theta_used,
            "" if bounds is None else bounds.terms["mdnet_ratio"],
            "" if bounds is None else bounds.theorem1_gap,
        ]

    def to_dict(self) -> dict:
        return {
            "epoch": self.epoch,
            "train_loss": self.train_loss,
            "train_accuracy": self.train_accuracy,
            "eval_accuracy": self.eval_accuracy,
            "train_margins": self.train_margins.summary(),
            "eval_margins": None if self.eval_margins is None else self.eval_margins.summary(),
            "theta_used": self.theta_used,
            "bounds": None if self.bounds is None else self.bounds.to_dict(),
        }


@dataclass
class TrainHistory:
    records: list = field(default_factory=list)

    def append(self, record: EpochRecord) -> None:
        if self.records and record.epoch <= self.records[-1].epoch:
            raise ValueError("telemetry epochs must be strictly increasing")
        self.records.append(record)

    @property
    def final(self) -> EpochRecord:
        return self.records[-1]

    def rows(self) -> list:
        return [r.row() for r in self.records]

    def to_dict(self) -> dict:
        return {"records": [r.to_dict() for r in self.records]}


def evaluate(params: NetworkParams, data):
    """(accuracy, MarginStats); predicted label is the lowest-index argmax."""
    if len(data) == 0:
        raise EmptyInputError("cannot evaluate on an empty dataset")
    scores = scores_batch(params, data.features)
    predicted = np.argmax(scores, axis=1)
    accuracy = float(np.count_nonzero(predicted == data.labels)) / len(data)
    margins, _ = margins_batch(scores, data.labels)
    return accuracy, stats_from_margins(margins)


def _adaptive_theta(params: NetworkParams, data, loss: LossConfig) -> float:
    _, stats = evaluate(params, data)
    theta = loss.theta_scale_a * stats.theta
    return min(max(theta, THETA_FLOOR * loss.r), THETA_CEILING * loss.r)


def _check_shapes(cfg: TrainConfig, data) -> None:
    if cfg.layer_dims[0] != data.n:
        raise DimensionError(f"network input dim {cfg.layer_dims[0]} != data dim {data.n}")
    if cfg.layer_dims[-1] != data.k:
        raise DimensionError(f"network output dim {cfg.layer_dims[-1]} != class count {data.k}")


def train(cfg: TrainConfig, train_data, eval_data=None, on_telemetry=None):
    """Train a fresh network; returns (params, TrainHistory).

    Initialisation uses ``cfg.seed``; shuffling uses the stream (seed, 1).
    ``on_telemetry(params, record)`` is called after each telemetry record.
    """
    cfg.validate()
    if len(train_data) == 0:
        raise EmptyInputError("training set is empty")
    _check_shapes(cfg, train_data)
    if eval_data is not None and len(eval_data) == 0:
        eval_data = None

    params = init_params(cfg.layer_dims, cfg.seed)
    weights = [w.copy() for w in params.weights]
    velocity = [np.zeros_like(w) for w in weights]
    shuffle_rng = np.random.default_rng((cfg.seed, 1))
    loss = cfg.loss
    history = TrainHistory()
    m = len(train_data)

    for epoch in range(1, cfg.epochs + 1):
        if loss.variant == "mdnet" and loss.adaptive_theta:
            loss = loss.with_theta(_adaptive_theta(params, train_data, loss))
            logger.debug("epoch %d: adaptive theta %.6g", epoch, loss.theta)
        order = shuffle_rng.permutation(m)
        loss_sum = 0.0
        for batch, start in enumerate(range(0, m, cfg.batch_size)):
            idx = order[start:start + cfg.batch_size]
            trace = forward_batch(params, train_data.features[idx])
            losses, dscores = batch_loss_and_score_grad(trace.scores, train_data.labels[idx], loss)
            batch_loss = float(np.mean(losses))
            if not math.isfinite(batch_loss):
                raise TrainingDivergedError(epoch, batch, f"loss={batch_loss}")
            grads = backward_batch(params, trace, dscores / idx.size)
            for w, v, g in zip(weights, velocity, grads):
                v *= cfg.momentum
                v -= cfg.learning_rate * g
                w += v
            try:
                params = NetworkParams(tuple(weights))
            except NonFiniteError as exc:
                raise TrainingDivergedError(epoch, batch, "weights became non-finite") from exc
            loss_sum += batch_loss * idx.size

        if epoch % cfg.telemetry_every == 0 or epoch == cfg.epochs:
            train_acc, train_stats = evaluate(params, train_data)
            eval_acc, eval_stats = (None, None) if eval_data is None else evaluate(params, eval_data)
            bounds = None
            if cfg.bound_telemetry:
                try:
                    profile = estimate_profile(params, train_data)
                    bounds = build_report(params, train_data, train_stats, profile, delta=cfg.delta)
                except MarginEngineError as exc:
                    logger.warning("epoch %d: bound telemetry unavailable: %s", epoch, exc)
            record = EpochRecord(
                epoch=epoch,
                train_loss=loss_sum / m,
                train_accuracy=train_acc,
                eval_accuracy=eval_acc,
                train_margins=train_stats,
                eval_margins=eval_stats,
                theta_used=loss.theta if loss.variant == "mdnet" else None,
                bounds=bounds,
            )
            history.append(record)
            if on_telemetry is not None:
                on_telemetry(params, record)
            logger.info(
                "epoch %d: loss=%.6g train_acc=%.4f eval_acc=%s lambda=%.4g",
                epoch, record.train_loss, train_acc,
                "-" if eval_acc is None else f"{eval_acc:.4f}", train_stats.ratio_lambda,
            )
    return params, history


@dataclass
class GridResult:
    best: TrainConfig
    table: list  # rows matching GRID_CSV_HEADER
    best_index: int


def _grid_configs(base: TrainConfig, r_values, theta_values, eta_values) -> list:
    combos = list(itertools.product(r_values, theta_values, eta_values))
    if not combos:
        raise InvalidConfigError("grid search needs at least one value per axis")
    return [
        replace(base, loss=replace(base.loss, r=float(r), theta=float(theta), eta=float(eta)))
        for r, theta, eta in combos
    ]


def grid_search(base: TrainConfig, r_values, theta_values, eta_values, train_data,
                val_holdout: int, workers: int = 1) -> GridResult:
    """Train every (r, theta, eta) combination on train-minus-holdout and
    pick the best validation accuracy (first in grid order on ties)."""
    if val_holdout < 1:
        raise InvalidConfigError("grid search needs a validation holdout of at least one sample")
    configs = _grid_configs(base, r_values, theta_values, eta_values)
    fit_data, val_data = split_holdout(train_data, val_holdout, base.seed)

    def run(index):
        cfg = configs[index]
        try:
            cfg.validate()
        except InvalidConfigError as exc:
            logger.warning("grid cell %d rejected: %s", index, exc)
            return index, "invalid", None, None
        try:
            params, history = train(cfg, fit_data)
        except TrainingDivergedError as exc:
            raise TrainingDivergedError(
                exc.epoch, exc.batch,
                f"config r={cfg.loss.r} theta={cfg.loss.theta} eta={cfg.loss.eta}",
            ) from exc
        val_acc, _ = evaluate(params, val_data)
        return index, "ok", val_acc, history.final.train_accuracy

    results = {}
    with ThreadPoolExecutor(max_workers=max(1, workers)) as executor:
        futures = [executor.submit(run, i) for i in range(len(configs))]
        for future in as_completed(futures):
            index, status, val_acc, train_acc = future.result()
            results[index] = (status, val_acc, train_acc)

    best_index = None
    for index in range(len(configs)):
        status, val_acc, _ = results[index]
        if status == "ok" and (best_index is None or val_acc > results[best_index][1]):
            best_index = index
    if best_index is None:
        raise InvalidConfigError("every grid configuration was invalid")

    table = []
    for index, cfg in enumerate(configs):
        status, val_acc, train_acc = results[index]
        table.append([
            index, cfg.loss.r, cfg.loss.theta, cfg.loss.eta, status,
            "" if val_acc is None else val_acc,
            "" if train_acc is None else train_acc,
            int(index == best_index),
        ])
    logger.info("grid search: best cell %d with validation accuracy %.4f",
                best_index, results[best_index][1])
    return GridResult(best=configs[best_index], table=table, best_index=best_index)
