"""Multiclass margins, margin-distribution statistics and the training losses.

The margin of a labelled sample is its correct-class score minus the best
competing score. Loss variants:

  mdnet         convex margin-distribution loss with zero-loss band (r-theta, r+theta]
  cross_entropy softmax negative log-likelihood
  hinge         max(0, hinge_margin - gamma)
  soft_hinge    log(1 + exp(hinge_margin - gamma))
"""

import logging
import math
from dataclasses import asdict, dataclass

import numpy as np

from .errors import DimensionError, EmptyInputError, InvalidConfigError
from .network import NetworkParams, scores_batch

logger = logging.getLogger(__name__)

LOSS_VARIANTS = ("mdnet", "cross_entropy", "hinge", "soft_hinge")
MARGIN_CSV_HEADER = ("sample_id", "label", "predicted", "margin")
HISTOGRAM_CSV_HEADER = ("bin_left", "bin_right", "count")


@dataclass(frozen=True)
class LossConfig:
    variant: str = "mdnet"
    r: float = 2.0
    theta: float = 0.5
    eta: float = 1.0
    hinge_margin: float = 1.0
    theta_scale_a: float = 1.0
    adaptive_theta: bool = False

    def validate(self) -> "LossConfig":
        if self.variant not in LOSS_VARIANTS:
            raise InvalidConfigError(f"unknown loss variant {self.variant!r}")
        if self.variant == "mdnet" and not (self.r > self.theta > 0):
            raise InvalidConfigError(f"mdnet needs r > theta > 0, got r={self.r}, theta={self.theta}")
        if self.eta < 0:
            raise InvalidConfigError("eta must be >= 0")
        if self.hinge_margin <= 0:
            raise InvalidConfigError("hinge_margin must be > 0")
        if self.theta_scale_a <= 0:
            raise InvalidConfigError("theta_scale_a must be > 0")
        return self

    def with_theta(self, theta: float) -> "LossConfig":
        return LossConfig(**{**asdict(self), "theta": theta})


@dataclass
class MarginStats:
    margins: np.ndarray
    mean_r: float
    var_theta2: float
    ratio_lambda: float
    valid: bool

    @property
    def theta(self) -> float:
        return math.sqrt(self.var_theta2)

    def summary(self) -> dict:
        return {
            "count": int(self.margins.shape[0]),
            "mean_r": self.mean_r,
            "var_theta2": self.var_theta2,
            "theta": self.theta,
            "ratio_lambda": self.ratio_lambda,
            "inverse_lambda": (1.0 / self.ratio_lambda) if self.ratio_lambda > 0 else math.inf,
            "valid": self.valid,
            "min_margin": float(np.min(self.margins)),
            "max_margin": float(np.max(self.margins)),
        }


def _check_label(y: int, k: int) -> None:
    if k < 2:
        raise DimensionError("margins need at least two classes")
    if not 0 <= y < k:
        raise InvalidConfigError(f"label {y} out of range for {k} classes")


def _competitor(scores: np.ndarray, y: int) -> int:
    masked = scores.copy()
    masked[y] = -np.inf
    return int(np.argmax(masked))


def margin(scores, y: int) -> float:
    scores = np.asarray(scores, dtype=np.float64)
    _check_label(y, scores.shape[0])
    return float(scores[y] - scores[_competitor(scores, y)])


def margins_batch(scores: np.ndarray, labels: np.ndarray):
    """Per-row margins and the index of the best competing class."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    m, k = scores.shape
    if k < 2:
        raise DimensionError("margins need at least two classes")
    if labels.size and (labels.min() < 0 or labels.max() >= k):
        raise InvalidConfigError(f"labels out of range for {k} classes")
    rows = np.arange(m)
    masked = scores.copy()
    masked[rows, labels] = -np.inf
    competitors = np.argmax(masked, axis=1)
    return scores[rows, labels] - scores[rows, competitors], competitors


def stats_from_margins(margins) -> MarginStats:
    margins = np.asarray(margins, dtype=np.float64)
    if margins.size == 0:
        raise EmptyInputError("margin statistics of an empty sample")
    mean_r = float(np.mean(margins))
    var = float(np.mean((margins - mean_r) ** 2))
    if mean_r > 0:
        ratio = math.sqrt(var) / mean_r
    else:
        ratio = math.inf
    valid = mean_r > 0 and ratio < 1
    return MarginStats(margins=margins, mean_r=mean_r, var_theta2=var, ratio_lambda=ratio, valid=valid)


def margin_stats(params: NetworkParams, data) -> MarginStats:
    if len(data) == 0:
        raise EmptyInputError("margin statistics of an empty dataset")
    margins, _ = margins_batch(scores_batch(params, data.features), data.labels)
    stats = stats_from_margins(margins)
    if not stats.valid:
        logger.warning("margin ratio invalid: r=%.6g lambda=%.6g", stats.mean_r, stats.ratio_lambda)
    return stats


def margin_rows(params: NetworkParams, data) -> list:
    """Rows of (sample_id, label, predicted, margin) for CSV output."""
    scores = scores_batch(params, data.features)
    margins, _ = margins_batch(scores, data.labels)
    predicted = np.argmax(scores, axis=1)
    return [
        (i, int(label), int(pred), float(g))
        for i, (label, pred, g) in enumerate(zip(data.labels, predicted, margins))
    ]


def margin_histogram(margins, bins: int = 50) -> list:
    margins = np.asarray(margins, dtype=np.float64)
    if margins.size == 0:
        raise EmptyInputError("histogram of an empty margin list")
    lo, hi = float(margins.min()), float(margins.max())
    if lo == hi:
        lo, hi = lo - 0.5, hi + 0.5
    counts, edges = np.histogram(margins, bins=bins, range=(lo, hi))
    return [(float(edges[b]), float(edges[b + 1]), int(counts[b])) for b in range(bins)]


def mdnet_loss_values(gamma, r: float, theta: float, eta: float):
    gamma = np.asarray(gamma, dtype=np.float64)
    lower, upper = r - theta, r + theta
    below = (lower - gamma) ** 2 / lower**2
    above = eta * (gamma - upper) ** 2 / upper**2
    return np.where(gamma <= lower, below, np.where(gamma > upper, above, 0.0))


def mdnet_loss_slope(gamma, r: float, theta: float, eta: float):
    gamma = np.asarray(gamma, dtype=np.float64)
    lower, upper = r - theta, r + theta
    below = -2.0 * (lower - gamma) / lower**2
    above = 2.0 * eta * (gamma - upper) / upper**2
    return np.where(gamma <= lower, below, np.where(gamma > upper, above, 0.0))


def mdnet_loss(gamma: float, cfg: LossConfig) -> float:
    if cfg.variant != "mdnet":
        raise InvalidConfigError(f"mdnet_loss called with variant {cfg.variant!r}")
    cfg.validate()
    return float(mdnet_loss_values(gamma, cfg.r, cfg.theta, cfg.eta))


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def batch_loss_and_score_grad(scores: np.ndarray, labels: np.ndarray, cfg: LossConfig):
    """Per-sample losses (m,) and score gradients (m, k)."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    m = scores.shape[0]
    rows = np.arange(m)
    if cfg.variant == "cross_entropy":
        if labels.size and (labels.min() < 0 or labels.max() >= scores.shape[1]):
            raise InvalidConfigError("labels out of range")
        shifted = scores - scores.max(axis=1, keepdims=True)
        log_norm = np.log(np.sum(np.exp(shifted), axis=1))
        losses = log_norm - shifted[rows, labels]
        grad = np.exp(shifted - log_norm[:, None])
        grad[rows, labels] -= 1.0
        return losses, grad

    gammas, competitors = margins_batch(scores, labels)
    if cfg.variant == "mdnet":
        losses = mdnet_loss_values(gammas, cfg.r, cfg.theta, cfg.eta)
        slope = mdnet_loss_slope(gammas, cfg.r, cfg.theta, cfg.eta)
    elif cfg.variant == "hinge":
        gap = cfg.hinge_margin - gammas
        losses = np.maximum(0.0, gap)
        slope = np.where(gap > 0, -1.0, 0.0)
    elif cfg.variant == "soft_hinge":
        gap = cfg.hinge_margin - gammas
        losses = np.logaddexp(0.0, gap)
        slope = -_sigmoid(gap)
    else:
        raise InvalidConfigError(f"unknown loss variant {cfg.variant!r}")
    grad = np.zeros_like(scores)
    grad[rows, labels] += slope
    grad[rows, competitors] -= slope
    return losses, grad


def loss_and_score_grad(scores, y: int, cfg: LossConfig):
    scores = np.asarray(scores, dtype=np.float64)
    _check_label(y, scores.shape[0])
    losses, grad = batch_loss_and_score_grad(scores[None, :], np.array([y]), cfg)
    return float(losses[0]), grad[0]


def band_loss_empirical(margins, r: float, theta: float) -> float:
    """Fraction of margins outside the band (r - theta, r + theta]."""
    if not r > theta > 0:
        raise InvalidConfigError(f"band loss needs r > theta > 0, got r={r}, theta={theta}")
    margins = np.asarray(margins, dtype=np.float64)
    if margins.size == 0:
        raise EmptyInputError("band loss of an empty margin list")
    outside = (margins <= r - theta) | (margins > r + theta)
    return float(np.count_nonzero(outside)) / margins.size


def ramp_loss_empirical(margins, gamma: float) -> float:
    """Mean of min(1, max(0, 1 - margin / gamma))."""
    if gamma <= 0:
        raise InvalidConfigError("gamma must be > 0")
    margins = np.asarray(margins, dtype=np.float64)
    if margins.size == 0:
        raise EmptyInputError("ramp loss of an empty margin list")
    return float(np.mean(np.clip(1.0 - margins / gamma, 0.0, 1.0)))


@dataclass
class VarianceDecomposition:
    s_a: float  # within-class scatter
    s_e: float  # between-class scatter
    ratio: float  # s_e / s_a, inf when s_a == 0

    @property
    def ratio_infinite(self) -> bool:
        return math.isinf(self.ratio)


def scatter_ratio(s_e: float, s_a: float) -> float:
    if s_a == 0:
        return math.inf
    return s_e / s_a


def variance_decomposition(embeddings, labels) -> VarianceDecomposition:
    """Within-class (S_A) and between-class (S_E) scatter traces."""
    z = np.asarray(embeddings, dtype=np.float64)
    labels = np.asarray(labels)
    if z.ndim != 2 or z.shape[0] != labels.shape[0]:
        raise DimensionError("embeddings must be (m, p) with one label per row")
    classes = np.unique(labels)
    if classes.size < 2:
        raise InvalidConfigError("variance decomposition needs at least two classes")
    overall = z.mean(axis=0)
    s_a = 0.0
    s_e = 0.0
    for c in classes:
        members = z[labels == c]
        center = members.mean(axis=0)
        s_a += float(np.sum((members - center) ** 2))
        s_e += members.shape[0] * float(np.sum((center - overall) ** 2))
    return VarianceDecomposition(s_a=s_a, s_e=s_e, ratio=scatter_ratio(s_e, s_a))
