"""Monte-Carlo checks of the extreme-value tail and the weight-perturbation bound."""

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .cushion import CushionProfile
from .errors import InvalidConfigError, InvalidRatioError
from .linalg import matrix_norm
from .margins import MarginStats
from .network import NetworkParams, scores_batch

logger = logging.getLogger(__name__)

PERTURB_DELTA = 0.5
SCALING_FACTORS = (0.5, 1.0, 2.0)
DELTA_CSV_HEADER = ("trial", "scale", "delta")


@dataclass
class PerturbReport:
    sigma: float
    trials: int
    median: float
    quantile: float
    max: float
    threshold: float
    fraction_below_threshold: float
    deltas: list
    scaling: dict = field(default_factory=dict)  # scale factor -> per-trial deltas
    slope_ratio: float = None

    def to_dict(self, include_deltas: bool = False) -> dict:
        payload = {
            "sigma": self.sigma,
            "trials": self.trials,
            "median": self.median,
            "quantile": self.quantile,
            "quantile_level": 1.0 - PERTURB_DELTA,
            "max": self.max,
            "threshold": self.threshold,
            "fraction_below_threshold": self.fraction_below_threshold,
            "scaling_medians": {f"{s:g}": float(np.median(v)) for s, v in sorted(self.scaling.items())},
            "slope_ratio": self.slope_ratio,
        }
        if include_deltas:
            payload["deltas"] = list(self.deltas)
        return payload

    def delta_rows(self) -> list:
        rows = []
        for scale, values in sorted(self.scaling.items()):
            rows.extend((t, scale, v) for t, v in enumerate(values))
        return rows


def extreme_value_mc(m: int, trials: int, seed: int) -> float:
    """Frequency with which a fresh Gaussian draw is >= the max of m others."""
    if m < 1:
        raise InvalidConfigError("m must be >= 1")
    if trials < 1000:
        raise InvalidConfigError("extreme_value_mc needs at least 1000 trials")
    draws = np.random.default_rng(seed).standard_normal((trials, m + 1))
    hits = draws[:, 0] >= draws[:, 1:].max(axis=1)
    return float(np.count_nonzero(hits)) / trials


def sigma_from_margins(stats: MarginStats, cushions: CushionProfile, d: int) -> float:
    """(r - theta) / (8 c d (r + theta) sqrt(sum 1 / (mu_i^2 mu_i->^2)))."""
    r, theta = stats.mean_r, stats.theta
    if not r > theta:
        raise InvalidRatioError(f"sigma needs r > theta, got r={r}, theta={theta}")
    resilience = cushions.resilience_sum()
    return (r - theta) / (8.0 * cushions.contraction_c * d * (r + theta) * math.sqrt(resilience))


def _noise_directions(params: NetworkParams, seed) -> list:
    rng = np.random.default_rng(seed)
    return [rng.standard_normal(w.shape) for w in params.weights]


def _apply_noise(params: NetworkParams, directions: list, sigma: float) -> NetworkParams:
    if sigma == 0:
        return NetworkParams(tuple(w.copy() for w in params.weights))
    return NetworkParams(tuple(
        w + sigma * matrix_norm(w, "frobenius") * b for w, b in zip(params.weights, directions)
    ))


def inject_noise(params: NetworkParams, sigma: float, seed) -> NetworkParams:
    """W_i + B_i |W_i|_F with B_i entries i.i.d. N(0, sigma^2); input untouched."""
    if sigma < 0:
        raise InvalidConfigError("sigma must be >= 0")
    return _apply_noise(params, _noise_directions(params, seed), sigma)


def _max_output_delta(params: NetworkParams, noisy: NetworkParams, inputs: np.ndarray, base: np.ndarray) -> float:
    diff = scores_batch(noisy, inputs) - base
    return float(np.max(np.linalg.norm(diff, axis=1)))


def perturbation_experiment(params: NetworkParams, data, stats: MarginStats, cushions: CushionProfile,
                            trials: int, seed: int, sigma: float = None, workers: int = 1) -> PerturbReport:
    """Run ``trials`` noise draws at sigma (and sigma/2, 2 sigma on the same draws).

    Trial t draws its noise from the stream seeded by (seed, t).
    """
    if trials < 30:
        raise InvalidConfigError("perturbation_experiment needs at least 30 trials")
    r, theta = stats.mean_r, stats.theta
    if not r > theta:
        raise InvalidRatioError(f"degenerate margin statistics: r={r} <= theta={theta}")
    if sigma is None:
        sigma = sigma_from_margins(stats, cushions, params.d)
    if sigma < 0:
        raise InvalidConfigError("sigma must be >= 0")
    base = scores_batch(params, data.features)

    def run_trial(trial):
        directions = _noise_directions(params, (seed, trial))
        return {
            scale: _max_output_delta(params, _apply_noise(params, directions, scale * sigma), data.features, base)
            for scale in SCALING_FACTORS
        }

    with ThreadPoolExecutor(max_workers=max(1, workers)) as executor:
        outcomes = list(executor.map(run_trial, range(trials)))

    scaling = {scale: [o[scale] for o in outcomes] for scale in SCALING_FACTORS}
    deltas = np.asarray(scaling[1.0])
    threshold = (r - theta) / 8.0
    median = float(np.median(deltas))
    upper_median = float(np.median(scaling[2.0]))
    slope = upper_median / median if median > 0 else None
    report = PerturbReport(
        sigma=sigma,
        trials=trials,
        median=median,
        quantile=float(np.quantile(deltas, 1.0 - PERTURB_DELTA)),
        max=float(np.max(deltas)),
        threshold=threshold,
        fraction_below_threshold=float(np.count_nonzero(deltas < threshold)) / trials,
        deltas=deltas.tolist(),
        scaling=scaling,
        slope_ratio=slope,
    )
    logger.info(
        "perturbation: sigma=%.6g median=%.6g threshold=%.6g fraction_below=%.3f",
        sigma, median, threshold, report.fraction_below_threshold,
    )
    return report
