"""Capacity terms of norm-based generalization bounds and the margin-ratio bound.

All hidden big-O constants are fixed to 1. Products of per-layer norms are
accumulated as sums of logs and exponentiated once at the end; a term whose
log exceeds the float range is reported as +inf.
"""

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .cushion import CushionProfile
from .errors import EmptyInputError, InvalidConfigError, InvalidRatioError
from .linalg import matrix_norm
from .margins import MarginStats, ramp_loss_empirical
from .network import NetworkParams, scores_batch

logger = logging.getLogger(__name__)

GAMMA_FLOOR = 1e-6
DEFAULT_PERCENTILE = 5.0
DEFAULT_DELTA = 0.1

PRIOR_TERMS = ("l1_inf", "frobenius", "spec_l12", "spec_fro", "compression", "R_bartlett", "R_neyshabur")
TERM_NAMES = PRIOR_TERMS[:5] + ("mdnet_ratio",) + PRIOR_TERMS[5:]

BOUND_CSV_HEADER = (
    "label", "epoch", "m", "d", "rho", "gamma_ref", "lambda", "r", "theta", "c", "delta",
) + TERM_NAMES + ("mdnet_capacity", "theorem1_gap", "gap_bartlett", "gap_neyshabur",
                  "ramp_loss_gamma", "vc_dimension_term", "mdnet_valid")


@dataclass
class BoundReport:
    gamma_ref: float
    terms: dict
    theorem1_gap: float
    inputs_digest: dict
    extra: dict = field(default_factory=dict)
    metadata: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "gamma_ref": self.gamma_ref,
            "terms": dict(self.terms),
            "theorem1_gap": self.theorem1_gap,
            "inputs_digest": dict(self.inputs_digest),
            "extra": dict(self.extra),
            "metadata": dict(self.metadata),
        }

    def csv_row(self, label: str = "", epoch=None) -> list:
        digest = self.inputs_digest
        row = [
            label, "" if epoch is None else epoch, digest["m"], digest["d"], digest["rho"],
            self.gamma_ref, digest["lambda"], digest["r"], digest["theta"], digest["c"], digest["delta"],
        ]
        row += [self.terms[name] for name in TERM_NAMES]
        row += [
            self.extra["mdnet_capacity"], self.theorem1_gap, self.extra["gap_bartlett"],
            self.extra["gap_neyshabur"], self.extra["ramp_loss_gamma"],
            self.metadata["vc_dimension_term"], int(self.extra["mdnet_valid"]),
        ]
        return row


def reference_margin(margins, policy: str = "percentile", p: float = DEFAULT_PERCENTILE) -> float:
    """Scalar margin surrogate for the minimum-margin bounds, floored at 1e-6."""
    margins = np.asarray(margins, dtype=np.float64)
    if margins.size == 0:
        raise EmptyInputError("reference margin of an empty list")
    if policy == "minimum":
        value = float(np.min(margins))
    elif policy == "percentile":
        value = float(np.percentile(margins, p))
    else:
        raise InvalidConfigError(f"unknown reference margin policy {policy!r}")
    return max(value, GAMMA_FLOOR)


def _exp_or_inf(log_value: float) -> float:
    try:
        return math.exp(log_value)
    except OverflowError:
        logger.warning("bound term overflowed (log=%.6g); reporting +inf", log_value)
        return math.inf


def _safe_log(value: float) -> float:
    return math.log(value) if value > 0 else -math.inf


def layer_norms(params: NetworkParams, transpose: bool = False) -> list:
    rows = []
    for w in params.weights:
        rows.append({kind: matrix_norm(w, kind, transpose=transpose)
                     for kind in ("spectral", "frobenius", "two_one", "one_two", "one_inf")})
    return rows


def prior_bound_terms(params: NetworkParams, data, gamma_ref: float,
                      cushions: CushionProfile = None, norms: list = None) -> dict:
    """The norm-based capacity terms, each with hidden constants set to 1.

    ``compression`` needs a cushion profile; without one it raises.
    """
    if gamma_ref <= 0:
        raise InvalidConfigError("gamma_ref must be > 0")
    if cushions is None:
        raise InvalidConfigError("the compression term needs a cushion profile")
    norms = norms if norms is not None else layer_norms(params)
    log_gamma2 = 2.0 * math.log(gamma_ref)
    log_spec = [_safe_log(n["spectral"]) for n in norms]
    log_prod_spec2 = 2.0 * sum(log_spec)

    def _ratio_sum(key, power):
        return sum((n[key] / n["spectral"]) ** power for n in norms if n["spectral"] > 0)

    terms = {}
    terms["l1_inf"] = _exp_or_inf(sum(_safe_log(n["one_inf"]) for n in norms) - log_gamma2)
    terms["frobenius"] = _exp_or_inf(2.0 * sum(_safe_log(n["frobenius"]) for n in norms) - log_gamma2)
    terms["spec_l12"] = _exp_or_inf(log_prod_spec2 + _safe_log(_ratio_sum("one_two", 2)) - log_gamma2)
    terms["spec_fro"] = _exp_or_inf(
        math.log(params.rho) + log_prod_spec2 + _safe_log(_ratio_sum("frobenius", 2)) - log_gamma2
    )
    max_out = float(np.max(np.sum(scores_batch(params, data.features) ** 2, axis=1)))
    terms["compression"] = _exp_or_inf(
        _safe_log(max_out) - log_gamma2 + _safe_log(cushions.resilience_sum())
    )
    terms["R_bartlett"] = _exp_or_inf(sum(log_spec) + 1.5 * _safe_log(_ratio_sum("two_one", 2.0 / 3.0)))
    terms["R_neyshabur"] = _exp_or_inf(
        0.5 * math.log(params.rho) + math.log(params.d) + sum(log_spec)
        + 0.5 * _safe_log(_ratio_sum("frobenius", 2))
    )
    return terms


def mdnet_capacity(lam: float, c: float, d: int, cushions: CushionProfile):
    """Margin-ratio capacity.

    Returns (theorem_form, figure_form):
      theorem_form = ((1+lam)/(1-lam)) * sqrt(sum c^2 d / (mu_i^2 mu_i->^2))
      figure_form  = ((1+lam)^2/(1-lam)^2) * sum 1 / (mu_i^2 mu_i->^2)
    """
    if not 0.0 <= lam < 1.0:
        raise InvalidRatioError(f"margin ratio lambda={lam} must lie in [0, 1)")
    resilience = cushions.resilience_sum()
    factor = (1.0 + lam) / (1.0 - lam)
    theorem_form = factor * math.sqrt(c * c * d * resilience)
    figure_form = factor * factor * resilience
    return theorem_form, figure_form


def theorem1_gap(capacity_sq: float, d: int, m: int, delta: float) -> float:
    """sqrt((capacity^2 + ln(d m / delta)) / m)."""
    if m < 2:
        raise InvalidConfigError("theorem1_gap needs m >= 2")
    if not 0.0 < delta <= 1.0:
        raise InvalidConfigError(f"delta must lie in (0, 1], got {delta}")
    return math.sqrt((capacity_sq + math.log(d * m / delta)) / m)


def spectral_gap(r_w: float, norm_bound: float, gamma: float, m: int, delta: float) -> float:
    """sqrt((B^2 R^2 + ln(m / delta)) / (gamma^2 m))."""
    if m < 1 or gamma <= 0:
        raise InvalidConfigError("spectral_gap needs m >= 1 and gamma > 0")
    if math.isinf(r_w):
        return math.inf
    return math.sqrt((norm_bound**2 * r_w**2 + math.log(m / delta)) / (gamma**2 * m))


def build_report(params: NetworkParams, data, stats: MarginStats, cushions: CushionProfile,
                 delta: float = DEFAULT_DELTA, policy: str = "percentile",
                 percentile: float = DEFAULT_PERCENTILE, transpose: bool = False) -> BoundReport:
    """Full report; margin-ratio terms are +inf and flagged when lambda >= 1."""
    gamma_ref = reference_margin(stats.margins, policy=policy, p=percentile)
    norms = layer_norms(params, transpose=transpose)
    terms = prior_bound_terms(params, data, gamma_ref, cushions=cushions, norms=norms)
    m, d = len(data), params.d
    c = cushions.contraction_c
    valid = stats.valid and math.isfinite(c)
    theorem_form = figure_form = gap = math.inf
    if stats.valid:
        # the figure form has no c factor
        theorem_form, figure_form = mdnet_capacity(stats.ratio_lambda, c, d, cushions)
    if valid:
        gap = theorem1_gap(theorem_form**2, d, m, delta)
    else:
        theorem_form = math.inf
        logger.warning(
            "margin-ratio terms invalid (lambda=%.6g, c=%.6g); reporting +inf",
            stats.ratio_lambda, c,
        )
    terms["mdnet_ratio"] = figure_form
    extra = {
        "mdnet_capacity": theorem_form,
        "mdnet_valid": valid,
        "gap_bartlett": spectral_gap(terms["R_bartlett"], data.norm_bound, gamma_ref, m, delta),
        "gap_neyshabur": spectral_gap(terms["R_neyshabur"], data.norm_bound, gamma_ref, m, delta),
        "ramp_loss_gamma": ramp_loss_empirical(stats.margins, gamma_ref),
        "theorem_form": theorem_form,
        "figure_form": figure_form,
    }
    inputs = {
        "lambda": stats.ratio_lambda,
        "r": stats.mean_r,
        "theta": stats.theta,
        "c": c,
        "d": d,
        "m": m,
        "rho": params.rho,
        "delta": delta,
        "B": data.norm_bound,
        "layer_norms": norms,
    }
    metadata = {
        "hidden_constants": 1,
        "gamma_policy": policy if policy == "minimum" else f"percentile({percentile:g})",
        "vc_dimension_term": float(params.rho**2 * d**2),
        "norm_grouping": "rows" if transpose else "columns",
    }
    return BoundReport(gamma_ref=gamma_ref, terms=terms, theorem1_gap=gap,
                       inputs_digest=inputs, extra=extra, metadata=metadata)
