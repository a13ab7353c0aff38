"""Noise-sensitivity parameters of a trained network over a dataset.

  layer cushion mu_i          min_x |x^i| / (|W_i|_F |relu(x^{i-1})|)
  interlayer cushion mu_ij    min_x |x^j| / (|J^{i,j}|_F |relu(x^{i-1})|)
  minimal cushion mu_i->      min(1/sqrt(rho), min_{j>=i} mu_ij)
  activation contraction c    max_{x, 1<=i<d} |x^i| / |relu(x^i)|
  interlayer smoothness rho_d reciprocal of the (1-delta) quantile of the
                              Jacobian linearisation error under noise

Samples whose denominators vanish are skipped and counted. Witnesses are
the lowest sample index attaining each extremum.
"""

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateProfileError, EmptyInputError, InvalidConfigError
from .linalg import matrix_norm
from .network import NetworkParams, forward_batch

logger = logging.getLogger(__name__)

SMOOTHNESS_DELTA = 0.5
JACOBIAN_CHUNK = 128
DENOMINATORS = ("postact", "preact")


@dataclass
class CushionEstimate:
    values: list
    witnesses: list
    skipped: list


@dataclass
class InterlayerEstimate:
    table: dict  # (i, j) -> mu_ij
    witnesses: dict  # (i, j) -> sample index
    minimal: list  # mu_i-> for i = 1..d
    skipped: dict = field(default_factory=dict)


@dataclass
class ContractionEstimate:
    c: float
    witness: tuple  # (layer, sample) or None
    degenerate: bool


@dataclass
class CushionProfile:
    mu: list
    mu_inter: dict
    mu_min: list
    contraction_c: float
    smoothness_rho: float = None
    argmin_witnesses: dict = field(default_factory=dict)
    skipped: dict = field(default_factory=dict)
    rho: int = 1
    degenerate: bool = False
    denominator: str = "postact"

    @property
    def d(self) -> int:
        return len(self.mu)

    def resilience_sum(self) -> float:
        """sum_i 1 / (mu_i^2 mu_i->^2)."""
        products = [m * m * n * n for m, n in zip(self.mu, self.mu_min)]
        if any(p == 0 for p in products):
            return math.inf
        return float(sum(1.0 / p for p in products))

    def to_dict(self) -> dict:
        return {
            "mu": list(self.mu),
            "mu_inter": {f"{i},{j}": v for (i, j), v in sorted(self.mu_inter.items())},
            "mu_min": list(self.mu_min),
            "contraction_c": self.contraction_c,
            "smoothness_rho": self.smoothness_rho,
            "argmin_witnesses": self.argmin_witnesses,
            "skipped": self.skipped,
            "rho": self.rho,
            "degenerate": self.degenerate,
            "denominator": self.denominator,
            "resilience_sum": self.resilience_sum(),
        }

    @classmethod
    def from_dict(cls, payload: dict) -> "CushionProfile":
        inter = {}
        for key, value in payload["mu_inter"].items():
            i, j = (int(p) for p in key.split(","))
            inter[(i, j)] = float(value)
        rho_hat = payload.get("smoothness_rho")
        return cls(
            mu=[float(v) for v in payload["mu"]],
            mu_inter=inter,
            mu_min=[float(v) for v in payload["mu_min"]],
            contraction_c=float(payload["contraction_c"]),
            smoothness_rho=None if rho_hat is None else float(rho_hat),
            argmin_witnesses=payload.get("argmin_witnesses", {}),
            skipped=payload.get("skipped", {}),
            rho=int(payload.get("rho", 1)),
            degenerate=bool(payload.get("degenerate", False)),
            denominator=payload.get("denominator", "postact"),
        )


def _require_data(data) -> None:
    if len(data) == 0:
        raise EmptyInputError("cushion estimation needs at least one sample")


def _masked_min(ratios: np.ndarray, usable: np.ndarray, what: str):
    skipped = int(np.count_nonzero(~usable))
    if skipped:
        logger.warning("%s: skipped %d samples with a zero denominator", what, skipped)
    if not usable.any():
        raise DegenerateProfileError(f"{what}: every sample has a zero denominator")
    candidates = np.where(usable, ratios, np.inf)
    witness = int(np.argmin(candidates))
    return float(candidates[witness]), witness, skipped


def layer_cushions(params: NetworkParams, data) -> CushionEstimate:
    _require_data(data)
    trace = forward_batch(params, data.features)
    values, witnesses, skipped = [], [], []
    for i in range(1, params.d + 1):
        frob = matrix_norm(params.weight(i), "frobenius")
        out_norm = np.linalg.norm(trace.x(i), axis=1)
        in_norm = np.linalg.norm(trace.phi(i - 1), axis=1)
        denom = frob * in_norm
        usable = denom > 0
        ratios = np.divide(out_norm, denom, out=np.zeros_like(denom), where=usable)
        value, witness, count = _masked_min(ratios, usable, f"layer cushion {i}")
        values.append(value)
        witnesses.append(witness)
        skipped.append(count)
    return CushionEstimate(values=values, witnesses=witnesses, skipped=skipped)


def _jacobian_norms_from(params: NetworkParams, trace, i: int, start: int, stop: int):
    """Frobenius norms of J^{i,j} for j = i..d over samples [start, stop)."""
    width = trace.x(i).shape[1]
    count = stop - start
    jac = np.broadcast_to(np.eye(width), (count, width, width)).copy()
    norms = {i: np.full(count, math.sqrt(width))}
    for layer in range(i, params.d):
        mask = trace.preacts[layer - 1][start:stop] > 0
        jac = np.matmul(params.weight(layer + 1), mask[:, :, None] * jac)
        norms[layer + 1] = np.sqrt(np.sum(jac * jac, axis=(1, 2)))
    return norms


def interlayer_cushions(params: NetworkParams, data, denominator: str = "postact") -> InterlayerEstimate:
    """mu_ij for 1 <= i <= j <= d and the capped minimum mu_i->.

    ``denominator="postact"`` divides by |relu(x^{i-1})|; ``"preact"`` uses
    |x^i| instead.
    """
    if denominator not in DENOMINATORS:
        raise InvalidConfigError(f"denominator must be one of {DENOMINATORS}")
    _require_data(data)
    trace = forward_batch(params, data.features)
    m = len(data)
    cap = 1.0 / math.sqrt(params.rho)
    table, witnesses, skipped = {}, {}, {}
    minimal = []
    for i in range(1, params.d + 1):
        jac_norms = {j: np.empty(m) for j in range(i, params.d + 1)}
        for start in range(0, m, JACOBIAN_CHUNK):
            stop = min(start + JACOBIAN_CHUNK, m)
            for j, chunk in _jacobian_norms_from(params, trace, i, start, stop).items():
                jac_norms[j][start:stop] = chunk
        if denominator == "postact":
            base = np.linalg.norm(trace.phi(i - 1), axis=1)
        else:
            base = np.linalg.norm(trace.x(i), axis=1)
        row = []
        for j in range(i, params.d + 1):
            denom = jac_norms[j] * base
            usable = denom > 0
            ratios = np.divide(
                np.linalg.norm(trace.x(j), axis=1), denom, out=np.zeros(m), where=usable
            )
            value, witness, count = _masked_min(ratios, usable, f"interlayer cushion ({i},{j})")
            table[(i, j)] = value
            witnesses[(i, j)] = witness
            skipped[(i, j)] = count
            row.append(value)
        minimal.append(min(cap, min(row)))
    return InterlayerEstimate(table=table, witnesses=witnesses, minimal=minimal, skipped=skipped)


def activation_contraction(params: NetworkParams, data) -> ContractionEstimate:
    """Smallest c with c |relu(x^i)| >= |x^i| over hidden layers and samples."""
    _require_data(data)
    if params.d == 1:
        return ContractionEstimate(c=1.0, witness=None, degenerate=False)
    trace = forward_batch(params, data.features)
    best, witness, degenerate = 1.0, None, False
    for i in range(1, params.d):
        pre = np.linalg.norm(trace.x(i), axis=1)
        post = np.linalg.norm(trace.phi(i), axis=1)
        dead = (post == 0) & (pre > 0)
        if dead.any():
            sample = int(np.flatnonzero(dead)[0])
            logger.warning("activation contraction: layer %d is fully inactive on sample %d", i, sample)
            if not degenerate:
                best, witness, degenerate = math.inf, (i, sample), True
            continue
        usable = post > 0
        ratios = np.divide(pre, post, out=np.zeros_like(pre), where=usable)
        sample = int(np.argmax(ratios))
        if not degenerate and ratios[sample] > best:
            best, witness = float(ratios[sample]), (i, sample)
    return ContractionEstimate(c=best, witness=witness, degenerate=degenerate)


def _subnet(params: NetworkParams, h: np.ndarray, i: int, j: int) -> np.ndarray:
    """M^{i,j}: apply relu then W_{l+1} for l = i..j-1."""
    for layer in range(i, j):
        h = params.weight(layer + 1) @ np.maximum(h, 0.0)
    return h


def interlayer_smoothness(params: NetworkParams, data, sigma: float, trials: int, seed: int,
                          delta: float = SMOOTHNESS_DELTA) -> float:
    """Monte-Carlo interlayer smoothness; +inf when the linearisation is exact.

    Each sample draws its noise from its own stream seeded by (seed, index).
    Noise at layer i is a Gaussian direction scaled to norm sigma * |x^i|.
    """
    if sigma <= 0:
        raise InvalidConfigError("sigma must be > 0")
    if trials < 1:
        raise InvalidConfigError("trials must be >= 1")
    _require_data(data)
    trace = forward_batch(params, data.features)
    observed, skipped = [], 0
    for index in range(len(data)):
        rng = np.random.default_rng((seed, index))
        sample = trace.sample(index)
        for i in range(1, params.d):
            xi = sample.x(i)
            xi_norm = float(np.linalg.norm(xi))
            jac = np.eye(xi.shape[0])
            for j in range(i + 1, params.d + 1):
                jac = params.weight(j) @ (sample.masks[j - 2][:, None] * jac)
                xj_norm = float(np.linalg.norm(sample.x(j)))
                if xj_norm == 0.0 or xi_norm == 0.0:
                    skipped += trials
                    continue
                for _ in range(trials):
                    g = rng.standard_normal(xi.shape[0])
                    eta = sigma * xi_norm * g / np.linalg.norm(g)
                    shifted = xi + eta
                    gap = np.linalg.norm(_subnet(params, shifted, i, j) - jac @ shifted)
                    observed.append(gap * xi_norm / (np.linalg.norm(eta) * xj_norm))
    if skipped:
        logger.warning("interlayer smoothness: skipped %d draws with zero layer output", skipped)
    if not observed:
        logger.warning("interlayer smoothness: no layer pairs to probe; reporting +inf")
        return math.inf
    level = float(np.quantile(np.asarray(observed), 1.0 - delta))
    return math.inf if level == 0.0 else 1.0 / level


def estimate_profile(params: NetworkParams, data, denominator: str = "postact",
                     smoothness_trials: int = 0, smoothness_sigma: float = 1e-3,
                     seed: int = 0) -> CushionProfile:
    layers = layer_cushions(params, data)
    inter = interlayer_cushions(params, data, denominator=denominator)
    contraction = activation_contraction(params, data)
    rho_hat = None
    if smoothness_trials > 0:
        rho_hat = interlayer_smoothness(params, data, smoothness_sigma, smoothness_trials, seed)
    witnesses = {
        "mu": layers.witnesses,
        "mu_inter": {f"{i},{j}": w for (i, j), w in sorted(inter.witnesses.items())},
        "contraction_c": list(contraction.witness) if contraction.witness else None,
    }
    skipped = {
        "mu": layers.skipped,
        "mu_inter": {f"{i},{j}": s for (i, j), s in sorted(inter.skipped.items())},
    }
    profile = CushionProfile(
        mu=layers.values,
        mu_inter=inter.table,
        mu_min=inter.minimal,
        contraction_c=contraction.c,
        smoothness_rho=rho_hat,
        argmin_witnesses=witnesses,
        skipped=skipped,
        rho=params.rho,
        degenerate=contraction.degenerate,
        denominator=denominator,
    )
    logger.info(
        "cushion profile: mu=%s mu_min=%s c=%.6g",
        [round(v, 6) for v in profile.mu], [round(v, 6) for v in profile.mu_min], profile.contraction_c,
    )
    return profile


def check_inequalities(profile: CushionProfile, params: NetworkParams, data, rtol: float = 1e-9) -> list:
    """Return human-readable violations of the cushion inequalities (empty when all hold).

    Checks the layer-cushion and contraction inequalities on every sample,
    the 1/sqrt(rho) cap, and tightness at each recorded witness.
    """
    trace = forward_batch(params, data.features)
    problems = []
    for i in range(1, params.d + 1):
        frob = matrix_norm(params.weight(i), "frobenius")
        lhs = profile.mu[i - 1] * frob * np.linalg.norm(trace.phi(i - 1), axis=1)
        rhs = np.linalg.norm(trace.x(i), axis=1)
        bad = np.flatnonzero(lhs > rhs * (1 + rtol) + 1e-300)
        if bad.size:
            problems.append(f"layer cushion {i} violated on samples {bad[:5].tolist()}")
        w = profile.argmin_witnesses["mu"][i - 1]
        if not math.isclose(lhs[w], rhs[w], rel_tol=rtol):
            problems.append(f"layer cushion {i} not tight at witness {w}")
    m = len(data)
    for i in range(1, params.d + 1):
        jac_norms = _jacobian_norms_from(params, trace, i, 0, m)
        if profile.denominator == "postact":
            base = np.linalg.norm(trace.phi(i - 1), axis=1)
        else:
            base = np.linalg.norm(trace.x(i), axis=1)
        for j in range(i, params.d + 1):
            lhs = profile.mu_inter[(i, j)] * jac_norms[j] * base
            rhs = np.linalg.norm(trace.x(j), axis=1)
            bad = np.flatnonzero(lhs > rhs * (1 + rtol) + 1e-300)
            if bad.size:
                problems.append(f"interlayer cushion ({i},{j}) violated on samples {bad[:5].tolist()}")
            w = profile.argmin_witnesses["mu_inter"][f"{i},{j}"]
            if not math.isclose(lhs[w], rhs[w], rel_tol=rtol):
                problems.append(f"interlayer cushion ({i},{j}) not tight at witness {w}")
    cap = 1.0 / math.sqrt(params.rho)
    for i, value in enumerate(profile.mu_min, start=1):
        if value > cap * (1 + 1e-15):
            problems.append(f"minimal cushion {i} exceeds 1/sqrt(rho)")
    if not profile.degenerate:
        for i in range(1, params.d):
            lhs = profile.contraction_c * np.linalg.norm(trace.phi(i), axis=1)
            rhs = np.linalg.norm(trace.x(i), axis=1)
            bad = np.flatnonzero(lhs * (1 + rtol) < rhs)
            if bad.size:
                problems.append(f"activation contraction violated at layer {i} on samples {bad[:5].tolist()}")
        witness = profile.argmin_witnesses.get("contraction_c")
        if witness:
            layer, sample = witness
            lhs = profile.contraction_c * np.linalg.norm(trace.phi(layer)[sample])
            rhs = np.linalg.norm(trace.x(layer)[sample])
            if not math.isclose(lhs, rhs, rel_tol=rtol):
                problems.append("activation contraction not tight at its witness")
    return problems
