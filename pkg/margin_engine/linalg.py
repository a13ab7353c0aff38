"""Dense float64 linear algebra and the matrix norms used by the bounds.

Matrices and vectors are plain numpy arrays; ``as_matrix`` / ``as_vector``
are the validating constructors used at every module boundary.
"""

import logging

import numpy as np

from .errors import DimensionError, EmptyInputError, NonFiniteError

logger = logging.getLogger(__name__)

NORM_KINDS = ("spectral", "frobenius", "two_one", "one_two", "one_inf")

POWER_TOL = 1e-12
POWER_MAX_ITER = 500
POWER_RESTARTS = 2
POWER_SEED = 0


def as_matrix(values) -> np.ndarray:
    """Return a float64 2-D copy of ``values``; reject NaN/Inf."""
    m = np.array(values, dtype=np.float64)
    if m.ndim != 2:
        raise DimensionError(f"expected a 2-D matrix, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise NonFiniteError("matrix contains NaN or Inf entries")
    return m


def as_vector(values) -> np.ndarray:
    """Return a float64 1-D copy of ``values``; reject NaN/Inf."""
    v = np.array(values, dtype=np.float64)
    if v.ndim != 1:
        raise DimensionError(f"expected a 1-D vector, got shape {v.shape}")
    if not np.all(np.isfinite(v)):
        raise NonFiniteError("vector contains NaN or Inf entries")
    return v


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    if a.ndim != 2 or b.ndim != 2:
        raise DimensionError("matmul expects two matrices")
    if a.shape[1] != b.shape[0]:
        raise DimensionError(
            f"cannot multiply {a.shape[0]}x{a.shape[1]} by {b.shape[0]}x{b.shape[1]}"
        )
    out = a @ b
    if not np.all(np.isfinite(out)):
        raise NonFiniteError("matrix product overflowed")
    return out


def spectral_norm(m: np.ndarray, seed: int = POWER_SEED) -> float:
    """Largest singular value by power iteration on m^T m.

    Runs ``POWER_RESTARTS`` seeded starts and keeps the largest estimate.
    Each start stops when the relative change of the estimate drops below
    ``POWER_TOL`` or after ``POWER_MAX_ITER`` iterations.
    """
    if m.size == 0:
        raise EmptyInputError("spectral norm of an empty matrix")
    scale = float(np.max(np.abs(m)))
    if scale == 0.0:
        return 0.0
    # iterate on a unit-scale copy so m^T m cannot overflow
    m = m / scale
    rng = np.random.default_rng(seed)
    best = 0.0
    for restart in range(POWER_RESTARTS):
        v = rng.standard_normal(m.shape[1])
        v /= np.linalg.norm(v)
        estimate = 0.0
        for iteration in range(POWER_MAX_ITER):
            mv = m @ v
            sigma = float(np.linalg.norm(mv))
            w = m.T @ mv
            w_norm = float(np.linalg.norm(w))
            if w_norm == 0.0:
                # start landed in the null space
                break
            v = w / w_norm
            if estimate > 0.0 and abs(sigma - estimate) <= POWER_TOL * sigma:
                estimate = sigma
                break
            estimate = sigma
        # final Rayleigh-style readout at the converged direction
        estimate = max(estimate, float(np.linalg.norm(m @ v)))
        logger.debug("power iteration restart %d: %.17g after %d iterations",
                     restart, estimate, iteration + 1)
        best = max(best, estimate)
    return best * scale


def matrix_norm(m: np.ndarray, kind: str, transpose: bool = False) -> float:
    """Matrix norm of ``m``.

    Grouped norms treat columns as units: ``two_one`` sums column l2 norms,
    ``one_two`` is the l2 norm of the column l1 norms, ``one_inf`` is the
    largest row l1 norm. ``transpose=True`` norms ``m.T`` instead.
    """
    if m.size == 0:
        raise EmptyInputError("norm of an empty matrix")
    if transpose:
        m = m.T
    if kind == "spectral":
        return spectral_norm(m)
    if kind == "frobenius":
        return float(np.sqrt(np.sum(m * m)))
    if kind == "two_one":
        return float(np.sum(np.linalg.norm(m, axis=0)))
    if kind == "one_two":
        return float(np.linalg.norm(np.sum(np.abs(m), axis=0)))
    if kind == "one_inf":
        return float(np.max(np.sum(np.abs(m), axis=1)))
    raise ValueError(f"unknown norm kind {kind!r}; expected one of {NORM_KINDS}")
