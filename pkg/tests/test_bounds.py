import math

import numpy as np
import pytest

from margin_engine.bounds import (
    BOUND_CSV_HEADER,
    GAMMA_FLOOR,
    build_report,
    layer_norms,
    mdnet_capacity,
    prior_bound_terms,
    reference_margin,
    spectral_gap,
    theorem1_gap,
)
from margin_engine.cushion import CushionProfile, estimate_profile
from margin_engine.data import Dataset
from margin_engine.errors import InvalidConfigError, InvalidRatioError
from margin_engine.margins import margin_stats, stats_from_margins
from margin_engine.network import NetworkParams, init_params, scores_batch

from .conftest import jacobi_singular_values


def _unit_profile(d=1):
    return CushionProfile(
        mu=[1.0] * d, mu_inter={(i, i): 1.0 for i in range(1, d + 1)}, mu_min=[1.0] * d, contraction_c=1.0,
    )


def _identity_data():
    x = np.array([[0.6, 0.8], [1.0, 0.0]])
    return Dataset(x, [1, 0], 2)


def test_reference_margin_policies():
    assert reference_margin([1.0, 2.0, 3.0], "minimum") == 1.0
    assert reference_margin([-1.0, 2.0], "minimum") == GAMMA_FLOOR
    values = np.random.default_rng(3).normal(size=101)
    assert reference_margin(values, "percentile", 50) == float(np.sort(values)[50])
    with pytest.raises(InvalidConfigError):
        reference_margin([1.0], "mean")


def test_identity_net_terms():
    params = NetworkParams((np.eye(2),))
    terms = prior_bound_terms(params, _identity_data(), 1.0, cushions=_unit_profile())
    assert terms["frobenius"] == pytest.approx(2.0, rel=1e-12)
    assert terms["l1_inf"] == pytest.approx(1.0, rel=1e-12)
    assert terms["spec_l12"] == pytest.approx(2.0, rel=1e-12)


def test_compression_needs_cushions():
    params = NetworkParams((np.eye(2),))
    with pytest.raises(InvalidConfigError):
        prior_bound_terms(params, _identity_data(), 1.0)


def test_frobenius_term_homogeneity(blobs):
    params = init_params([blobs.n, 7, 6, blobs.k], seed=2)
    base = prior_bound_terms(params, blobs, 0.5, cushions=_unit_profile(3))["frobenius"]
    doubled = prior_bound_terms(params.scaled(2.0), blobs, 0.5, cushions=_unit_profile(3))["frobenius"]
    assert doubled == pytest.approx(base * 4.0**3, rel=1e-10)


def test_terms_match_straight_line_recomputation(blobs):
    params = init_params([blobs.n, 9, 7, blobs.k], seed=21)
    profile = estimate_profile(params, blobs)
    gamma = 0.3
    terms = prior_bound_terms(params, blobs, gamma, cushions=profile)

    spec = [jacobi_singular_values(w)[0] for w in params.weights]
    fro = [np.linalg.norm(w) for w in params.weights]
    l1inf = [np.abs(w).sum(axis=1).max() for w in params.weights]
    l12 = [np.linalg.norm(np.abs(w).sum(axis=0)) for w in params.weights]
    l21 = [np.linalg.norm(w, axis=0).sum() for w in params.weights]
    prod_spec2 = np.prod(spec) ** 2
    resilience = sum(1.0 / (m**2 * n**2) for m, n in zip(profile.mu, profile.mu_min))
    max_out = np.max(np.sum(scores_batch(params, blobs.features) ** 2, axis=1))
    expected = {
        "l1_inf": np.prod(l1inf) / gamma**2,
        "frobenius": np.prod(fro) ** 2 / gamma**2,
        "spec_l12": prod_spec2 * sum((a / s) ** 2 for a, s in zip(l12, spec)) / gamma**2,
        "spec_fro": params.rho * prod_spec2 * sum((f / s) ** 2 for f, s in zip(fro, spec)) / gamma**2,
        "compression": max_out / gamma**2 * resilience,
        "R_bartlett": np.prod(spec) * sum((a / s) ** (2 / 3) for a, s in zip(l21, spec)) ** 1.5,
        "R_neyshabur": math.sqrt(params.rho) * params.d * np.prod(spec)
        * math.sqrt(sum((f / s) ** 2 for f, s in zip(fro, spec))),
    }
    for name, value in expected.items():
        assert terms[name] == pytest.approx(value, rel=1e-8), name


def test_overflow_reported_as_inf():
    big = NetworkParams(tuple(np.eye(2) * 1e200 for _ in range(3)))
    terms = prior_bound_terms(big, _identity_data(), 1.0, cushions=_unit_profile(3))
    assert math.isinf(terms["frobenius"])


def test_mdnet_capacity_examples():
    assert mdnet_capacity(0.0, 1.0, 1, _unit_profile())[0] == 1.0
    theorem, figure = mdnet_capacity(0.5, 1.0, 1, _unit_profile())
    assert theorem == pytest.approx(3.0, rel=1e-15)
    assert figure == pytest.approx(9.0, rel=1e-15)
    with pytest.raises(InvalidRatioError):
        mdnet_capacity(1.0, 1.0, 1, _unit_profile())


def test_mdnet_capacity_matches_formula():
    profile = CushionProfile(mu=[0.3, 0.2, 0.5], mu_inter={}, mu_min=[0.1, 0.15, 0.4], contraction_c=1.7)
    lam, c, d = 0.37, 1.7, 3
    total = sum(c * c * d / (m * m * n * n) for m, n in zip(profile.mu, profile.mu_min))
    expected = (1 + lam) / (1 - lam) * math.sqrt(total)
    assert mdnet_capacity(lam, c, d, profile)[0] == pytest.approx(expected, rel=1e-12)


def test_theorem1_gap_example():
    assert theorem1_gap(3.0, 1, 100, 1.0) == pytest.approx(math.sqrt((3.0 + math.log(100)) / 100), rel=1e-12)
    assert theorem1_gap(3.0, 1, 100, 1.0) == pytest.approx(0.27578, abs=1e-5)
    with pytest.raises(InvalidConfigError):
        theorem1_gap(3.0, 1, 1, 0.1)
    with pytest.raises(InvalidConfigError):
        theorem1_gap(3.0, 1, 100, 0.0)


def test_spectral_gap():
    assert spectral_gap(2.0, 1.0, 1.0, 100, 1.0) == pytest.approx(math.sqrt((4.0 + math.log(100)) / 100))
    assert math.isinf(spectral_gap(math.inf, 1.0, 1.0, 10, 0.1))


def test_build_report_row_matches_json(blobs):
    params = init_params([blobs.n, 8, blobs.k], seed=0)
    stats = margin_stats(params, blobs)
    report = build_report(params, blobs, stats, estimate_profile(params, blobs))
    row = dict(zip(BOUND_CSV_HEADER, report.csv_row(label="x", epoch=3)))
    assert row["frobenius"] == report.terms["frobenius"]
    assert row["theorem1_gap"] == report.theorem1_gap
    assert row["vc_dimension_term"] == float(params.rho**2 * params.d**2)
    assert row["epoch"] == 3


def test_build_report_flags_invalid_ratio():
    params = NetworkParams((np.eye(2),))
    data = _identity_data()
    stats = stats_from_margins([-1.0, 0.5])
    report = build_report(params, data, stats, _unit_profile())
    assert report.extra["mdnet_valid"] is False
    assert math.isinf(report.terms["mdnet_ratio"])
    assert math.isinf(report.theorem1_gap)


def test_layer_norms_transpose():
    params = NetworkParams((np.array([[1.0, 2.0, 3.0]]), np.eye(1)))
    plain = layer_norms(params)[0]
    flipped = layer_norms(params, transpose=True)[0]
    assert plain["one_inf"] == 6.0
    assert flipped["one_inf"] == 3.0


def test_figure_form_survives_infinite_contraction():
    params = NetworkParams((np.eye(2),))
    stats = stats_from_margins([1.0, 1.2])
    profile = CushionProfile(mu=[0.5], mu_inter={(1, 1): 0.5}, mu_min=[0.5], contraction_c=math.inf,
                             degenerate=True)
    report = build_report(params, _identity_data(), stats, profile)
    factor = (1 + stats.ratio_lambda) / (1 - stats.ratio_lambda)
    assert report.terms["mdnet_ratio"] == pytest.approx(factor**2 * 16.0, rel=1e-12)
    assert report.extra["mdnet_valid"] is False
    assert math.isinf(report.extra["mdnet_capacity"])
    assert math.isinf(report.theorem1_gap)


def test_l1_inf_term_scales_with_depth(blobs):
    params = init_params([blobs.n, 7, 6, blobs.k], seed=4)
    s = 1.5
    base = prior_bound_terms(params, blobs, 0.5, cushions=_unit_profile(3))["l1_inf"]
    scaled = prior_bound_terms(params.scaled(s), blobs, 0.5, cushions=_unit_profile(3))["l1_inf"]
    assert scaled == pytest.approx(base * s**3, rel=1e-10)


def test_mdnet_ratio_ignores_weight_scale(blobs):
    params = init_params([blobs.n, 8, 6, blobs.k], seed=9)
    reports = []
    for p in (params, params.scaled(3.0)):
        reports.append(build_report(p, blobs, margin_stats(p, blobs), estimate_profile(p, blobs)))
    assert reports[0].inputs_digest["lambda"] == pytest.approx(reports[1].inputs_digest["lambda"], rel=1e-9)
    if math.isfinite(reports[0].terms["mdnet_ratio"]):
        assert reports[1].terms["mdnet_ratio"] == pytest.approx(reports[0].terms["mdnet_ratio"], rel=1e-8)
    else:
        assert math.isinf(reports[1].terms["mdnet_ratio"])
