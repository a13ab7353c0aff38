import math

import numpy as np
import pytest

from margin_engine.errors import EmptyInputError, InvalidConfigError
from margin_engine.margins import (
    LOSS_VARIANTS,
    LossConfig,
    band_loss_empirical,
    loss_and_score_grad,
    margin,
    margin_histogram,
    margin_stats,
    margins_batch,
    mdnet_loss,
    mdnet_loss_values,
    ramp_loss_empirical,
    scatter_ratio,
    stats_from_margins,
    variance_decomposition,
)
from margin_engine.network import NetworkParams, backward, forward, init_params, scores_batch


def test_margin_examples():
    assert margin([3.0, 1.0, -0.5], 0) == 2.0
    assert margin([3.0, 1.0, -0.5], 2) == -3.5
    assert margin([1.0, 1.0], 0) == 0.0


def test_margin_rejects_bad_label():
    with pytest.raises(InvalidConfigError):
        margin([1.0, 2.0], 2)


def test_competitor_ties_break_low():
    _, competitors = margins_batch(np.array([[0.0, 5.0, 5.0]]), np.array([0]))
    assert competitors[0] == 1


def test_stats_examples():
    flat = stats_from_margins([2.0, 2.0, 2.0])
    assert (flat.mean_r, flat.var_theta2, flat.ratio_lambda) == (2.0, 0.0, 0.0)
    two = stats_from_margins([1.0, 3.0])
    assert (two.mean_r, two.var_theta2, two.ratio_lambda) == (2.0, 1.0, 0.5)
    assert two.valid
    bad = stats_from_margins([-1.0, 0.5])
    assert not bad.valid and math.isinf(bad.ratio_lambda)
    with pytest.raises(EmptyInputError):
        stats_from_margins([])


def test_margin_stats_matches_loop(small_net, random_dataset):
    stats = margin_stats(small_net, random_dataset)
    scores = scores_batch(small_net, random_dataset.features)
    loop = [margin(s, int(y)) for s, y in zip(scores, random_dataset.labels)]
    mean = sum(loop) / len(loop)
    var = sum((g - mean) ** 2 for g in loop) / len(loop)
    assert stats.mean_r == pytest.approx(mean, rel=1e-12)
    assert stats.var_theta2 == pytest.approx(var, rel=1e-12)


def test_mdnet_loss_examples():
    cfg = LossConfig(r=2.0, theta=0.5, eta=1.0)
    assert mdnet_loss(2.0, cfg) == 0.0
    assert mdnet_loss(1.0, cfg) == pytest.approx(1.0 / 9.0, rel=1e-15)
    assert mdnet_loss(3.0, cfg) == pytest.approx(0.04, rel=1e-15)


def test_mdnet_loss_shape():
    r, theta, eta = 2.0, 0.5, 1.0
    band = np.linspace(r - theta, r + theta, 101)
    assert not np.any(mdnet_loss_values(band, r, theta, eta))
    assert float(mdnet_loss_values(0.0, r, theta, eta)) == 1.0
    for knot in (r - theta, r + theta):
        left = float(mdnet_loss_values(knot - 1e-13, r, theta, eta))
        right = float(mdnet_loss_values(knot + 1e-13, r, theta, eta))
        assert abs(left - right) < 1e-12
    rng = np.random.default_rng(0)
    a, b = rng.uniform(-5.0, 10.0, size=(2, 1000))
    mid = mdnet_loss_values((a + b) / 2, r, theta, eta)
    avg = (mdnet_loss_values(a, r, theta, eta) + mdnet_loss_values(b, r, theta, eta)) / 2
    assert np.all(mid <= avg + 1e-12)


def test_loss_config_validation():
    with pytest.raises(InvalidConfigError):
        LossConfig(r=1.0, theta=1.0).validate()
    with pytest.raises(InvalidConfigError):
        LossConfig(variant="focal").validate()
    LossConfig(variant="hinge", r=1.0, theta=2.0).validate()


def test_flat_region_has_zero_gradient():
    loss, grad = loss_and_score_grad([2.0, 0.0], 0, LossConfig())
    assert loss == 0.0 and not np.any(grad)


def test_cross_entropy_symmetric():
    loss, grad = loss_and_score_grad([0.0, 0.0], 0, LossConfig(variant="cross_entropy"))
    assert loss == pytest.approx(math.log(2.0), rel=1e-15)
    assert np.allclose(grad, [-0.5, 0.5], rtol=0, atol=1e-15)


def _sample_loss(weights, x, y, cfg):
    params = NetworkParams(tuple(weights))
    return loss_and_score_grad(forward(params, x).scores, y, cfg)[0]


@pytest.mark.parametrize("variant", LOSS_VARIANTS)
def test_gradients_match_central_differences(variant):
    cfg = LossConfig(variant=variant, r=2.0, theta=0.5, eta=1.5, hinge_margin=1.0)
    rng = np.random.default_rng(99)
    h = 1e-5
    for case in range(10):
        params = init_params([4, 6, 5, 3], seed=100 + case)
        x = rng.standard_normal(4)
        y = int(rng.integers(0, 3))
        trace = forward(params, x)
        _, dscores = loss_and_score_grad(trace.scores, y, cfg)
        analytic = backward(params, trace, dscores)
        weights = [w.copy() for w in params.weights]
        for layer, w in enumerate(weights):
            for idx in np.ndindex(w.shape):
                saved = w[idx]
                w[idx] = saved + h
                up = _sample_loss(weights, x, y, cfg)
                w[idx] = saved - h
                down = _sample_loss(weights, x, y, cfg)
                w[idx] = saved
                numeric = (up - down) / (2 * h)
                got = analytic[layer][idx]
                assert abs(got - numeric) <= 1e-5 * max(abs(got), abs(numeric)) + 1e-8


def test_band_loss_examples():
    assert band_loss_empirical([2.0, 2.0], 2.0, 0.5) == 0.0
    assert band_loss_empirical([0.0, 2.0, 10.0], 2.0, 1.0) == pytest.approx(2.0 / 3.0)
    rng = np.random.default_rng(4)
    values = rng.normal(2.0, 1.0, size=500)
    expected = sum(1 for g in values if not 1.5 < g <= 2.5) / 500
    assert band_loss_empirical(values, 2.0, 0.5) == expected


def test_ramp_loss():
    assert ramp_loss_empirical([2.0, 0.5, -1.0], 1.0) == pytest.approx((0.0 + 0.5 + 1.0) / 3)
    with pytest.raises(InvalidConfigError):
        ramp_loss_empirical([1.0], 0.0)


def test_histogram_counts_everything():
    rows = margin_histogram(np.arange(10.0), bins=5)
    assert len(rows) == 5
    assert sum(r[2] for r in rows) == 10
    single = margin_histogram([3.0, 3.0], bins=2)
    assert sum(r[2] for r in single) == 2


def test_variance_decomposition_blobs():
    z = np.array([[0.0, 0.0], [0.0, 2.0], [10.0, 0.0], [10.0, 2.0]])
    result = variance_decomposition(z, [0, 0, 1, 1])
    assert (result.s_a, result.s_e, result.ratio) == (4.0, 100.0, 25.0)


def test_scatter_ratio_arithmetic():
    assert round(scatter_ratio(15692.0, 804.0), 2) == 19.52


def test_variance_decomposition_edge_cases():
    collapsed = variance_decomposition(np.array([[1.0], [1.0], [5.0]]), [0, 0, 1])
    assert collapsed.ratio_infinite
    with pytest.raises(InvalidConfigError):
        variance_decomposition(np.ones((3, 2)), [0, 0, 0])


def test_margin_ignores_score_shift():
    rng = np.random.default_rng(12)
    for _ in range(20):
        scores = rng.normal(size=5)
        y = int(rng.integers(5))
        shift = rng.normal() * 100
        assert margin(scores + shift, y) == pytest.approx(margin(scores, y), abs=1e-12)


@pytest.mark.parametrize("scale", [1e-3, 0.7, 42.0])
def test_lambda_ignores_margin_scale(scale):
    margins = np.random.default_rng(2).normal(3.0, 1.0, size=200)
    base = stats_from_margins(margins)
    scaled = stats_from_margins(margins * scale)
    assert scaled.ratio_lambda == pytest.approx(base.ratio_lambda, rel=1e-12)
    assert scaled.valid == base.valid


def test_scatter_traces_add_up_to_total():
    rng = np.random.default_rng(17)
    z = rng.normal(size=(90, 4)) + np.repeat(np.eye(4)[:3] * 5, 30, axis=0)
    labels = np.repeat([0, 1, 2], 30)
    result = variance_decomposition(z, labels)
    total = float(np.sum((z - z.mean(axis=0)) ** 2))
    assert result.s_a + result.s_e == pytest.approx(total, rel=1e-12)
