"""Quantizer and additive-noise proxy behavior."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dsscc.autodiff import Tensor
import dsscc.autodiff as ad
from dsscc.quantization import NoiseRng, noise_proxy, quantize


def test_rounds_to_nearest():
    np.testing.assert_array_equal(quantize(np.array([0.4, -0.4])), [0.0, 0.0])
    np.testing.assert_array_equal(quantize(np.array([0.6, -0.6])), [1.0, -1.0])


def test_ties_away_from_zero():
    np.testing.assert_array_equal(quantize(np.array([2.5, -2.5, 0.5, -0.5])),
                                  [3.0, -3.0, 1.0, -1.0])


def test_integers_are_fixed_points():
    v = np.arange(-5.0, 6.0)
    np.testing.assert_array_equal(quantize(v), v)


def test_quantize_idempotent():
    rng = np.random.default_rng(0)
    y = rng.standard_normal(1000) * 7
    once = quantize(y)
    np.testing.assert_array_equal(quantize(once), once)


def test_quantize_error_bounded():
    rng = np.random.default_rng(1)
    y = rng.standard_normal(10000) * 20
    assert np.max(np.abs(quantize(y) - y)) <= 0.5


def test_non_finite_rejected():
    with pytest.raises(ValueError):
        quantize(np.array([1.0, np.inf]))


@given(st.integers(min_value=0, max_value=2**63 - 1))
@settings(max_examples=25, deadline=None)
def test_noise_strictly_inside_half_open_interval(seed):
    rng = NoiseRng(seed)
    u = rng.uniform_unit((64,))
    assert np.all(np.abs(u) < 0.5)


def test_identical_seeds_identical_streams():
    a = NoiseRng(1234).uniform_unit((100,))
    b = NoiseRng(1234).uniform_unit((100,))
    assert np.array_equal(a, b)


def test_split_streams_differ_and_are_deterministic():
    parts1 = [r.uniform_unit((8,)) for r in NoiseRng(7).split(3)]
    parts2 = [r.uniform_unit((8,)) for r in NoiseRng(7).split(3)]
    for p1, p2 in zip(parts1, parts2):
        assert np.array_equal(p1, p2)
    assert not np.array_equal(parts1[0], parts1[1])


def test_noise_moments_match_uniform():
    # Monte-Carlo oracle: mean 0 +- 0.002, variance 1/12 +- 2%
    u = NoiseRng(99).uniform_unit((1_000_000,))
    assert abs(u.mean()) < 0.002
    assert abs(u.var() - 1.0 / 12.0) < 0.02 / 12.0


def test_noise_proxy_gradient_is_identity():
    y = Tensor(np.array([1.0, 2.0], dtype=np.float32), requires_grad=True)
    out = noise_proxy(y, NoiseRng(0))
    ad.sum_(out).backward()
    np.testing.assert_allclose(y.grad, [1.0, 1.0])


def test_noise_proxy_density_is_bin_integral():
    """For p_y = U(0,1), the noisy density must be the triangular hat on
    (-0.5, 1.5): the bin integral of the source density (the convolution
    identity behind the proxy)."""
    rng = NoiseRng(5)
    base = np.random.default_rng(2).random(2_000_000)
    noisy = noise_proxy(base, rng)
    hist, edges = np.histogram(noisy, bins=60, range=(-0.75, 1.75), density=True)
    centers = (edges[:-1] + edges[1:]) / 2
    # analytic hat: min(t+0.5, 1, 1.5-t) clipped at 0
    expect = np.clip(np.minimum(np.minimum(centers + 0.5, 1.0), 1.5 - centers), 0.0, None)
    assert np.max(np.abs(hist - expect)) < 0.02


def test_train_eval_gap_bounded():
    # E|round(y) - (y+u)| <= 1 elementwise
    rng = np.random.default_rng(3)
    y = rng.standard_normal(200_000) * 4
    gap = np.abs(quantize(y) - noise_proxy(y, NoiseRng(17)))
    assert gap.mean() <= 1.0
    assert gap.max() <= 1.0 + 1e-9
