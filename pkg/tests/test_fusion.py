import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from stylefuse import nn
from stylefuse.fusion import (CrossFusion, FusionConfig, content_stats, cross_normalize, fuse,
                              match_width, tile_pooled, width_index)
from stylefuse.nn import Tensor


def fuse_oracle(fc, fs, gamma, eta):
    """Single pass over rows with plain Python arithmetic."""
    out = np.empty_like(fc)
    for i in range(fc.shape[0]):
        row = [float(v) for v in fc[i]]
        mu = sum(row) / len(row)
        var = sum((v - mu) ** 2 for v in row) / len(row)
        denom = math.sqrt(var + eta)
        for j in range(fc.shape[1]):
            out[i, j] = row[j] + gamma * (float(fs[i, j]) - mu) / denom
    return out


def test_stats_examples():
    s = content_stats(Tensor(np.array([[2.0, 2.0, 2.0, 2.0], [1.0, 3.0, 1.0, 3.0]])))
    np.testing.assert_array_equal(s.mu_c.data.ravel(), [2.0, 2.0])
    np.testing.assert_array_equal(s.sigma2_c.data.ravel(), [0.0, 1.0])
    s2 = content_stats(Tensor(np.array([[1.0, 3.0]])))
    assert (s2.mu_c.item(), s2.sigma2_c.item()) == (2.0, 1.0)


def test_cross_normalize_centering_and_inverse():
    rng = np.random.default_rng(0)
    fc = rng.standard_normal((4, 8))
    stats = content_stats(Tensor(fc))
    mu = stats.mu_c.data
    assert not np.any(cross_normalize(Tensor(np.broadcast_to(mu, (4, 8)).copy()), stats).data)
    x = rng.standard_normal((4, 8))
    fs = mu + np.sqrt(stats.sigma2_c.data + 1e-5) * x
    np.testing.assert_allclose(cross_normalize(Tensor(fs), stats, 1e-5).data, x, atol=1e-12)


@pytest.mark.parametrize("seed", range(10))
def test_fuse_matches_oracle(seed):
    rng = np.random.default_rng(seed)
    fc, fs = rng.standard_normal((4, 8)) * 3, rng.standard_normal((4, 8))
    cfg = FusionConfig(gamma=0.6, eta=1e-5)
    out = fuse(Tensor(fc), Tensor(fs), cfg).data
    np.testing.assert_allclose(out, fuse_oracle(fc, fs, 0.6, 1e-5), rtol=0, atol=1e-6)


@settings(max_examples=40, deadline=None)
@given(arrays(np.float64, (3, 6), elements=st.floats(-100, 100)),
       arrays(np.float64, (3, 6), elements=st.floats(-100, 100)))
def test_gamma_zero_is_bit_identity(fc, fs):
    out = fuse(Tensor(fc), Tensor(fs), FusionConfig(gamma=0.0)).data
    assert np.array_equal(out, fc)


def test_per_row_gamma_zero_rows_are_untouched():
    rng = np.random.default_rng(1)
    fc, fs = rng.standard_normal((4, 3, 8)), rng.standard_normal((4, 3, 8))
    gamma = np.array([0.6, 0.0, 0.6, 0.0])[:, None, None]
    out = fuse(Tensor(fc), Tensor(fs), gamma=gamma).data
    assert np.array_equal(out[1], fc[1]) and np.array_equal(out[3], fc[3])
    assert not np.array_equal(out[0], fc[0])


def test_fuse_gradient_wrt_style():
    rng = np.random.default_rng(2)
    fc = Tensor(rng.standard_normal((2, 3, 8)))
    w = Tensor(rng.standard_normal((2, 3, 8)))
    err = nn.finite_diff_check(lambda s: nn.tsum(fuse(fc, s) * w), Tensor(rng.standard_normal((2, 3, 8))))
    assert err < 1e-3


def test_width_matching():
    assert width_index(32, 64).tolist() == [j // 2 for j in range(64)]
    assert width_index(4, 4).tolist() == [0, 1, 2, 3]
    s = Tensor(np.arange(4.0).reshape(1, 1, 4))
    assert match_width(s, 8).data.ravel().tolist() == [0, 0, 1, 1, 2, 2, 3, 3]
    tiled = tile_pooled(Tensor(np.array([[1.0, 2.0]])), 3).data
    assert tiled.shape == (1, 3, 2) and np.all(tiled == [1.0, 2.0])


def test_cross_fusion_owns_no_parameters():
    mod = CrossFusion()
    assert mod.parameters() == [] and mod.num_parameters() == 0


@pytest.mark.parametrize("kwargs", [{"gamma": -0.1}, {"eta": 0.0}, {"hook_block": 0}])
def test_config_validation(kwargs):
    with pytest.raises(ValueError):
        FusionConfig(**kwargs)
