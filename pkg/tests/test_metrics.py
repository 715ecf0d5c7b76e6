"""Metrics against scikit-image references and known closed-form values."""

import numpy as np
import pytest
from skimage.metrics import peak_signal_noise_ratio as sk_psnr
from skimage.metrics import structural_similarity as sk_ssim

from dnlinv.metrics import error_map, psnr, rss_combine, ssim


def test_rss_of_constant_three_four_is_five():
    a = np.full((8, 8), 3.0)
    b = np.full((8, 8), 4.0)
    np.testing.assert_allclose(rss_combine(np.stack([a, b])), 5.0)


def test_rss_complex():
    rng = np.random.default_rng(0)
    c = rng.standard_normal((4, 5, 5)) + 1j * rng.standard_normal((4, 5, 5))
    np.testing.assert_allclose(rss_combine(c), np.sqrt((np.abs(c) ** 2).sum(axis=0)))


def test_psnr_self_is_inf():
    img = np.random.default_rng(1).random((16, 16))
    assert psnr(img, img) == float("inf")


def test_psnr_known_noise_level():
    rng = np.random.default_rng(2)
    ref = rng.random((256, 256))
    ref /= ref.max()
    sigma = 0.05
    noisy = ref + rng.normal(0.0, sigma, ref.shape)
    expect = 20 * np.log10(1.0) - 10 * np.log10(sigma**2)
    assert abs(psnr(noisy, ref) - expect) < 0.5


def test_ssim_self_is_one():
    img = np.random.default_rng(3).random((32, 32))
    assert ssim(img, img) == pytest.approx(1.0, abs=1e-12)


def test_metrics_match_skimage_on_random_pairs():
    rng = np.random.default_rng(4)
    for _ in range(10):
        ref = rng.random((48, 48))
        img = ref + rng.normal(0, 0.1, ref.shape)
        dr = float(ref.max())
        assert abs(psnr(img, ref) - sk_psnr(ref, img, data_range=dr)) <= 1e-6
        want = sk_ssim(img, ref, win_size=7, data_range=dr)
        assert abs(ssim(img, ref) - want) <= 1e-4


def test_error_map_gain_and_clip():
    ref = np.array([[1.0, 1.0], [1.0, 1.0]])
    img = np.array([[1.1, 0.5], [1.0, 2.5]])
    out = error_map(img, ref, gain=3.0)
    np.testing.assert_allclose(out, [[0.3, 1.0], [0.0, 1.0]], atol=1e-12)


def test_shape_mismatch():
    with pytest.raises(ValueError):
        psnr(np.zeros((2, 2)), np.zeros((3, 3)))
