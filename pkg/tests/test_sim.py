"""Simulation: phantom rendering, coil maps, noise statistics, 1-D signal."""

import numpy as np
import pytest

from dnlinv.ctensor import fft2c
from dnlinv.sim import (
    MODIFIED_SHEPP_LOGAN_ELLIPSES,
    CoilGeometry,
    PhantomSpec,
    birdcage_maps,
    make_1d_signal,
    shepp_logan,
    simulate_kspace,
)


class TestPhantom:
    def test_peak_normalized_and_nonnegative(self):
        img = shepp_logan((64, 64))
        assert img.max() == pytest.approx(1.0)
        assert img.min() >= 0.0

    def test_corners_are_background(self):
        img = shepp_logan((64, 64))
        assert img[0, 0] == 0.0 and img[-1, -1] == 0.0 and img[0, -1] == 0.0

    def test_render_is_deterministic(self):
        np.testing.assert_array_equal(shepp_logan((32, 32)), shepp_logan((32, 32)))

    def test_rotated_ellipse_table_rotates_image(self):
        # point-reflecting every ellipse center must rotate the render 180 deg
        flipped = tuple((a, ax, bx, -x0, -y0, ang) for a, ax, bx, x0, y0, ang in MODIFIED_SHEPP_LOGAN_ELLIPSES)
        img = shepp_logan(PhantomSpec(shape=(48, 48)))
        rot = shepp_logan(PhantomSpec(shape=(48, 48), ellipses=flipped))
        np.testing.assert_allclose(rot, np.rot90(img, 2), atol=1e-12)

    def test_peak_scaling(self):
        img = shepp_logan(PhantomSpec(shape=(32, 32), peak=2.5))
        assert img.max() == pytest.approx(2.5)

    def test_bad_shape_rejected(self):
        with pytest.raises(ValueError):
            shepp_logan((2, 64))


class TestBirdcage:
    def test_shape_and_smoothness(self):
        maps = birdcage_maps(CoilGeometry(n_coils=8), (64, 64))
        assert maps.shape == (8, 64, 64)
        # 1/d falloff outside the ring keeps maps smooth and bounded by 1
        assert np.abs(maps).max() <= 1.0 + 1e-12
        grad = np.abs(np.diff(np.abs(maps), axis=1)).max()
        assert grad < 0.1

    def test_four_coil_rotational_symmetry(self):
        maps = birdcage_maps(CoilGeometry(n_coils=4), (32, 32))
        np.testing.assert_allclose(maps[1], -np.rot90(maps[0]), atol=1e-12)
        np.testing.assert_allclose(maps[2], np.rot90(maps[0], 2), atol=1e-12)

    def test_normalize_gives_unit_rss(self):
        maps = birdcage_maps(CoilGeometry(n_coils=8, normalize=True), (48, 48))
        rss = np.sqrt((np.abs(maps) ** 2).sum(axis=0))
        np.testing.assert_allclose(rss, 1.0, atol=1e-12)

    def test_int_shorthand(self):
        assert birdcage_maps(5, (16, 16)).shape == (5, 16, 16)


class TestSimulateKspace:
    def test_noiseless_matches_direct_transform(self):
        img = shepp_logan((32, 32))
        maps = birdcage_maps(4, (32, 32))
        mask = np.ones((32, 32), dtype=bool)
        y = simulate_kspace(img, maps, mask, sigma=0.0)
        np.testing.assert_allclose(y, fft2c(maps * img), atol=1e-12)

    def test_zeros_off_mask(self):
        img = shepp_logan((32, 32))
        maps = birdcage_maps(4, (32, 32))
        mask = np.zeros((32, 32), dtype=bool)
        mask[::4, :] = True
        y = simulate_kspace(img, maps, mask, sigma=0.1, seed=3)
        assert np.all(y[:, ~mask] == 0)
        assert np.any(y[:, mask] != 0)

    def test_noise_std_per_component(self):
        img = np.zeros((128, 128))
        maps = birdcage_maps(8, (128, 128))
        mask = np.ones((128, 128), dtype=bool)
        sigma = 0.05
        y = simulate_kspace(img, maps, mask, sigma=sigma, seed=7)
        # >= 1e5 samples per component
        assert y.size >= 100_000
        assert np.std(y.real) == pytest.approx(sigma, rel=0.01)
        assert np.std(y.imag) == pytest.approx(sigma, rel=0.01)

    def test_correlated_coil_noise_covariance(self):
        rng = np.random.default_rng(0)
        a = rng.standard_normal((4, 4))
        cov = a @ a.T + 4 * np.eye(4)
        cov *= 0.01
        img = np.zeros((128, 128))
        maps = birdcage_maps(4, (128, 128))
        mask = np.ones((128, 128), dtype=bool)
        y = simulate_kspace(img, maps, mask, coil_cov=cov, seed=1)
        flat = y.reshape(4, -1)
        emp = (flat.real @ flat.real.T + flat.imag @ flat.imag.T) / (2 * flat.shape[1])
        assert np.linalg.norm(emp - cov) / np.linalg.norm(cov) < 0.05

    def test_same_seed_reproduces(self):
        img = shepp_logan((16, 16))
        maps = birdcage_maps(2, (16, 16))
        mask = np.ones((16, 16), dtype=bool)
        y1 = simulate_kspace(img, maps, mask, sigma=0.1, seed=5)
        y2 = simulate_kspace(img, maps, mask, sigma=0.1, seed=5)
        np.testing.assert_array_equal(y1, y2)

    def test_bad_cov_rejected(self):
        img = np.zeros((8, 8))
        maps = birdcage_maps(2, (8, 8))
        mask = np.ones((8, 8), dtype=bool)
        with pytest.raises(ValueError):
            simulate_kspace(img, maps, mask, coil_cov=np.array([[1.0, 2.0], [2.0, 1.0]]))
        with pytest.raises(ValueError):
            simulate_kspace(img, maps, mask, coil_cov=np.array([[1.0, 0.5], [0.4, 1.0]]))


class TestSignal1D:
    def test_range_and_shape(self):
        clean, noisy = make_1d_signal(length=128, sigma=0.1, n_samples=8, seed=0)
        assert clean.shape == (128,)
        assert noisy.shape == (8, 128)
        assert clean.min() == pytest.approx(0.0)
        assert clean.max() == pytest.approx(1.0)

    def test_noise_level(self):
        clean, noisy = make_1d_signal(length=4096, sigma=0.1, n_samples=32, seed=1)
        resid = noisy - clean[None, :]
        assert np.std(resid) == pytest.approx(0.1, rel=0.02)

    def test_deterministic(self):
        a = make_1d_signal(seed=3)
        b = make_1d_signal(seed=3)
        np.testing.assert_array_equal(a[0], b[0])
        np.testing.assert_array_equal(a[1], b[1])
