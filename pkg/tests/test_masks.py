"""Sampling patterns: achieved accelerations, spacing rules, uniformity."""

import numpy as np
import pytest
from scipy.stats import chisquare

from dnlinv.masks import (
    MaskGenerationError,
    SamplingMask,
    audit_poisson_spacing,
    mask_caipirinha,
    mask_even,
    mask_lines_uniform,
    mask_poisson_disk,
)


class TestEven:
    def test_rx4_af(self):
        m = mask_even((64, 64), 4)
        assert m.acceleration == 4.0
        assert m.array[0, 0] and m.array[4, 0] and not m.array[1, 0]

    def test_2d_factors(self):
        m = mask_even((64, 64), 2, 4)
        assert m.acceleration == 8.0

    def test_out_of_range(self):
        with pytest.raises(ValueError):
            mask_even((8, 8), 9)


class TestCaipirinha:
    @pytest.mark.parametrize("r", [2, 3, 4, 5])
    def test_exact_acceleration_on_divisible_grid(self, r):
        m = mask_caipirinha((60, 60), r, r)
        assert m.acceleration == r * r

    @pytest.mark.parametrize("r,shift", [(2, 1), (3, 1), (3, 2), (4, 2)])
    def test_exactly_one_sample_per_tile(self, r, shift):
        m = mask_caipirinha((24, 24), r, r, shift=shift)
        tiles = m.array.reshape(24 // r, r, 24 // r, r)
        counts = tiles.sum(axis=(1, 3))
        np.testing.assert_array_equal(counts, 1)

    def test_shift_changes_pattern_not_af(self):
        a = mask_caipirinha((24, 24), 2, 2, shift=0)
        b = mask_caipirinha((24, 24), 2, 2, shift=1)
        assert a.acceleration == b.acceleration == 4.0
        assert (a.array != b.array).any()

    def test_shift_zero_reduces_to_lattice(self):
        m = mask_caipirinha((16, 16), 2, 2, shift=0)
        np.testing.assert_array_equal(m.array, mask_even((16, 16), 2, 2).array)

    def test_bad_shift(self):
        with pytest.raises(ValueError):
            mask_caipirinha((16, 16), 2, 2, shift=2)


class TestPoisson:
    @pytest.mark.parametrize("af", [4.0, 7.0, 8.5])
    def test_achieved_acceleration(self, af):
        m = mask_poisson_disk((64, 64), af, seed=1)
        assert abs(m.acceleration - af) / af <= 0.05

    def test_spacing_rule_holds(self):
        m = mask_poisson_disk((64, 64), 7.0, seed=3)
        assert audit_poisson_spacing(m) >= 0.0

    def test_center_denser_than_edge(self):
        m = mask_poisson_disk((64, 64), 4.0, seed=0)
        yy, xx = np.mgrid[:64, :64]
        r = np.hypot(yy - 31.5, xx - 31.5)
        inner = m.array[r < 16].mean()
        outer = m.array[r > 24].mean()
        assert inner > 1.5 * outer

    def test_acs_block_included(self):
        m = mask_poisson_disk((64, 64), 5.0, seed=2, calib=(12, 12))
        assert m.array[26:38, 26:38].all()
        assert m.acs == (12, 12)
        assert audit_poisson_spacing(m) >= 0.0

    def test_deterministic_per_seed(self):
        a = mask_poisson_disk((48, 48), 4.0, seed=9)
        b = mask_poisson_disk((48, 48), 4.0, seed=9)
        np.testing.assert_array_equal(a.array, b.array)

    def test_unreachable_target_raises_with_closest(self):
        with pytest.raises(MaskGenerationError) as e:
            mask_poisson_disk((8, 8), 60.0, seed=0, calib=(4, 4))
        assert e.value.closest_af is not None


class TestLines:
    def test_exact_line_count(self):
        m = mask_lines_uniform((32, 48), 2.0, seed=0)
        rows = m.array.all(axis=1)
        assert rows.sum() == 16
        assert (~m.array[~rows]).all()

    def test_acs_lines_centered(self):
        m = mask_lines_uniform((32, 32), 4.0, seed=1, acs_lines=4)
        rows = np.flatnonzero(m.array.all(axis=1))
        assert rows.size == 8
        assert {14, 15, 16, 17}.issubset(set(rows.tolist()))

    def test_line_choice_uniform_chi2(self):
        ny, n_seeds = 32, 4000
        counts = np.zeros(ny)
        for seed in range(n_seeds):
            m = mask_lines_uniform((ny, 4), 2.0, seed=seed)
            counts += m.array[:, 0]
        stat, p = chisquare(counts)
        assert p > 0.01, f"line histogram not uniform (p={p:.4f})"

    def test_af_below_one_rejected(self):
        with pytest.raises(ValueError):
            mask_lines_uniform((16, 16), 0.5)


def test_mask_requires_samples():
    with pytest.raises(ValueError):
        SamplingMask(np.zeros((4, 4), dtype=bool), "empty", 1.0)
