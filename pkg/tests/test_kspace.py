"""Fourier operators, sampling masks, noise injection and dataset assembly."""

import numpy as np
import pytest
import torch

from seranet.dataio import write_dataset
from seranet.kspace import (build_dataset, center_block, corrupt_and_undersample,
                            data_consistency, fft2c, from_complex, ifft2c,
                            make_cartesian_mask, normalize_image, to_complex,
                            zero_fill)


def brute_force_fft2c(x: np.ndarray) -> np.ndarray:
    """Direct O(N^4) evaluation of the centered orthonormal 2D DFT.

    Index convention: both image and spectrum use the grid center
    (H//2, W//2) as their origin, matching a shift-transform-shift pipeline.
    """
    H, W = x.shape
    out = np.zeros((H, W), dtype=complex)
    for p in range(H):
        for q in range(W):
            acc = 0.0 + 0.0j
            for m in range(H):
                for n in range(W):
                    ang = -2j * np.pi * ((p - H // 2) * (m - H // 2) / H
                                         + (q - W // 2) * (n - W // 2) / W)
                    acc += x[m, n] * np.exp(ang)
            out[p, q] = acc / np.sqrt(H * W)
    return out


def random_image(shape, seed):
    rng = np.random.default_rng(seed)
    return torch.from_numpy(rng.standard_normal((2,) + shape).astype(np.float32))


class TestCenteredFFT:
    def test_matches_brute_force_4x4(self):
        rng = np.random.default_rng(0)
        x = rng.standard_normal((4, 4)) + 1j * rng.standard_normal((4, 4))
        expected = brute_force_fft2c(x)
        got = to_complex(fft2c(from_complex(torch.from_numpy(x)))).numpy()
        np.testing.assert_allclose(got, expected, atol=1e-12)

    def test_matches_brute_force_6x8(self):
        rng = np.random.default_rng(1)
        x = rng.standard_normal((6, 8)) + 1j * rng.standard_normal((6, 8))
        expected = brute_force_fft2c(x)
        got = to_complex(fft2c(from_complex(torch.from_numpy(x)))).numpy()
        np.testing.assert_allclose(got, expected, atol=1e-12)

    def test_constant_image_hits_center_bin(self):
        c = 0.7
        x = torch.zeros(2, 4, 4, dtype=torch.float64)
        x[0] = c
        k = fft2c(x)
        expected = torch.zeros(2, 4, 4, dtype=torch.float64)
        expected[0, 2, 2] = c * 4.0  # c * sqrt(H*W)
        torch.testing.assert_close(k, expected, rtol=0, atol=1e-12)

    def test_roundtrip(self):
        x = random_image((32, 48), seed=3)
        back = ifft2c(fft2c(x))
        assert (back - x).abs().max().item() < 1e-6

    def test_parseval(self):
        x = random_image((32, 48), seed=4)
        k_energy = fft2c(x).norm().item()
        x_energy = x.norm().item()
        assert abs(k_energy - x_energy) / x_energy < 1e-6

    def test_batched_matches_single(self):
        x = torch.stack([random_image((16, 16), seed=s) for s in (5, 6)])
        k = fft2c(x)
        torch.testing.assert_close(k[0], fft2c(x[0]))
        torch.testing.assert_close(k[1], fft2c(x[1]))


class TestCartesianMask:
    def test_reference_geometry_216(self):
        # round(0.30 * 216) = 65 kept lines; the 16 central columns of a
        # width-216 grid are 100..115
        for seed in (0, 1, 2):
            mask = make_cartesian_mask(216, 0.30, 16, seed=seed)
            assert mask.n_kept == 65
            assert mask.kept_lines[100:116].all()

    def test_center_block_span(self):
        assert center_block(216, 16) == (100, 116)
        assert center_block(64, 8) == (28, 36)

    def test_full_rate_keeps_everything(self):
        mask = make_cartesian_mask(16, 1.0, 16, seed=0)
        assert mask.kept_lines.all()

    def test_deterministic(self):
        a = make_cartesian_mask(64, 0.4, 8, seed=9)
        b = make_cartesian_mask(64, 0.4, 8, seed=9)
        np.testing.assert_array_equal(a.kept_lines, b.kept_lines)

    def test_cardinality_always_rounds(self):
        for width, rate in ((64, 0.3), (100, 0.25), (216, 0.3), (180, 0.5)):
            mask = make_cartesian_mask(width, rate, 4, seed=1)
            assert mask.n_kept == int(np.floor(rate * width + 0.5))

    def test_rejects_center_larger_than_budget(self):
        with pytest.raises(ValueError):
            make_cartesian_mask(64, 0.1, 16, seed=0)  # keeps 6 < 16 center lines

    def test_expand_is_constant_along_rows(self):
        mask = make_cartesian_mask(32, 0.5, 4, seed=2)
        grid = mask.expand(24)
        assert grid.shape == (24, 32)
        assert (grid == mask.kept_lines[None, :]).all()

    def test_density_concentrates_near_center(self):
        # kept lines should fall nearer the center than a uniform draw would
        hits = np.zeros(216)
        for seed in range(200):
            hits += make_cartesian_mask(216, 0.30, 16, seed=seed).kept_lines
        center_mass = hits[72:144].sum() / hits.sum()
        assert center_mass > 0.55


class TestNoiseInjection:
    def test_zero_noise_full_mask_identity(self):
        k = fft2c(random_image((32, 32), seed=7))
        mask = make_cartesian_mask(32, 1.0, 4, seed=0)
        y = corrupt_and_undersample(k, mask, noise_level=0.0)
        torch.testing.assert_close(y, k)

    def test_zero_noise_keeps_lines_zeroes_rest(self):
        k = fft2c(random_image((32, 32), seed=8))
        mask = make_cartesian_mask(32, 0.4, 4, seed=3)
        y = corrupt_and_undersample(k, mask, noise_level=0.0)
        kept = torch.from_numpy(mask.kept_lines)
        torch.testing.assert_close(y[..., kept], k[..., kept])
        assert y[..., ~kept].abs().max().item() == 0.0

    def test_noise_magnitude_calibrated(self):
        # per-component sigma = level * RMS(|k|) / sqrt(2), checked
        # empirically on the full-size grid with 10% relative tolerance
        k = fft2c(random_image((180, 216), seed=9))
        mask = make_cartesian_mask(216, 1.0, 16, seed=0)
        level = 0.10
        y = corrupt_and_undersample(k, mask, noise_level=level, noise_seed=11)
        rms = torch.sqrt((k ** 2).sum(dim=0).mean()).item()
        noise = (y - k).numpy()
        measured = noise.std()
        assert abs(measured - level * rms / np.sqrt(2)) / (level * rms / np.sqrt(2)) < 0.10

    def test_deterministic_per_seed(self):
        k = fft2c(random_image((32, 32), seed=10))
        mask = make_cartesian_mask(32, 0.5, 4, seed=1)
        a = corrupt_and_undersample(k, mask, noise_level=0.2, noise_seed=5)
        b = corrupt_and_undersample(k, mask, noise_level=0.2, noise_seed=5)
        torch.testing.assert_close(a, b)
        c = corrupt_and_undersample(k, mask, noise_level=0.2, noise_seed=6)
        assert (a - c).abs().max().item() > 0

    def test_noise_then_mask_equals_mask_then_noise_on_kept_lines(self):
        k = fft2c(random_image((32, 32), seed=12))
        mask = make_cartesian_mask(32, 0.5, 4, seed=1)
        full = make_cartesian_mask(32, 1.0, 4, seed=0)
        noisy_full = corrupt_and_undersample(k, full, noise_level=0.1, noise_seed=2)
        y = corrupt_and_undersample(k, mask, noise_level=0.1, noise_seed=2)
        kept = torch.from_numpy(mask.kept_lines)
        torch.testing.assert_close(y[..., kept], noisy_full[..., kept])


class TestDataConsistency:
    def _setup(self, seed, rate=0.4):
        x_full = random_image((32, 32), seed=seed)
        mask = make_cartesian_mask(32, rate, 4, seed=seed)
        y = corrupt_and_undersample(fft2c(x_full), mask, noise_level=0.0)
        return x_full, y, mask

    def test_full_mask_total_replacement(self):
        x_full, y, _ = self._setup(0, rate=1.0)
        mask = make_cartesian_mask(32, 1.0, 4, seed=0)
        x = random_image((32, 32), seed=99)
        out = data_consistency(x, y, mask.to_tensor())
        assert (out - x_full).abs().max().item() < 1e-6

    def test_empty_mask_returns_input(self):
        x = random_image((32, 32), seed=1)
        y = torch.zeros_like(x)
        mask = torch.zeros(32)
        out = data_consistency(x, y, mask)
        assert (out - x).abs().max().item() < 1e-6

    def test_idempotent(self):
        x_full, y, mask = self._setup(2)
        x = random_image((32, 32), seed=55)
        m = mask.to_tensor()
        once = data_consistency(x, y, m)
        twice = data_consistency(once, y, m)
        assert (twice - once).abs().max().item() < 1e-6

    def test_measured_lines_pass_through(self):
        x_full, y, mask = self._setup(3)
        x = random_image((32, 32), seed=77)
        out = data_consistency(x, y, mask.to_tensor())
        k_out = fft2c(out)
        kept = torch.from_numpy(mask.kept_lines)
        assert (k_out[..., kept] - y[..., kept]).abs().max().item() < 1e-5

    def test_zero_fill_energy_never_exceeds_full(self):
        for seed in range(5):
            x_full, y, mask = self._setup(seed)
            assert zero_fill(y).norm().item() <= x_full.norm().item() + 1e-6


class TestNormalization:
    def test_unit_peak(self):
        img = random_image((32, 32), seed=4).numpy().astype(np.float64)
        out = normalize_image(img)
        mags = np.hypot(out[0], out[1])
        assert mags.max() == pytest.approx(1.0)

    def test_all_zero_rejected(self):
        with pytest.raises(ValueError):
            normalize_image(np.zeros((2, 8, 8)))

    def test_scale_invariance(self):
        # the pipeline divides by max magnitude, so any positive scalar on
        # the raw image is absorbed; the arrays the dataset stores (float32)
        # come out bit-identical, and dyadic scales cancel exactly even in
        # float64 (products by powers of two never round)
        img = random_image((32, 32), seed=5).numpy().astype(np.float64)
        a = normalize_image(img)
        np.testing.assert_array_equal(a, normalize_image(img * 0.25))
        for c in (7.3, 1e3, np.pi):
            b = normalize_image(img * c)
            np.testing.assert_array_equal(a.astype(np.float32),
                                          b.astype(np.float32))


class TestBuildDataset:
    def test_many_brain_record_count(self):
        samples = build_dataset(n_brains=17, slices_per_brain=57, dims=(32, 32),
                                rate=0.5, center_lines=4, noise_level=0.0, seed=0)
        assert len(samples) == 969
        assert all(s.meta.split == "train" for s in samples)

    def test_split_never_shares_brains(self):
        samples = build_dataset(n_brains=3, slices_per_brain=2, dims=(32, 32),
                                rate=0.5, center_lines=4, noise_level=0.1,
                                seed=1, n_test_brains=2)
        train_brains = {s.meta.brain_id for s in samples if s.meta.split == "train"}
        test_brains = {s.meta.brain_id for s in samples if s.meta.split == "test"}
        assert len(train_brains) == 3 and len(test_brains) == 2
        assert not (train_brains & test_brains)

    def test_full_rate_zero_noise_recovers_x_full(self):
        samples = build_dataset(n_brains=1, slices_per_brain=2, dims=(32, 32),
                                rate=1.0, center_lines=4, noise_level=0.0, seed=2)
        for s in samples:
            x0 = zero_fill(torch.from_numpy(s.y))
            assert (x0 - torch.from_numpy(s.x_full)).abs().max().item() < 1e-6

    def test_y_zero_on_unsampled_lines(self):
        samples = build_dataset(n_brains=1, slices_per_brain=1, dims=(32, 32),
                                rate=0.4, center_lines=4, noise_level=0.2, seed=3)
        s = samples[0]
        unkept = ~s.mask.kept_lines
        assert np.abs(s.y[..., unkept]).max() == 0.0

    def test_seg_gt_partition_of_unity(self):
        samples = build_dataset(n_brains=1, slices_per_brain=1, dims=(32, 32),
                                rate=0.4, center_lines=4, noise_level=0.1, seed=4)
        np.testing.assert_array_equal(samples[0].seg_gt.sum(axis=0), 1.0)

    def test_same_seed_byte_identical_manifest(self, tmp_path):
        kwargs = dict(n_brains=2, slices_per_brain=2, dims=(32, 32), rate=0.5,
                      center_lines=4, noise_level=0.1, seed=5, n_test_brains=1)
        write_dataset(build_dataset(**kwargs), tmp_path / "a")
        write_dataset(build_dataset(**kwargs), tmp_path / "b")
        assert (tmp_path / "a" / "manifest.json").read_bytes() == \
               (tmp_path / "b" / "manifest.json").read_bytes()

    def test_sequence_timing_recorded_within_window(self):
        samples = build_dataset(n_brains=2, slices_per_brain=1, dims=(32, 32),
                                rate=0.5, center_lines=4, noise_level=0.0, seed=6)
        for s in samples:
            assert 0.076 <= s.meta.te <= 0.084
            assert 2.85 <= s.meta.tr <= 3.15
