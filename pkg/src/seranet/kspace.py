"""Centered orthonormal 2D Fourier transforms, Cartesian undersampling,
k-space noise injection, zero-filling and the hard data-consistency
projection.

All array operations work on torch tensors shaped (..., 2, H, W): real and
imaginary parts stacked in the channel dimension, DC component at the grid
center. The orthonormal scaling makes Parseval identities exact, so energy
checks and normalization are scale-free.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch

from .phantom import (DEFAULT_TISSUES, generate_label_map, sample_sequence_params,
                      synthesize_complex_image)
from .seeds import derive_seed


def to_complex(x: torch.Tensor) -> torch.Tensor:
    """(..., 2, H, W) real pairs -> (..., H, W) complex."""
    return torch.complex(x[..., 0, :, :], x[..., 1, :, :])


def from_complex(z: torch.Tensor) -> torch.Tensor:
    """(..., H, W) complex -> (..., 2, H, W) real pairs."""
    return torch.stack((z.real, z.imag), dim=-3)


def fft2c(x: torch.Tensor) -> torch.Tensor:
    """Centered orthonormal 2D FFT of a 2-channel image, image -> k-space."""
    z = torch.fft.ifftshift(to_complex(x), dim=(-2, -1))
    k = torch.fft.fft2(z, norm="ortho")
    return from_complex(torch.fft.fftshift(k, dim=(-2, -1)))


def ifft2c(k: torch.Tensor) -> torch.Tensor:
    """Centered orthonormal 2D inverse FFT, k-space -> image."""
    z = torch.fft.ifftshift(to_complex(k), dim=(-2, -1))
    x = torch.fft.ifft2(z, norm="ortho")
    return from_complex(torch.fft.fftshift(x, dim=(-2, -1)))


def _round_half_away(x: float) -> int:
    return int(math.floor(x + 0.5)) if x >= 0 else -int(math.floor(-x + 0.5))


@dataclass
class SamplingMask:
    """Cartesian phase-encode sampling pattern: one bool per k-space column."""

    kept_lines: np.ndarray  # (W,) bool
    rate: float
    center_lines: int
    seed: int

    @property
    def width(self) -> int:
        return self.kept_lines.shape[0]

    @property
    def n_kept(self) -> int:
        return int(self.kept_lines.sum())

    def expand(self, height: int) -> np.ndarray:
        """Dense (H, W) boolean mask, constant along the readout axis."""
        return np.broadcast_to(self.kept_lines, (height, self.width)).copy()

    def to_tensor(self, dtype=torch.float32) -> torch.Tensor:
        """(W,) mask tensor; broadcasts against (..., 2, H, W) grids."""
        return torch.from_numpy(self.kept_lines.astype(np.float32)).to(dtype)


def center_block(width: int, center_lines: int) -> tuple[int, int]:
    """Half-open column range [start, stop) of the fully-sampled center."""
    start = width // 2 - center_lines // 2
    return start, start + center_lines


def make_cartesian_mask(width: int, rate: float, center_lines: int, seed: int) -> SamplingMask:
    """Variable-density Cartesian mask.

    Keeps round(rate * width) phase-encode lines: the ``center_lines``
    central columns always, the rest drawn without replacement with
    Gaussian weight exp(-(j - c)^2 / (2 sigma^2)), sigma = width / 6.
    """
    if not 0 < rate <= 1:
        raise ValueError(f"rate must lie in (0, 1], got {rate}")
    if center_lines < 0 or center_lines > width:
        raise ValueError(f"center_lines must lie in 0..{width}, got {center_lines}")
    n_keep = _round_half_away(rate * width)
    if n_keep < center_lines:
        raise ValueError(f"rate {rate} keeps only {n_keep} of {width} lines, "
                         f"fewer than the {center_lines} mandatory center lines")

    kept = np.zeros(width, dtype=bool)
    start, stop = center_block(width, center_lines)
    kept[start:stop] = True

    n_extra = n_keep - center_lines
    if n_extra > 0:
        candidates = np.flatnonzero(~kept)
        sigma = width / 6.0
        weights = np.exp(-((candidates - width // 2) ** 2) / (2.0 * sigma * sigma))
        rng = np.random.default_rng(seed)
        chosen = rng.choice(candidates, size=n_extra, replace=False, p=weights / weights.sum())
        kept[chosen] = True

    return SamplingMask(kept_lines=kept, rate=rate, center_lines=center_lines, seed=seed)


def _as_mask_tensor(mask, dtype) -> torch.Tensor:
    if isinstance(mask, SamplingMask):
        return mask.to_tensor(dtype)
    if isinstance(mask, np.ndarray):
        return torch.from_numpy(mask.astype(np.float32)).to(dtype)
    return mask.to(dtype)


def corrupt_and_undersample(k_full: torch.Tensor, mask, noise_level: float,
                            noise_seed: int = 0) -> torch.Tensor:
    """Add complex white Gaussian noise to the full grid, then zero unsampled lines.

    The per-component noise std is ``noise_level * RMS(|k_full|) / sqrt(2)``,
    so the total complex noise power is ``noise_level**2`` times the mean
    k-space energy.
    """
    if noise_level < 0:
        raise ValueError(f"noise_level must be >= 0, got {noise_level}")
    k = k_full
    if noise_level > 0:
        rms = torch.sqrt(k.pow(2).sum(dim=-3).mean())
        sigma = noise_level * rms / math.sqrt(2.0)
        gen = torch.Generator().manual_seed(noise_seed)
        noise = sigma * torch.randn(k.shape, generator=gen, dtype=k.dtype)
        k = k + noise
    return k * _as_mask_tensor(mask, k.dtype)


def zero_fill(y: torch.Tensor) -> torch.Tensor:
    """Zero-filling reconstruction: plain inverse transform of masked k-space."""
    return ifft2c(y)


def data_consistency(x: torch.Tensor, y: torch.Tensor, mask) -> torch.Tensor:
    """Hard data-consistency projection.

    Replaces the estimate's spectrum with the measured values on sampled
    lines: ifft2c(mask * y + (1 - mask) * fft2c(x)). Idempotent, and exact
    passthrough of measurements.
    """
    m = _as_mask_tensor(mask, x.dtype)
    k_est = fft2c(x)
    return ifft2c(m * y + (1.0 - m) * k_est)


@dataclass
class RecordMeta:
    brain_id: int
    slice_id: int
    split: str  # "train" | "test"
    te: float
    tr: float
    label_seed: int
    phase_seed: int
    mask_seed: int
    noise_seed: int

    @property
    def record_id(self) -> str:
        return f"b{self.brain_id:03d}s{self.slice_id:03d}"


@dataclass
class KSpaceSample:
    """One training record: measurements, mask, ground truth, provenance."""

    y: np.ndarray            # (2, H, W) float32, zero outside sampled lines
    x_full: np.ndarray | None  # (2, H, W) float32; None when not loaded
    labels: np.ndarray       # (H, W) uint8
    mask: SamplingMask
    noise_level: float
    meta: RecordMeta

    @property
    def seg_gt(self) -> np.ndarray:
        """(4, H, W) one-hot ground-truth segmentation."""
        from .phantom import labels_to_onehot

        return labels_to_onehot(self.labels)


def normalize_image(data: np.ndarray) -> np.ndarray:
    """Scale a (2, H, W) complex image by its maximum magnitude."""
    peak = np.hypot(data[0], data[1]).max()
    if peak <= 0:
        raise ValueError("cannot normalize an all-zero image")
    return data / peak


def build_dataset(n_brains: int, slices_per_brain: int, dims=(180, 216),
                  rate: float = 0.3, center_lines: int = 16, noise_level: float = 0.1,
                  seed: int = 0, n_test_brains: int = 0,
                  tissue_table=DEFAULT_TISSUES) -> list[KSpaceSample]:
    """Generate a dataset of under-sampled k-space records.

    ``n_brains`` phantom brains feed the training split, followed by
    ``n_test_brains`` extra brains for the test split, so the two splits
    never share a brain. Every per-slice operation is seeded from
    (seed, purpose, brain_id, slice_id) and the result is bit-reproducible
    on one platform.
    """
    if n_brains < 1 or slices_per_brain < 1 or n_test_brains < 0:
        raise ValueError("brain and slice counts must be positive")
    height, width = dims
    samples = []
    for brain_id in range(n_brains + n_test_brains):
        split = "train" if brain_id < n_brains else "test"
        seq = sample_sequence_params(derive_seed(seed, "sequence", brain_id))
        for slice_id in range(slices_per_brain):
            meta = RecordMeta(
                brain_id=brain_id, slice_id=slice_id, split=split,
                te=seq.TE, tr=seq.TR,
                label_seed=derive_seed(seed, "labels", brain_id, slice_id),
                phase_seed=derive_seed(seed, "phase", brain_id, slice_id),
                mask_seed=derive_seed(seed, "mask", brain_id, slice_id),
                noise_seed=derive_seed(seed, "noise", brain_id, slice_id),
            )
            label_map = generate_label_map(meta.label_seed, height, width,
                                           brain_id=brain_id, slice_id=slice_id)
            image = synthesize_complex_image(label_map, tissue_table, seq, meta.phase_seed)
            x_full = normalize_image(image.data)
            k_full = fft2c(torch.from_numpy(x_full))
            mask = make_cartesian_mask(width, rate, center_lines, meta.mask_seed)
            y = corrupt_and_undersample(k_full, mask, noise_level, meta.noise_seed)
            samples.append(KSpaceSample(
                y=y.numpy().astype(np.float32),
                x_full=x_full.astype(np.float32),
                labels=label_map.labels,
                mask=mask,
                noise_level=noise_level,
                meta=meta,
            ))
    return samples
