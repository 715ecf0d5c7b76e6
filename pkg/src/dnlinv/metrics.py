"""Image quality metrics: RSS combination, PSNR, SSIM, error maps."""

from __future__ import annotations

import numpy as np
from scipy.ndimage import uniform_filter


def _as_real(img) -> np.ndarray:
    img = np.asarray(img)
    if np.iscomplexobj(img):
        img = np.abs(img)
    return img.astype(np.float64, copy=False)


def rss_combine(coil_images: np.ndarray) -> np.ndarray:
    """Root-sum-of-squares combination over the leading (coil) axis."""
    coil_images = np.asarray(coil_images)
    return np.sqrt(np.sum(np.abs(coil_images) ** 2, axis=0))


def psnr(img: np.ndarray, ref: np.ndarray) -> float:
    """Peak signal-to-noise ratio in dB, peak taken from the reference.

    Identical inputs give +inf. Complex inputs are compared by magnitude.
    """
    img, ref = _as_real(img), _as_real(ref)
    if img.shape != ref.shape:
        raise ValueError(f"shape mismatch: {img.shape} vs {ref.shape}")
    mse = float(np.mean((img - ref) ** 2))
    if mse == 0.0:
        return float("inf")
    peak = float(ref.max())
    return 20.0 * np.log10(peak) - 10.0 * np.log10(mse)


def ssim(img: np.ndarray, ref: np.ndarray, win_size: int = 7, k1: float = 0.01, k2: float = 0.03) -> float:
    """Mean structural similarity with a uniform window.

    Local means/variances use a win_size box filter with sample-covariance
    normalization, the data range is the reference maximum, and the mean is
    taken over the interior (boundary of (win_size-1)//2 pixels cropped).
    """
    img, ref = _as_real(img), _as_real(ref)
    if img.shape != ref.shape:
        raise ValueError(f"shape mismatch: {img.shape} vs {ref.shape}")
    if min(img.shape) < win_size:
        raise ValueError(f"image smaller than SSIM window {win_size}")
    data_range = float(ref.max())
    c1 = (k1 * data_range) ** 2
    c2 = (k2 * data_range) ** 2
    n = win_size**2
    cov_norm = n / (n - 1.0)

    ux = uniform_filter(img, size=win_size)
    uy = uniform_filter(ref, size=win_size)
    uxx = uniform_filter(img * img, size=win_size)
    uyy = uniform_filter(ref * ref, size=win_size)
    uxy = uniform_filter(img * ref, size=win_size)
    vx = cov_norm * (uxx - ux * ux)
    vy = cov_norm * (uyy - uy * uy)
    vxy = cov_norm * (uxy - ux * uy)

    s = ((2 * ux * uy + c1) * (2 * vxy + c2)) / ((ux * ux + uy * uy + c1) * (vx + vy + c2))
    pad = (win_size - 1) // 2
    interior = s[tuple(slice(pad, dim - pad) for dim in s.shape)]
    return float(interior.mean())


def error_map(img: np.ndarray, ref: np.ndarray, gain: float = 3.0) -> np.ndarray:
    """Gain-amplified absolute error, clipped to the reference data range."""
    img, ref = _as_real(img), _as_real(ref)
    return np.clip(gain * np.abs(img - ref), 0.0, float(ref.max()))
