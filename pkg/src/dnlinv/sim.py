"""Synthetic data: phantom rendering, coil sensitivities, noisy k-space.

Coordinates follow array order: axis 0 is the row (phase-encode) direction,
axis 1 the column direction, and the grid spans [-1, 1] in both.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .ctensor import fft2c

# (amplitude, half-axis a, half-axis b, center x, center y, angle deg)
# High-contrast variant of the classic ten-ellipse head phantom.
MODIFIED_SHEPP_LOGAN_ELLIPSES = (
    (1.0, 0.69, 0.92, 0.0, 0.0, 0.0),
    (-0.8, 0.6624, 0.874, 0.0, -0.0184, 0.0),
    (-0.2, 0.11, 0.31, 0.22, 0.0, -18.0),
    (-0.2, 0.16, 0.41, -0.22, 0.0, 18.0),
    (0.1, 0.21, 0.25, 0.0, 0.35, 0.0),
    (0.1, 0.046, 0.046, 0.0, 0.1, 0.0),
    (0.1, 0.046, 0.046, 0.0, -0.1, 0.0),
    (0.1, 0.046, 0.023, -0.08, -0.605, 0.0),
    (0.1, 0.023, 0.023, 0.0, -0.606, 0.0),
    (0.1, 0.023, 0.046, 0.06, -0.605, 0.0),
)


@dataclass(frozen=True)
class PhantomSpec:
    """Rendering recipe: grid size, peak intensity, ellipse table."""

    shape: tuple = (64, 64)
    peak: float = 1.0
    ellipses: tuple = field(default_factory=lambda: MODIFIED_SHEPP_LOGAN_ELLIPSES)

    def __post_init__(self):
        if len(self.shape) != 2 or min(self.shape) < 4:
            raise ValueError(f"phantom shape must be 2-D and at least 4x4, got {self.shape}")
        if self.peak <= 0:
            raise ValueError("peak intensity must be positive")


def shepp_logan(spec=None) -> np.ndarray:
    """Render the ellipse phantom on a symmetric [-1, 1] grid.

    Accepts a PhantomSpec or a plain (nx, ny) shape. Intensities are
    ellipse sums clipped at zero, then peak-normalized to ``spec.peak``.
    """
    if spec is None:
        spec = PhantomSpec()
    elif not isinstance(spec, PhantomSpec):
        spec = PhantomSpec(shape=tuple(spec))
    nx, ny = spec.shape
    x = np.linspace(-1.0, 1.0, nx)[:, None]
    y = np.linspace(-1.0, 1.0, ny)[None, :]
    img = np.zeros((nx, ny))
    for amp, a, b, x0, y0, ang in spec.ellipses:
        t = np.deg2rad(ang)
        ct, st = np.cos(t), np.sin(t)
        xr = (x - x0) * ct + (y - y0) * st
        yr = -(x - x0) * st + (y - y0) * ct
        img += amp * ((xr / a) ** 2 + (yr / b) ** 2 <= 1.0)
    img = np.clip(img, 0.0, None)
    m = img.max()
    if m > 0:
        img *= spec.peak / m
    return img


@dataclass(frozen=True)
class CoilGeometry:
    """Ring of loop coils around the FOV.

    radius is in units of half the FOV (1.5 puts the ring outside the
    image); phases advance uniformly around the ring.
    """

    n_coils: int = 8
    radius: float = 1.5
    normalize: bool = False

    def __post_init__(self):
        if self.n_coils < 1:
            raise ValueError("need at least one coil")
        if self.radius <= 0:
            raise ValueError("coil ring radius must be positive")


def birdcage_maps(geometry, shape) -> np.ndarray:
    """Analytic smooth sensitivities for a ring of coils, (n_coils, nx, ny).

    Each coil sits on a circle of ``radius`` half-FOVs around the image
    center. Magnitude falls off as 1/distance (floored at one pixel) and
    the phase is the azimuthal angle about the coil center plus a uniform
    per-coil offset. With ``normalize=True`` the maps are divided by their
    RSS so the combined sensitivity is 1 everywhere.
    """
    if isinstance(geometry, int):
        geometry = CoilGeometry(n_coils=geometry)
    nx, ny = shape
    cx, cy = (nx - 1) / 2.0, (ny - 1) / 2.0
    ring = geometry.radius * min(nx, ny) / 2.0
    xs = np.arange(nx)[:, None]
    ys = np.arange(ny)[None, :]
    maps = np.empty((geometry.n_coils, nx, ny), dtype=np.complex128)
    for c in range(geometry.n_coils):
        phi = 2.0 * np.pi * c / geometry.n_coils
        px = cx + ring * np.cos(phi)
        py = cy + ring * np.sin(phi)
        d = np.hypot(xs - px, ys - py)
        d = np.maximum(d, 1.0)
        ang = np.arctan2(ys - py, xs - px)
        maps[c] = np.exp(1j * (ang + phi)) / d
    if geometry.normalize:
        rss = np.sqrt((np.abs(maps) ** 2).sum(axis=0))
        maps /= rss
    return maps


def simulate_kspace(image, maps, mask, sigma: float = 0.0, coil_cov=None, seed: int = 0):
    """Noisy undersampled multicoil k-space of a known image.

    y_c = mask * F(maps_c * image) + mask * n_c, with n_c circularly
    symmetric complex Gaussian noise. ``sigma`` gives i.i.d. noise of
    standard deviation sigma per real component per coil; ``coil_cov``
    (n_coils x n_coils, SPD) instead draws correlated coil noise with that
    per-component covariance, so E[n n^H] = 2 * coil_cov.

    Returns the (n_coils, nx, ny) complex k-space with zeros off the mask.
    """
    image = np.asarray(image)
    maps = np.asarray(maps)
    marr = np.asarray(getattr(mask, "array", mask)).astype(np.float64)
    if maps.ndim != 3 or maps.shape[1:] != image.shape:
        raise ValueError(f"maps shape {maps.shape} does not match image {image.shape}")
    if marr.shape != image.shape:
        raise ValueError(f"mask shape {marr.shape} does not match image {image.shape}")
    ksp = fft2c(maps * image)
    rng = np.random.default_rng(seed)
    shape = ksp.shape
    if coil_cov is not None:
        coil_cov = np.asarray(coil_cov, dtype=np.float64)
        if coil_cov.shape != (maps.shape[0], maps.shape[0]):
            raise ValueError(f"coil_cov must be ({maps.shape[0]}, {maps.shape[0]})")
        if not np.allclose(coil_cov, coil_cov.T, atol=1e-12):
            raise ValueError("coil_cov must be symmetric")
        try:
            chol = np.linalg.cholesky(coil_cov)
        except np.linalg.LinAlgError as e:
            raise ValueError("coil_cov must be positive definite") from e
        e_re = rng.standard_normal(shape)
        e_im = rng.standard_normal(shape)
        noise = np.einsum("ij,j...->i...", chol, e_re) + 1j * np.einsum("ij,j...->i...", chol, e_im)
    elif sigma > 0:
        noise = sigma * (rng.standard_normal(shape) + 1j * rng.standard_normal(shape))
    else:
        noise = 0.0
    return (ksp + noise) * marr


def make_1d_signal(length: int = 128, sigma: float = 0.1, n_samples: int = 8, seed: int = 0):
    """Fixed smooth 1-D test signal plus repeated noisy measurements.

    The clean signal is a sum of three Gaussian bumps and a slow sinusoid,
    min-max normalized to [0, 1]. Returns (clean (length,), noisy
    (n_samples, length)) with i.i.d. N(0, sigma^2) noise per sample.
    """
    if length < 8:
        raise ValueError("signal length must be at least 8")
    if n_samples < 1:
        raise ValueError("need at least one noisy sample")
    t = np.linspace(0.0, 1.0, length)
    clean = (
        1.0 * np.exp(-((t - 0.25) ** 2) / (2 * 0.03**2))
        + 0.8 * np.exp(-((t - 0.55) ** 2) / (2 * 0.08**2))
        + 0.6 * np.exp(-((t - 0.85) ** 2) / (2 * 0.02**2))
        + 0.25 * np.sin(2 * np.pi * 1.5 * t)
    )
    clean = (clean - clean.min()) / (clean.max() - clean.min())
    rng = np.random.default_rng(seed)
    noisy = clean[None, :] + rng.normal(0.0, sigma, (n_samples, length))
    return clean, noisy
