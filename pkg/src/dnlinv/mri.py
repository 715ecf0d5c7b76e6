"""Multicoil Cartesian encoding: forward/adjoint operators, CG-SENSE, g-factor.

The forward operator is y_c = mask * F(maps_c * x) with F the centered
orthonormal 2-D FFT, so the adjoint is x = sum_c conj(maps_c) * F^-1(mask * y_c).
It dispatches on the input type: plain complex ndarrays for classical
reconstruction, ComplexTensor for the differentiable path; both share the
same convention and are pinned against each other in tests.
"""

from __future__ import annotations

import numpy as np

from .ctensor import ComplexTensor, fft2_centered, fft2c, ifft2c
from .engine import constant


class ReconDivergenceError(RuntimeError):
    """Iterative solve moved consistently away from the data."""


class ForwardModel:
    """Fixed coil maps + sampling mask acting on a complex image."""

    def __init__(self, coil_maps: np.ndarray, mask):
        maps = np.asarray(coil_maps)
        if maps.ndim != 3:
            raise ValueError(f"coil maps must be (n_coils, ny, nx), got {maps.shape}")
        marr = np.asarray(getattr(mask, "array", mask))
        if marr.shape != maps.shape[1:]:
            raise ValueError(f"mask shape {marr.shape} does not match maps {maps.shape}")
        self.maps = maps.astype(np.complex128, copy=False)
        self.mask = marr.astype(bool)
        self.n_coils = maps.shape[0]
        self.image_shape = maps.shape[1:]

    def forward(self, x):
        """Masked k-space of an image; ndarray or ComplexTensor in, same out."""
        if isinstance(x, ComplexTensor):
            if x.shape != self.image_shape:
                raise ValueError(f"image shape {x.shape} does not match model {self.image_shape}")
            coil_imgs = ComplexTensor.from_numpy(self.maps) * x
            ksp = fft2_centered(coil_imgs)
            m = constant(self.mask.astype(float))
            return ComplexTensor(ksp.re * m, ksp.im * m)
        x = np.asarray(x)
        if x.shape != self.image_shape:
            raise ValueError(f"image shape {x.shape} does not match model {self.image_shape}")
        return fft2c(self.maps * x) * self.mask

    def forward_coil_images(self, coil_images):
        """Masked k-space of per-coil images (coil head already applied)."""
        if isinstance(coil_images, ComplexTensor):
            ksp = fft2_centered(coil_images)
            m = constant(self.mask.astype(float))
            return ComplexTensor(ksp.re * m, ksp.im * m)
        return fft2c(np.asarray(coil_images)) * self.mask

    def adjoint(self, y: np.ndarray) -> np.ndarray:
        """A^H y = sum_c conj(maps_c) * F^-1(mask * y_c)."""
        y = np.asarray(y)
        if y.shape != (self.n_coils, *self.image_shape):
            raise ValueError(f"k-space shape {y.shape} does not match model")
        return np.sum(np.conj(self.maps) * ifft2c(y * self.mask), axis=0)

    def normal(self, x: np.ndarray) -> np.ndarray:
        return self.adjoint(self.forward(x))


def apply_forward(model: ForwardModel, x):
    return model.forward(x)


def apply_adjoint(model: ForwardModel, y):
    return model.adjoint(y)


def sense_cg_recon(model: ForwardModel, y: np.ndarray, lam: float = 0.0, iters: int = 100, tol: float = 1e-6):
    """Tikhonov-regularized SENSE via conjugate gradients on the normal equations.

    Solves (A^H A + lam I) x = A^H y from x = 0. Stops when the relative
    residual drops below ``tol`` or after ``iters`` iterations; raises
    ReconDivergenceError if the residual norm rises five iterations in a
    row. Returns (x, residual_norms).
    """
    if lam < 0:
        raise ValueError("regularization weight must be non-negative")
    b = model.adjoint(y)
    x = np.zeros_like(b)
    r = b.copy()
    p = r.copy()
    rs = float(np.vdot(r, r).real)
    b_norm = np.sqrt(float(np.vdot(b, b).real))
    if b_norm == 0:
        return x, [0.0]
    history = [np.sqrt(rs) / b_norm]
    bad_steps = 0
    for _ in range(iters):
        ap = model.normal(p) + lam * p
        denom = float(np.vdot(p, ap).real)
        if denom <= 0:
            raise ReconDivergenceError("normal operator lost positive definiteness")
        alpha = rs / denom
        x = x + alpha * p
        r = r - alpha * ap
        rs_new = float(np.vdot(r, r).real)
        rel = np.sqrt(rs_new) / b_norm
        bad_steps = bad_steps + 1 if rel > history[-1] else 0
        history.append(rel)
        if bad_steps >= 5:
            raise ReconDivergenceError(f"residual rose for {bad_steps} consecutive iterations")
        if rel <= tol:
            break
        p = r + (rs_new / rs) * p
        rs = rs_new
    return x, history


def sense_g_factor(coil_maps: np.ndarray, r) -> np.ndarray:
    """Geometry factor map for evenly spaced (integer) undersampling.

    ``r`` is an integer factor along axis 0 or a (r0, r1) pair. Each set of
    pixels aliased together (offsets of extent/r) forms a small linear
    system C^H C; g at pixel j is sqrt([(C^H C)^-1]_jj [C^H C]_jj).
    Singular aliasing sets give +inf.
    """
    maps = np.asarray(coil_maps)
    if maps.ndim != 3:
        raise ValueError(f"coil maps must be (n_coils, ny, nx), got {maps.shape}")
    if isinstance(r, (int, np.integer)):
        r = (int(r), 1)
    r0, r1 = int(r[0]), int(r[1])
    nc, ny, nx = maps.shape
    if r0 < 1 or r1 < 1 or ny % r0 or nx % r1:
        raise ValueError(f"factors {r} must be positive and divide the extents {(ny, nx)}")
    g = np.empty((ny, nx))
    sy, sx = ny // r0, nx // r1
    # E[c, m0, m1] = maps at the aliasing offsets of base pixel (by, bx)
    folded = maps.reshape(nc, r0, sy, r1, sx)
    for by in range(sy):
        for bx in range(sx):
            e = folded[:, :, by, :, bx].reshape(nc, r0 * r1)
            m = e.conj().T @ e
            sv = np.linalg.svd(m, compute_uv=False)
            if sv[-1] <= 1e-12 * sv[0]:
                vals = np.full(r0 * r1, np.inf)
            else:
                diag = m.diagonal().real
                inv_diag = np.linalg.inv(m).diagonal().real
                vals = np.sqrt(np.maximum(inv_diag * diag, 0.0))
            g[by::sy, bx::sx] = vals.reshape(r0, r1)
    return g
