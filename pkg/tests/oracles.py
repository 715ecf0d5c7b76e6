"""Independent reference implementations shared by unit and acceptance tests.

Everything here is deliberately brute force and free of the package's own
numerics so it can serve as the second route in dual-route checks.
"""

import numpy as np


def centered_dft_matrix(n: int) -> np.ndarray:
    """Dense unitary DFT matrix with the zero frequency at index n//2."""
    k = np.arange(n) - n // 2
    x = np.arange(n) - n // 2
    return np.exp(-2j * np.pi * np.outer(k, x) / n) / np.sqrt(n)


def centered_dft2(z: np.ndarray, inverse: bool = False) -> np.ndarray:
    """O(N^2) centered orthonormal 2-D DFT of the trailing two axes."""
    wx = centered_dft_matrix(z.shape[-2])
    wy = centered_dft_matrix(z.shape[-1])
    if inverse:
        wx, wy = wx.conj().T, wy.conj().T
    return np.einsum("ku,...uv,vl->...kl", wx, z, wy.T)


def complex_dot(a: np.ndarray, b: np.ndarray) -> complex:
    """<a, b> with conjugation on the first argument."""
    return complex(np.vdot(a, b))


def rel_err(got, want) -> float:
    got = np.asarray(got)
    want = np.asarray(want)
    denom = np.linalg.norm(want.ravel())
    if denom == 0:
        return float(np.linalg.norm(got.ravel()))
    return float(np.linalg.norm((got - want).ravel()) / denom)


def gaussian_nll_complex(resid: np.ndarray, cov: np.ndarray) -> float:
    """Direct evaluation of the complex Gaussian log-likelihood.

    resid: (n_coils, k) complex residuals at sampled locations.
    cov: (n_coils, n_coils) real SPD covariance with E[n n^H] = cov.
    Returns sum_k [-n_c log pi - log det cov - r_k^H cov^{-1} r_k].
    """
    n_c, k = resid.shape
    sign, logdet = np.linalg.slogdet(cov)
    assert sign > 0
    inv = np.linalg.inv(cov)
    quad = float(np.real(np.einsum("ik,ij,jk->", resid.conj(), inv, resid)))
    return -k * n_c * np.log(np.pi) - k * logdet - quad
