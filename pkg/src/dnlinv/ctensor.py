"""Complex arithmetic as paired real tensors.

The engine differentiates real arrays only; a complex quantity is carried
as a (re, im) pair and complex ops are composed from real primitives, so
gradients fall out of the real graph with no special casing. This matches
treating C^n as R^2n, which is what the Gaussian likelihood over separate
real/imaginary parts expects.
"""

from __future__ import annotations

import numpy as np

from . import engine
from .engine import Tensor, fft2c_array, fft2c_pair


class ComplexTensor:
    """A pair of equal-shape real tensors interpreted as re + i*im."""

    __slots__ = ("re", "im")

    def __init__(self, re: Tensor, im: Tensor):
        if not isinstance(re, Tensor) or not isinstance(im, Tensor):
            raise TypeError("ComplexTensor expects engine Tensors")
        if re.data.shape != im.data.shape:
            raise ValueError(f"re/im shape mismatch: {re.data.shape} vs {im.data.shape}")
        self.re = re
        self.im = im

    @classmethod
    def from_numpy(cls, arr, requires_grad: bool = False) -> "ComplexTensor":
        arr = np.asarray(arr)
        return cls(
            Tensor(arr.real.copy(), requires_grad=requires_grad),
            Tensor(arr.imag.copy(), requires_grad=requires_grad),
        )

    def numpy(self) -> np.ndarray:
        """Detach to a plain complex ndarray."""
        return (self.re.data + 1j * self.im.data).astype(engine.complex_dtype(), copy=False)

    @property
    def shape(self):
        return self.re.data.shape

    def __repr__(self):
        return f"ComplexTensor(shape={self.shape})"

    def __add__(self, other):
        other = _as_complex(other)
        return ComplexTensor(self.re + other.re, self.im + other.im)

    def __sub__(self, other):
        other = _as_complex(other)
        return ComplexTensor(self.re - other.re, self.im - other.im)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return ComplexTensor(self.re * other, self.im * other)
        if isinstance(other, Tensor):
            return ComplexTensor(self.re * other, self.im * other)
        other = _as_complex(other)
        return ComplexTensor(
            self.re * other.re - self.im * other.im,
            self.re * other.im + self.im * other.re,
        )

    __rmul__ = __mul__

    def conj(self) -> "ComplexTensor":
        return ComplexTensor(self.re, -self.im)

    def abs2(self) -> Tensor:
        """Elementwise squared magnitude as a real tensor."""
        return self.re * self.re + self.im * self.im

    def sum(self):
        return ComplexTensor(self.re.sum(), self.im.sum())

    def reshape(self, *shape):
        return ComplexTensor(self.re.reshape(*shape), self.im.reshape(*shape))


def _as_complex(x) -> ComplexTensor:
    if isinstance(x, ComplexTensor):
        return x
    if isinstance(x, np.ndarray) and np.iscomplexobj(x):
        return ComplexTensor.from_numpy(x)
    if isinstance(x, Tensor):
        return ComplexTensor(x, Tensor(np.zeros_like(x.data)))
    raise TypeError(f"cannot interpret {type(x).__name__} as complex")


def fft2_centered(x: ComplexTensor, inverse: bool = False) -> ComplexTensor:
    """Centered orthonormal 2-D FFT of a complex tensor (graph-recorded)."""
    stacked = fft2c_pair(x.re, x.im, inverse=inverse)
    return ComplexTensor(stacked[0], stacked[1])


def fft2c(arr: np.ndarray) -> np.ndarray:
    """Centered orthonormal 2-D FFT of a plain ndarray (trailing two axes)."""
    return fft2c_array(arr, inverse=False)


def ifft2c(arr: np.ndarray) -> np.ndarray:
    """Inverse of :func:`fft2c`; also its adjoint, since it is unitary."""
    return fft2c_array(arr, inverse=True)
