"""Self-supervised Bayesian reconstruction for undersampled multicoil MRI.

Jointly estimates the image and coil sensitivity maps of a single
undersampled scan by fitting a dropout-regularized convolutional generator
under a variational Gaussian-noise likelihood, with classical SENSE and
deep-image-prior baselines, simulation utilities, sampling-mask generators,
metrics, and a small command-line front end.
"""

from .engine import (
    NonFiniteError,
    Tensor,
    check_gradient,
    get_default_dtype,
    no_grad,
    precision,
    record,
    set_default_dtype,
)

__all__ = [
    "Tensor",
    "check_gradient",
    "record",
    "precision",
    "set_default_dtype",
    "get_default_dtype",
    "no_grad",
    "NonFiniteError",
]

__version__ = "0.1.0"
