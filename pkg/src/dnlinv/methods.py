"""Named inference strategies over one shared generator architecture.

Every entry differs only in how inference runs (loss, latent handling,
dropout, noise model); the network, initialization, and optimizer are
identical, so comparisons between them isolate the inference choices.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

LOSSES = ("mse", "elbo")
Z_MODES = ("fixed", "prior", "variational")


@dataclass(frozen=True)
class InferenceMethod:
    """How to fit the generator to one dataset.

    loss:        'mse' for plain least squares, 'elbo' for the Monte Carlo
                 variational objective with a learned latent posterior.
    z_mode:      'fixed' (one frozen draw), 'prior' (fresh N(0,1) draw per
                 loss sample), or 'variational' (reparameterized q(z)).
    mc_dropout:  sample dropout masks during training and output averaging.
    activation:  generator nonlinearity; 'linear' removes it.
    learn_sigma: optimize the noise covariance factor (ELBO only).
    """

    name: str
    loss: str
    z_mode: str
    mc_dropout: bool
    activation: str = "relu"
    learn_sigma: bool = True
    description: str = ""

    def __post_init__(self):
        if self.loss not in LOSSES:
            raise ValueError(f"loss must be one of {LOSSES}, got {self.loss!r}")
        if self.z_mode not in Z_MODES:
            raise ValueError(f"z_mode must be one of {Z_MODES}, got {self.z_mode!r}")
        if self.loss == "elbo" and self.z_mode != "variational":
            raise ValueError("the ELBO loss requires the variational latent mode")
        if self.loss == "mse" and self.learn_sigma:
            object.__setattr__(self, "learn_sigma", False)


_ALL = [
    InferenceMethod(
        "dip",
        loss="mse",
        z_mode="fixed",
        mc_dropout=False,
        description="untrained-network least squares on a frozen latent",
    ),
    InferenceMethod(
        "dip_mc_z",
        loss="mse",
        z_mode="prior",
        mc_dropout=False,
        description="least squares with a fresh latent draw per loss sample",
    ),
    InferenceMethod(
        "dip_mc_dropout",
        loss="mse",
        z_mode="fixed",
        mc_dropout=True,
        description="least squares with Monte Carlo dropout",
    ),
    InferenceMethod(
        "dip_mc_z_mc_dropout",
        loss="mse",
        z_mode="prior",
        mc_dropout=True,
        description="least squares with both latent resampling and dropout",
    ),
    InferenceMethod(
        "dnlinv",
        loss="elbo",
        z_mode="variational",
        mc_dropout=True,
        description="variational joint image/coil inference with learned noise",
    ),
    InferenceMethod(
        "dnlinv_fixed_sigma",
        loss="elbo",
        z_mode="variational",
        mc_dropout=True,
        learn_sigma=False,
        description="variational inference with the noise covariance frozen at init",
    ),
    InferenceMethod(
        "dnlinv_linear",
        loss="elbo",
        z_mode="variational",
        mc_dropout=True,
        activation="linear",
        description="variational inference through a linear generator",
    ),
]

METHODS: dict[str, InferenceMethod] = {m.name: m for m in _ALL}


def get_method(name: str) -> InferenceMethod:
    try:
        return METHODS[name]
    except KeyError:
        raise KeyError(f"unknown method {name!r}; choose from {sorted(METHODS)}") from None


def run_method(method, data, gen_cfg, opt_cfg, ground_truth=None, **kwargs):
    """Fit ``data`` with a method given by name or descriptor."""
    from .optim import run_reconstruction

    if isinstance(method, str):
        method = get_method(method)
    return run_reconstruction(data, gen_cfg, opt_cfg, method=method, ground_truth=ground_truth, **kwargs)


def mle_mean(samples: np.ndarray) -> np.ndarray:
    """Pointwise sample mean: the maximum-likelihood estimate under iid
    Gaussian noise when repeated measurements of the same signal exist."""
    samples = np.asarray(samples)
    if samples.ndim < 2:
        raise ValueError("need a leading sample axis")
    return samples.mean(axis=0)
