"""Upsampling convolutional generator with image and coil-map heads.

A low-resolution latent tensor is refined by repeated [nearest 2x upsample,
same-padded conv, activation, channel dropout] stages, then two 1x1 heads
read out a complex image (2 channels, or 1 for a real 1-D signal) and
optionally 2*n_coils channels of complex coil sensitivities. Both heads
share the whole trunk, so image and coil estimates are coupled through
every feature map.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .engine import Tensor, conv1d, conv2d, dropout_apply, relu, upsample2x

ACTIVATIONS = ("relu", "linear")


@dataclass(frozen=True)
class GeneratorConfig:
    """Architecture knobs; shape is the output grid, (ny, nx) or (length,)."""

    shape: tuple
    n_coils: int = 0
    n_scales: int = 4
    latent_channels: int = 128
    stage_channels: int | tuple = 64
    keep_prob: float = 0.95
    activation: str = "relu"
    complex_image: bool = True

    def __post_init__(self):
        shape = tuple(int(s) for s in self.shape)
        object.__setattr__(self, "shape", shape)
        if len(shape) not in (1, 2):
            raise ValueError(f"output shape must be 1-D or 2-D, got {shape}")
        if self.n_scales < 1:
            raise ValueError("need at least one stage")
        f = 2**self.n_scales
        if any(s % f or s < f for s in shape):
            raise ValueError(f"extents {shape} must be divisible by 2^{self.n_scales}")
        if not 0.0 < self.keep_prob <= 1.0:
            raise ValueError(f"keep_prob must be in (0, 1], got {self.keep_prob}")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"activation must be one of {ACTIVATIONS}")
        if self.n_coils < 0:
            raise ValueError("n_coils must be non-negative")
        chans = self.stage_channels
        chans = tuple(chans) if isinstance(chans, (tuple, list)) else (int(chans),) * self.n_scales
        if len(chans) != self.n_scales or any(c < 1 for c in chans):
            raise ValueError(f"need {self.n_scales} positive stage widths, got {chans}")
        object.__setattr__(self, "stage_channels", chans)

    @property
    def ndim(self) -> int:
        return len(self.shape)

    @property
    def latent_shape(self) -> tuple:
        f = 2**self.n_scales
        return (self.latent_channels, *[s // f for s in self.shape])

    @property
    def image_channels(self) -> int:
        return 2 if self.complex_image else 1


class GeneratorState:
    """Config plus named parameter tensors (weights require grad)."""

    def __init__(self, config: GeneratorConfig, params: dict):
        self.config = config
        self.params = params

    def parameters(self) -> list[Tensor]:
        return list(self.params.values())

    @property
    def n_params(self) -> int:
        return sum(p.data.size for p in self.params.values())

    def __repr__(self):
        return f"GeneratorState(shape={self.config.shape}, n_params={self.n_params})"


def build_generator(config: GeneratorConfig, seed: int = 0) -> GeneratorState:
    """Initialize parameters: fan-in-scaled Gaussian weights, zero biases."""
    rng = np.random.default_rng(seed)
    k = 3
    params: dict[str, Tensor] = {}

    def conv_param(name, c_out, c_in, ksize):
        kernel = (ksize, ksize) if config.ndim == 2 else (ksize,)
        fan_in = c_in * int(np.prod(kernel))
        std = np.sqrt(2.0 / fan_in)
        params[f"{name}.weight"] = Tensor(rng.normal(0.0, std, (c_out, c_in, *kernel)), requires_grad=True)
        params[f"{name}.bias"] = Tensor(np.zeros(c_out), requires_grad=True)

    c_in = config.latent_channels
    for i, c_out in enumerate(config.stage_channels):
        conv_param(f"stage{i}", c_out, c_in, k)
        c_in = c_out
    conv_param("image_head", config.image_channels, c_in, 1)
    if config.n_coils > 0:
        conv_param("coil_head", 2 * config.n_coils, c_in, 1)
    return GeneratorState(config, params)


def sample_dropout_mask(state: GeneratorState, rng) -> list[np.ndarray]:
    """Per-stage channel keep masks, scaled by 1/keep_prob; all ones at p=1."""
    cfg = state.config
    if isinstance(rng, (int, np.integer)):
        rng = np.random.default_rng(int(rng))
    tail = (1, 1) if cfg.ndim == 2 else (1,)
    masks = []
    for c in cfg.stage_channels:
        if cfg.keep_prob >= 1.0:
            masks.append(np.ones((c, *tail)))
        else:
            keep = rng.random((c, *tail)) < cfg.keep_prob
            masks.append(keep.astype(float) / cfg.keep_prob)
    return masks


def generate(state: GeneratorState, z: Tensor, dropout_mask=None, train: bool = False):
    """Run the generator on latent z.

    Returns (image, coils): image is a ComplexTensor (or real Tensor when
    complex_image is off), coils a ComplexTensor of shape (n_coils, ...) or
    None when the config has no coil head. With train=True and keep_prob <
    1 a dropout_mask from :func:`sample_dropout_mask` is required; eval
    forwards may also pass masks to draw Monte Carlo dropout samples.
    """
    from .ctensor import ComplexTensor

    cfg = state.config
    if tuple(z.data.shape) != cfg.latent_shape:
        raise ValueError(f"latent shape {z.data.shape} does not match {cfg.latent_shape}")
    use_dropout = dropout_mask is not None
    if train and cfg.keep_prob < 1.0 and not use_dropout:
        raise ValueError("training with keep_prob < 1 requires a dropout mask")
    if use_dropout and len(dropout_mask) != cfg.n_scales:
        raise ValueError(f"expected {cfg.n_scales} dropout masks, got {len(dropout_mask)}")

    conv = conv2d if cfg.ndim == 2 else conv1d
    h = z
    for i in range(cfg.n_scales):
        h = upsample2x(h)
        h = conv(h, state.params[f"stage{i}.weight"], state.params[f"stage{i}.bias"])
        if cfg.activation == "relu":
            h = relu(h)
        if use_dropout:
            h = dropout_apply(h, dropout_mask[i])

    img = conv(h, state.params["image_head.weight"], state.params["image_head.bias"])
    if cfg.complex_image:
        image = ComplexTensor(img[0], img[1])
    else:
        image = img[0]

    coils = None
    if cfg.n_coils > 0:
        nc = cfg.n_coils
        out = conv(h, state.params["coil_head.weight"], state.params["coil_head.bias"])
        coils = ComplexTensor(out[:nc], out[nc:])
    return image, coils
