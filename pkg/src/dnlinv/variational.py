"""Variational objective for scan-specific reconstruction.

The latent code carries a factorized Gaussian posterior q(z) =
N(mu, diag(sigma^2)) trained by reparameterization; network weights are
regularized by decoupled weight decay with Monte Carlo dropout standing in
for their posterior. Channel noise is modeled by a full covariance
Sigma = L L^T with L lower triangular (diagonal kept positive through exp).

The training loss is the negative evidence lower bound

    loss = -[ (1/M) sum_m ( loglik(y | g(z_m), Sigma) - ||z_m||^2 / 2 )
              + sum_j ( log sigma_j + 1/2 ) ]

with fresh z_m and dropout masks per Monte Carlo sample. Up to constants
in q the bracket is the usual data fit minus KL(q(z) || N(0, I)).
"""

from __future__ import annotations

import numpy as np

from .ctensor import ComplexTensor
from .engine import NonFiniteError, Tensor, constant, exp, tri_solve

SIGMA_MIN = 1e-6
SIGMA_MAX = 1e3

LOG_2PI = float(np.log(2.0 * np.pi))
LOG_PI = float(np.log(np.pi))


class VariationalState:
    """Learnable posterior parameters: latent mean/std and noise Cholesky."""

    def __init__(self, mu: Tensor, log_sigma: Tensor, chol_raw: Tensor | None):
        self.mu = mu
        self.log_sigma = log_sigma
        self.chol_raw = chol_raw

    @classmethod
    def initialize(
        cls,
        latent_shape,
        n_channels: int,
        sigma0: float = 0.01,
        seed: int = 0,
        latent_sigma0: float = 0.1,
    ) -> "VariationalState":
        """Standard-normal latent mean, constant latent std, Sigma = sigma0^2 I."""
        if sigma0 <= 0:
            raise ValueError("initial noise scale must be positive")
        rng = np.random.default_rng(seed)
        mu = Tensor(rng.standard_normal(latent_shape), requires_grad=True)
        log_sigma = Tensor(np.full(latent_shape, np.log(latent_sigma0)), requires_grad=True)
        chol_raw = None
        if n_channels > 0:
            raw = np.zeros((n_channels, n_channels))
            np.fill_diagonal(raw, np.log(sigma0))
            chol_raw = Tensor(raw, requires_grad=True)
        return cls(mu, log_sigma, chol_raw)

    def parameters(self) -> list[Tensor]:
        ps = [self.mu, self.log_sigma]
        if self.chol_raw is not None:
            ps.append(self.chol_raw)
        return ps

    def clamp(self) -> None:
        """Project log sigma back into its allowed band (done after steps)."""
        np.clip(self.log_sigma.data, np.log(SIGMA_MIN), np.log(SIGMA_MAX), out=self.log_sigma.data)

    def noise_covariance(self) -> np.ndarray:
        """Current Sigma = L L^T as a plain array."""
        if self.chol_raw is None:
            raise ValueError("state has no noise model")
        low = chol_factor(self.chol_raw).data
        return low @ low.T

    @property
    def latent_size(self) -> int:
        return self.mu.data.size


def sample_z(vs: VariationalState, rng) -> tuple[Tensor, np.ndarray]:
    """Reparameterized draw z = mu + sigma * eps; returns (z, eps)."""
    if isinstance(rng, (int, np.integer)):
        rng = np.random.default_rng(int(rng))
    eps = rng.standard_normal(vs.mu.data.shape)
    z = vs.mu + exp(vs.log_sigma) * constant(eps)
    return z, eps


def chol_factor(chol_raw: Tensor) -> Tensor:
    """Lower-triangular L from the raw matrix; diagonal through exp."""
    n = chol_raw.data.shape[0]
    strict = constant(np.tril(np.ones((n, n)), -1))
    diag = constant(np.eye(n))
    return chol_raw * strict + exp(chol_raw * diag) * diag


def chol_logdet(chol_raw: Tensor) -> Tensor:
    """log det(L L^T) = 2 * sum of raw diagonal entries."""
    n = chol_raw.data.shape[0]
    return (chol_raw * constant(np.eye(n))).sum() * 2.0


def gaussian_loglik(y: np.ndarray, pred, chol_raw: Tensor, mask=None):
    """Correlated-channel Gaussian log-likelihood of residuals y - pred.

    Complex ``y`` (n_channels, ...): per sampled location k the density is
    circular complex Gaussian with E[n n^H] = Sigma, contributing
    -n_c log pi - log det Sigma - r_k^H Sigma^{-1} r_k; ``pred`` is a
    ComplexTensor and ``mask`` restricts the sum to sampled locations.

    Real ``y`` (n_channels, ...): ordinary Gaussian, contributing
    -(n_c/2) log 2pi - log det Sigma / 2 - r_k^T Sigma^{-1} r_k / 2.

    Sigma is real SPD, so the complex quadratic form splits into triangular
    solves on the real and imaginary residual parts. Returns (scalar
    Tensor, parts dict with plain-float quad/logdet/const entries).
    """
    from .ctensor import ComplexTensor

    y = np.asarray(y)
    n = y.shape[0]
    if chol_raw.data.shape != (n, n):
        raise ValueError(f"noise factor is {chol_raw.data.shape}, data has {n} channels")
    low = chol_factor(chol_raw)
    logdet = chol_logdet(chol_raw)

    if np.iscomplexobj(y):
        if not isinstance(pred, ComplexTensor):
            raise TypeError("complex data needs a ComplexTensor prediction")
        if mask is not None:
            marr = np.asarray(getattr(mask, "array", mask))
            k_count = int(marr.sum()) * (y.size // y.shape[0] // marr.size)
            mflat = constant(marr.astype(float).reshape(-1))
        else:
            k_count = y.size // y.shape[0]
            mflat = None
        res_re = pred.re.reshape(n, -1) - constant(y.real.reshape(n, -1))
        res_im = pred.im.reshape(n, -1) - constant(y.imag.reshape(n, -1))
        if mflat is not None:
            res_re = res_re * mflat
            res_im = res_im * mflat
        w_re = tri_solve(low, res_re)
        w_im = tri_solve(low, res_im)
        quad = (w_re * w_re).sum() + (w_im * w_im).sum()
        const = k_count * n * LOG_PI
        ll = -(quad + logdet * float(k_count)) - const
    else:
        if isinstance(pred, ComplexTensor):
            raise TypeError("real data needs a real prediction")
        res = (pred - constant(y)).reshape(n, -1)
        k_count = res.data.shape[1]
        w = tri_solve(low, res)
        quad = (w * w).sum() * 0.5
        const = 0.5 * k_count * n * LOG_2PI
        ll = -(quad + logdet * (0.5 * k_count)) - const

    parts = {
        "quad": float(quad.data),
        "logdet": float(logdet.data) * k_count,
        "const": const,
        "n_locations": k_count,
    }
    return ll, parts


class MulticoilKspaceData:
    """Adapter: undersampled multicoil k-space under a fixed forward model.

    With ``use_model_maps`` the model's coil maps act as known sensitivity
    profiles and the generator supplies the image alone; otherwise the
    generator's coil head provides the maps (calibrationless operation).
    """

    def __init__(self, kspace: np.ndarray, model, use_model_maps: bool = False):
        kspace = np.asarray(kspace)
        if kspace.shape != (model.n_coils, *model.image_shape):
            raise ValueError(f"k-space shape {kspace.shape} does not match model")
        self.y = kspace
        self.model = model
        self.n_channels = model.n_coils
        self.n_locations = int(model.mask.sum())
        self.use_model_maps = bool(use_model_maps)
        self._maps_ct = None

    def _known_maps(self):
        if self._maps_ct is None:
            maps = np.asarray(self.model.maps, dtype=complex)
            self._maps_ct = ComplexTensor(constant(maps.real), constant(maps.imag))
        return self._maps_ct

    def predict(self, output):
        """Masked k-space prediction from generator output (image, coils)."""
        image, coils = output
        if coils is None:
            if not self.use_model_maps:
                raise ValueError("multicoil data requires a generator coil head or use_model_maps")
            coils = self._known_maps()
        return self.model.forward_coil_images(coils * image)

    def expand(self, image: np.ndarray) -> np.ndarray:
        """Coil images implied by a plain image under the known maps."""
        return np.asarray(self.model.maps) * image

    def loglik(self, output, chol_raw: Tensor):
        return gaussian_loglik(self.y, self.predict(output), chol_raw, mask=self.model.mask)

    def mse(self, output) -> Tensor:
        pred = self.predict(output)
        res_re = pred.re - constant(self.y.real)
        res_im = pred.im - constant(self.y.imag)
        m = constant(self.model.mask.astype(float))
        return ((res_re * m) ** 2).sum() * 0.5 + ((res_im * m) ** 2).sum() * 0.5

    def residual_array(self, output) -> np.ndarray:
        """Masked complex residual as a plain array (no graph)."""
        pred = self.predict(output)
        res = pred.re.data + 1j * pred.im.data - self.y
        return res * self.model.mask

    def combine(self, coil_images: np.ndarray) -> np.ndarray:
        from .metrics import rss_combine

        return rss_combine(coil_images)

    def sample_rms(self) -> float:
        """RMS magnitude per sampled complex k-space entry."""
        n = self.n_locations * self.n_channels
        return float(np.sqrt(np.sum(np.abs(self.y) ** 2) / n)) if n else 0.0

    def scaled(self, factor: float) -> "MulticoilKspaceData":
        return MulticoilKspaceData(self.y * factor, self.model, use_model_maps=self.use_model_maps)


class RepeatedSignalData:
    """Adapter: repeated noisy measurements of one real 1-D signal.

    The sample axis plays the channel role, so the noise model can learn a
    per-sample variance (and correlations, though none exist by design).
    """

    def __init__(self, samples: np.ndarray):
        samples = np.asarray(samples, dtype=float)
        if samples.ndim != 2:
            raise ValueError(f"expected (n_samples, length), got {samples.shape}")
        self.y = samples
        self.n_channels = samples.shape[0]
        self.n_locations = samples.shape[1]

    def predict(self, output):
        image, _ = output
        return image

    def loglik(self, output, chol_raw: Tensor):
        return gaussian_loglik(self.y, self.predict(output), chol_raw)

    def mse(self, output) -> Tensor:
        res = self.predict(output) - constant(self.y)
        return (res * res).sum() * 0.5

    def combine(self, signal: np.ndarray) -> np.ndarray:
        return np.abs(signal) if np.iscomplexobj(signal) else signal

    def sample_rms(self) -> float:
        return float(np.sqrt(np.mean(self.y**2)))

    def scaled(self, factor: float) -> "RepeatedSignalData":
        return RepeatedSignalData(self.y * factor)


def elbo(data, forward_fn, vs: VariationalState, m_samples: int, seeds, dropout_fn=None):
    """Monte Carlo negative-ELBO loss.

    ``forward_fn(z, dropout_mask)`` maps a latent Tensor to whatever
    ``data.loglik`` consumes; ``dropout_fn(rng)`` draws fresh masks (None
    disables dropout). ``seeds`` is a SeedSequence, split into one child
    per sample, or an explicit list of per-sample SeedSequences, so an
    M=2 evaluation equals the mean of the two M=1 evaluations with the
    same pair of children.

    Returns (loss Tensor, parts dict). Parts carry plain floats: fidelity
    (average quadratic data term), logdet, const, latent_prior, entropy.
    """
    if m_samples < 1:
        raise ValueError("need at least one Monte Carlo sample")
    if isinstance(seeds, np.random.SeedSequence):
        kids = seeds.spawn(m_samples)
    else:
        kids = list(seeds)
        if len(kids) < m_samples:
            raise ValueError(f"need {m_samples} per-sample seeds, got {len(kids)}")
        kids = kids[:m_samples]

    total = None
    fid = prior_mean = logdet = const = 0.0
    for child in kids:
        rng = np.random.default_rng(child)
        z, _ = sample_z(vs, rng)
        masks = dropout_fn(rng) if dropout_fn is not None else None
        out = forward_fn(z, masks)
        ll, parts = data.loglik(out, vs.chol_raw)
        prior = (z * z).sum() * 0.5
        obj = ll - prior
        total = obj if total is None else total + obj
        fid += parts["quad"] / m_samples
        logdet = parts["logdet"]
        const = parts["const"]
        prior_mean += float(prior.data) / m_samples

    entropy = vs.log_sigma.sum() + 0.5 * float(vs.latent_size)
    loss = -(total * (1.0 / m_samples) + entropy)

    if not np.isfinite(float(loss.data)):
        bad = {"fidelity": fid, "logdet": logdet, "latent_prior": prior_mean}
        names = [k for k, v in bad.items() if not np.isfinite(v)] or ["loss"]
        raise NonFiniteError(f"non-finite ELBO component(s): {', '.join(names)}")

    parts = {
        "loss": float(loss.data),
        "fidelity": fid,
        "logdet": logdet,
        "const": const,
        "latent_prior": prior_mean,
        "entropy": float(entropy.data),
    }
    return loss, parts
