"""Experiment drivers shared by the command line, tests, and demo scripts.

Each driver assembles a dataset from config dictionaries (see
:mod:`dnlinv.expconfig`), runs the requested inference methods through the
shared reconstruction loop, and returns plain result objects. Nothing here
touches the filesystem; persistence lives in the CLI.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .engine import constant
from .expconfig import ConfigError, default_config
from .generator import GeneratorConfig, build_generator, generate
from .masks import (
    SamplingMask,
    mask_caipirinha,
    mask_even,
    mask_lines_uniform,
    mask_poisson_disk,
)
from .methods import METHODS, get_method, mle_mean, run_method
from .metrics import psnr, rss_combine, ssim
from .mri import ForwardModel, fft2c, sense_cg_recon
from .optim import AdamW, OptimizerConfig, ReconResult, TracePoint
from .sim import CoilGeometry, birdcage_maps, make_1d_signal, shepp_logan, simulate_kspace
from .variational import MulticoilKspaceData, RepeatedSignalData, VariationalState, elbo


@dataclass
class PhantomDataset:
    """Everything the multicoil experiments consume."""

    image: np.ndarray
    maps: np.ndarray
    mask: SamplingMask
    kspace: np.ndarray
    model: ForwardModel
    data: MulticoilKspaceData
    reference: np.ndarray  # RSS of the noiseless coil images


def build_mask(mask_cfg: dict, shape) -> SamplingMask:
    kind = mask_cfg["kind"]
    if kind == "full":
        return SamplingMask(np.ones(shape, bool), kind="full", target_acceleration=1.0)
    if kind == "even":
        return mask_even(shape, mask_cfg["rx"], mask_cfg["ry"])
    if kind == "caipirinha":
        return mask_caipirinha(shape, mask_cfg["rx"], mask_cfg["ry"], shift=mask_cfg["shift"])
    if kind == "poisson":
        calib = int(mask_cfg["calib"])
        return mask_poisson_disk(
            shape,
            mask_cfg["af"],
            seed=mask_cfg["seed"],
            calib=(calib, calib) if calib > 0 else None,
            alpha=mask_cfg["alpha"],
        )
    if kind == "lines":
        return mask_lines_uniform(shape, mask_cfg["af"], seed=mask_cfg["seed"], acs_lines=mask_cfg["calib"])
    raise ConfigError(f"unknown mask kind {kind!r}")


def make_phantom_dataset(phantom_cfg: dict, mask_cfg: dict) -> PhantomDataset:
    shape = tuple(phantom_cfg["shape"])
    if len(shape) != 2:
        raise ConfigError(f"phantom shape must be 2-D, got {shape}")
    image = shepp_logan(shape)
    geometry = CoilGeometry(
        n_coils=phantom_cfg["coils"],
        radius=phantom_cfg["coil_radius"],
        normalize=phantom_cfg["normalize_maps"],
    )
    maps = birdcage_maps(geometry, shape)
    mask = build_mask(mask_cfg, shape)
    kspace = simulate_kspace(image, maps, mask.array, sigma=phantom_cfg["sigma"], seed=phantom_cfg["seed"])
    model = ForwardModel(maps, mask.array)
    data = MulticoilKspaceData(kspace, model)
    reference = rss_combine(maps * image)
    return PhantomDataset(image, maps, mask, kspace, model, data, reference)


def generator_config_from(cfg: dict, shape, n_coils: int, complex_image: bool = True) -> GeneratorConfig:
    g = cfg["generator"]
    return GeneratorConfig(
        shape=tuple(shape),
        n_coils=n_coils,
        n_scales=g["scales"],
        latent_channels=g["latent_channels"],
        stage_channels=g["stage_channels"],
        keep_prob=g["keep_prob"],
        complex_image=complex_image,
    )


def optimizer_config_from(cfg: dict) -> OptimizerConfig:
    o = cfg["optimizer"]
    return OptimizerConfig(
        lr=o["lr"],
        beta1=o["beta1"],
        beta2=o["beta2"],
        eps=o["eps"],
        weight_decay=o["weight_decay"],
        iterations=o["iterations"],
        mc_samples=o["mc_samples"],
        mc_out=o["mc_out"],
        metric_stride=o["metric_stride"],
        seed=o["seed"],
        sigma0_scale=o["sigma0_scale"],
        latent_sigma0=o["latent_sigma0"],
        data_norm=o["data_norm"],
    )


@dataclass
class SenseResult:
    image: np.ndarray  # RSS of implied coil images
    x: np.ndarray  # complex SENSE estimate
    lam: float
    psnr: float | None
    ssim: float | None
    residuals: list


def sense_baseline(ds: PhantomDataset, lam: float = 0.005, iters: int = 100) -> SenseResult:
    """Regularized CG-SENSE with the true maps; the classical anchor."""
    x, hist = sense_cg_recon(ds.model, ds.kspace, lam, iters=iters)
    rec = rss_combine(ds.maps * x)
    return SenseResult(
        image=rec,
        x=x,
        lam=lam,
        psnr=psnr(rec, ds.reference),
        ssim=ssim(rec, ds.reference),
        residuals=hist,
    )


def run_phantom_experiment(
    cfg: dict | None = None,
    methods=("dnlinv", "dip"),
    sense_lambda: float = 0.005,
    ground_truth: bool = True,
    snapshot_iterations=(),
    method_overrides: dict | None = None,
):
    """The evenly-undersampled multicoil phantom benchmark.

    The coil profiles are known in this experiment, for the classical
    baseline and the generative methods alike; the sampling is chosen to
    stress noise amplification, not coil estimation. ``method_overrides``
    maps a method name to optimizer-field replacements (the benchmark runs
    the plain generator far past its peak to expose overfitting, so its
    iteration budget differs). Returns (dataset, sense result,
    {method name: ReconResult}).
    """
    from dataclasses import replace

    cfg = cfg or phantom_experiment_config()
    ds = make_phantom_dataset(cfg["phantom"], cfg["mask"])
    known = cfg["method"]["use_model_maps"]
    data = MulticoilKspaceData(ds.kspace, ds.model, use_model_maps=True) if known else ds.data
    gen_cfg = generator_config_from(cfg, ds.image.shape, 0 if known else ds.model.n_coils)
    opt_cfg = optimizer_config_from(cfg)
    sense = sense_baseline(ds, lam=sense_lambda)
    results = {}
    for name in methods:
        per_method = opt_cfg
        if method_overrides and name in method_overrides:
            per_method = replace(opt_cfg, **method_overrides[name])
        results[name] = run_method(
            name,
            data,
            gen_cfg,
            per_method,
            ground_truth=ds.reference if ground_truth else None,
            snapshot_iterations=snapshot_iterations,
        )
    return ds, sense, results


def phantom_experiment_config() -> dict:
    """Defaults reproducing the evenly-spaced 8-coil 8x phantom setup."""
    cfg = default_config()
    cfg["phantom"].update(shape=(64, 64), coils=8, coil_radius=1.0, normalize_maps=True, sigma=0.01, seed=1)
    cfg["mask"].update(kind="even", rx=8, ry=1)
    cfg["generator"].update(scales=3, latent_channels=64, stage_channels=32, keep_prob=0.95)
    cfg["optimizer"].update(lr=1e-3, iterations=7500, mc_samples=2, mc_out=16, metric_stride=250, seed=7)
    cfg["method"].update(use_model_maps=True)
    return cfg


def denoise1d_config() -> dict:
    cfg = default_config()
    cfg["generator"].update(scales=3, latent_channels=32, stage_channels=32, keep_prob=0.9)
    cfg["optimizer"].update(lr=1e-3, iterations=2000, mc_samples=2, mc_out=16, metric_stride=100, seed=7)
    return cfg


def denoise1d_experiment(
    sigma: float = 0.1,
    n_samples: int = 8,
    length: int = 128,
    cfg: dict | None = None,
    methods=tuple(METHODS),
    signal_seed: int = 0,
):
    """Repeated-measurement 1-D denoising across all inference methods.

    Returns (clean, noisy, {name: ReconResult}, mle estimate).
    """
    cfg = cfg or denoise1d_config()
    clean, noisy = make_1d_signal(length=length, sigma=sigma, n_samples=n_samples, seed=signal_seed)
    data = RepeatedSignalData(noisy)
    gen_cfg = generator_config_from(cfg, (length,), n_coils=0, complex_image=False)
    opt_cfg = optimizer_config_from(cfg)
    results = {}
    for name in methods:
        results[name] = run_method(name, data, gen_cfg, opt_cfg, ground_truth=clean)
    return clean, noisy, results, mle_mean(noisy)


def ablation_config() -> dict:
    cfg = default_config()
    cfg["phantom"].update(shape=(48, 48), coils=6, coil_radius=1.0, normalize_maps=True, sigma=0.01, seed=2)
    cfg["mask"].update(kind="poisson", af=5.0, calib=0, alpha=2.0, seed=3)
    cfg["generator"].update(scales=3, latent_channels=64, stage_channels=32, keep_prob=0.95)
    cfg["optimizer"].update(lr=1e-3, iterations=3000, mc_samples=2, mc_out=16, metric_stride=250, seed=7)
    return cfg


ABLATION_METHODS = ("dnlinv", "dnlinv_linear", "dnlinv_fixed_sigma", "dip")


def ablation_experiment(cfg: dict | None = None, methods=ABLATION_METHODS):
    """Inference ablations on a calibrationless Poisson-disk dataset."""
    cfg = cfg or ablation_config()
    ds = make_phantom_dataset(cfg["phantom"], cfg["mask"])
    gen_cfg = generator_config_from(cfg, ds.image.shape, ds.model.n_coils)
    opt_cfg = optimizer_config_from(cfg)
    results = {name: run_method(name, ds.data, gen_cfg, opt_cfg, ground_truth=ds.reference) for name in methods}
    return ds, results


def noise_recovery_experiment(
    shape=(32, 32),
    n_coils: int = 4,
    noise_cov: np.ndarray | None = None,
    noise_frac: float = 0.1,
    seed: int = 0,
    iterations: int = 2000,
    lr: float = 0.05,
):
    """Learn the coil noise covariance with the generator frozen at the truth.

    The ground truth is a single draw from an untrained generator whose
    weights and latent stay fixed for the whole run, so once correlated
    complex noise is injected into its fully sampled k-space the data
    residual is exactly that noise. Only the Cholesky factor of the noise
    covariance is optimized, which makes its maximum-likelihood target the
    sample covariance of the injected noise. The noise is scaled so its RMS
    is ``noise_frac`` of the clean k-space RMS. Returns (learned covariance,
    sample-covariance oracle, the run result).
    """
    if noise_cov is None:
        idx = np.arange(n_coils)
        noise_cov = 0.3 ** np.abs(idx[:, None] - idx[None, :])

    gen_cfg = GeneratorConfig(
        shape=shape, n_coils=0, n_scales=3, latent_channels=16, stage_channels=16, keep_prob=1.0
    )
    state = build_generator(gen_cfg, seed=seed + 101)
    for p in state.parameters():
        p.requires_grad = False
    zrng = np.random.default_rng(np.random.SeedSequence((seed, 0x7A0E)))
    z0 = zrng.standard_normal(gen_cfg.latent_shape)
    image_ct, _ = generate(state, constant(z0))
    truth = image_ct.re.data + 1j * image_ct.im.data

    maps = birdcage_maps(CoilGeometry(n_coils=n_coils), shape)
    coil_images = maps * truth
    clean_k = fft2c(coil_images)

    signal_rms = np.sqrt(np.mean(np.abs(clean_k) ** 2))
    target_rms = noise_frac * signal_rms
    noise_cov = noise_cov * target_rms**2 / np.mean(np.diag(noise_cov))
    low = np.linalg.cholesky(noise_cov / 2)
    nrng = np.random.default_rng(np.random.SeedSequence((seed, 0xD07A)))
    flat_shape = (n_coils, int(np.prod(shape)))
    noise = (low @ nrng.standard_normal(flat_shape) + 1j * (low @ nrng.standard_normal(flat_shape))).reshape(
        n_coils, *shape
    )
    kspace = clean_k + noise

    mask = np.ones(shape, bool)
    data = MulticoilKspaceData(kspace, ForwardModel(maps, mask), use_model_maps=True)

    # latent pinned at the truth draw with negligible spread
    vs = VariationalState.initialize(
        gen_cfg.latent_shape,
        n_coils,
        sigma0=0.1 * np.sqrt(np.mean(np.abs(kspace) ** 2)),
        seed=seed + 11,
        latent_sigma0=1e-6,
    )
    vs.mu.data[...] = z0
    vs.mu.requires_grad = False
    vs.log_sigma.requires_grad = False

    opt = AdamW([(vs.chol_raw, False)], lr=lr)
    root = np.random.SeedSequence((seed, 0xE1B0))
    trace: list[TracePoint] = []
    stride = max(iterations // 8, 1)
    t0 = time.monotonic()
    for it in range(iterations):
        opt.zero_grad()
        loss, parts = elbo(data, lambda z, masks: generate(state, z), vs, 1, root.spawn(1))
        loss.backward()
        opt.step()
        if it % stride == 0 or it == iterations - 1:
            trace.append(
                TracePoint(
                    iteration=it,
                    loss=parts["loss"],
                    fidelity=parts["fidelity"],
                    logdet=parts["logdet"],
                    latent_prior=parts["latent_prior"],
                    entropy=parts["entropy"],
                )
            )

    learned = vs.noise_covariance()
    flat = noise.reshape(n_coils, -1)
    oracle = (flat.real @ flat.real.T + flat.imag @ flat.imag.T) / flat.shape[1]

    result = ReconResult(
        method="noise_recovery",
        image=np.stack([truth.real, truth.imag]),
        coils=None,
        coil_images=None,
        combined=rss_combine(coil_images),
        uncertainty=np.zeros(shape),
        sigma=learned,
        trace=trace,
        n_params=int(vs.chol_raw.data.size),
        elapsed_seconds=time.monotonic() - t0,
        lr_halved=False,
        gen_config=gen_cfg,
    )
    return learned, oracle, result


def psnr_table(results: dict) -> dict:
    """Peak and final PSNR per method, from the traces."""
    table = {}
    for name, res in results.items():
        best = res.best_point()
        table[name] = {
            "peak_psnr": best.psnr,
            "peak_iteration": best.iteration,
            "final_psnr": res.trace[-1].psnr,
            "final_iteration": res.trace[-1].iteration,
        }
    return table
