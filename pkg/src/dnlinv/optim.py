"""Decoupled-weight-decay Adam and the scan-specific training loop.

One loop serves every inference method: the method descriptor decides the
loss (Monte Carlo negative ELBO or masked MSE), how the latent is drawn
(learned posterior, fixed draw, or fresh prior draw per step), whether
dropout runs, and whether the noise covariance is learned. Weight decay
applies to generator weights only; variational parameters are never
decayed, which is what makes the decay act as the weight prior.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace

import numpy as np

from . import engine
from .engine import NonFiniteError, Tensor, constant
from .generator import GeneratorConfig, build_generator, generate, sample_dropout_mask
from .metrics import psnr as psnr_metric
from .metrics import ssim as ssim_metric
from .variational import SIGMA_MIN, VariationalState, elbo, gaussian_loglik, sample_z


class NumericsError(RuntimeError):
    """Optimization produced non-finite values and could not recover."""


@dataclass
class OptimizerConfig:
    """Training loop knobs shared by every method."""

    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 1e-6
    iterations: int = 7500
    mc_samples: int = 2
    mc_out: int = 32
    metric_stride: int = 250
    seed: int = 0
    sigma0_scale: float = 0.01
    latent_sigma0: float = 0.1
    data_norm: float = 1.0

    def __post_init__(self):
        if self.lr <= 0 or self.iterations < 1 or self.mc_samples < 1 or self.mc_out < 1:
            raise ValueError("invalid optimizer configuration")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ValueError("betas must lie in [0, 1)")


class AdamW:
    """Adam with decoupled weight decay, matching the usual convention:

    p *= (1 - lr * wd) for decayed params, then the bias-corrected adaptive
    update with the raw gradient. Steps with any non-finite gradient are
    rejected wholesale (state untouched) and reported by the return value.
    """

    def __init__(self, params, lr, beta1=0.9, beta2=0.999, eps=1e-8, weight_decay=0.0):
        self.entries = [(p, bool(decay)) for p, decay in params]
        if not self.entries:
            raise ValueError("no parameters to optimize")
        self.lr = float(lr)
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.weight_decay = weight_decay
        self.t = 0
        self.m = [np.zeros_like(p.data) for p, _ in self.entries]
        self.v = [np.zeros_like(p.data) for p, _ in self.entries]

    def zero_grad(self):
        for p, _ in self.entries:
            p.grad = None

    def reset_state(self):
        self.t = 0
        for arr in self.m:
            arr[...] = 0
        for arr in self.v:
            arr[...] = 0

    @property
    def decayed_parameters(self):
        return [p for p, decay in self.entries if decay]

    def step(self) -> bool:
        grads = []
        for p, _ in self.entries:
            g = p.grad if p.grad is not None else np.zeros_like(p.data)
            if not np.all(np.isfinite(g)):
                return False
            grads.append(g)
        self.t += 1
        bc1 = 1.0 - self.beta1**self.t
        bc2 = 1.0 - self.beta2**self.t
        for (p, decay), g, m, v in zip(self.entries, grads, self.m, self.v):
            if decay and self.weight_decay:
                p.data *= 1.0 - self.lr * self.weight_decay
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            update = self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)
            p.data -= update
        return True


@dataclass
class TracePoint:
    iteration: int
    loss: float
    fidelity: float
    logdet: float
    latent_prior: float
    entropy: float
    psnr: float | None = None
    ssim: float | None = None


@dataclass
class ReconResult:
    """Everything a run produces: outputs, uncertainty, noise model, trace."""

    method: str
    image: np.ndarray
    coils: np.ndarray | None
    coil_images: np.ndarray | None
    combined: np.ndarray
    uncertainty: np.ndarray
    sigma: np.ndarray | None
    trace: list[TracePoint]
    n_params: int
    elapsed_seconds: float
    lr_halved: bool
    gen_config: GeneratorConfig = None
    opt_config: OptimizerConfig = None
    snapshots: dict = field(default_factory=dict)

    def best_point(self) -> TracePoint:
        scored = [t for t in self.trace if t.psnr is not None]
        if not scored:
            raise ValueError("trace has no metric entries (no ground truth given)")
        return max(scored, key=lambda t: t.psnr)

    def point_at(self, iteration: int) -> TracePoint:
        for t in self.trace:
            if t.iteration == iteration:
                return t
        raise KeyError(f"no trace entry at iteration {iteration}")

    def psnr_curve(self):
        pts = [t for t in self.trace if t.psnr is not None]
        return np.array([t.iteration for t in pts]), np.array([t.psnr for t in pts])


def parameter_groups(gen, vs, method):
    """(tensor, decay) pairs a method optimizes.

    Generator weights carry decay (that is the weight prior); variational
    parameters never do. The noise factor joins only when the method
    learns it.
    """
    params = [(p, True) for p in gen.parameters()]
    if method.loss == "elbo":
        params.append((vs.mu, False))
        params.append((vs.log_sigma, False))
        if method.learn_sigma:
            params.append((vs.chol_raw, False))
    return params


def _mc_forward(gen, n_out: int, seed_seq, z_draw, dropout_fn):
    """Average n_out forward passes; returns (image, coils, coil_imgs, std)."""
    kids = seed_seq.spawn(n_out) if n_out > 1 else [seed_seq]
    imgs, coils_acc, prods = [], [], []
    with engine.no_grad():
        for child in kids:
            rng = np.random.default_rng(child)
            z = z_draw(rng)
            masks = dropout_fn(rng) if dropout_fn is not None else None
            img, coils = generate(gen, z, dropout_mask=masks, train=False)
            arr = img.numpy() if hasattr(img, "numpy") else img.data.copy()
            imgs.append(arr)
            if coils is not None:
                c = coils.numpy()
                coils_acc.append(c)
                prods.append(c * arr)
    image = np.mean(imgs, axis=0)
    spread = np.sqrt(np.mean([np.abs(i - image) ** 2 for i in imgs], axis=0))
    coil_mean = np.mean(coils_acc, axis=0) if coils_acc else None
    prod_mean = np.mean(prods, axis=0) if prods else None
    return image, coil_mean, prod_mean, spread


def posterior_mean(gen, vs: VariationalState, m_out: int, seeds, dropout_fn=None):
    """Posterior-mean image/coils plus pixelwise std from m_out draws of q."""
    if isinstance(seeds, (int, np.integer)):
        seeds = np.random.SeedSequence(int(seeds))

    def draw(rng):
        return sample_z(vs, rng)[0]

    image, coils, prods, spread = _mc_forward(gen, m_out, seeds, draw, dropout_fn)
    return image, coils, spread


def run_reconstruction(
    data,
    gen_cfg: GeneratorConfig,
    opt_cfg: OptimizerConfig,
    method=None,
    ground_truth: np.ndarray | None = None,
    snapshot_iterations=(),
) -> ReconResult:
    """Fit one undersampled dataset with the given inference method.

    ``data`` is a MulticoilKspaceData or RepeatedSignalData adapter;
    ``ground_truth`` (combined reference image or clean signal) enables
    PSNR/SSIM in the trace every ``metric_stride`` iterations.
    ``snapshot_iterations`` stores the combined image at those iterations.

    The whole run is driven by ``opt_cfg.seed``; identical configs give
    bit-identical traces. Measurements are rescaled so their RMS magnitude
    is ``opt_cfg.data_norm`` before fitting (the untrained network emits
    order-one values, and a large scale mismatch parks the bilinear
    coil-times-image product at its zero saddle); every output is mapped
    back to the original units. Three consecutive non-finite steps restore
    the last checkpoint and halve the learning rate once; a second such
    event aborts with NumericsError.
    """
    if method is None:
        from .methods import METHODS

        method = METHODS["dnlinv"]
    t_start = time.perf_counter()

    rms = data.sample_rms()
    scale = opt_cfg.data_norm / rms if (opt_cfg.data_norm > 0 and rms > 0) else 1.0
    if scale != 1.0:
        data = data.scaled(scale)

    gen_cfg = replace(gen_cfg, activation=method.activation)
    root = np.random.SeedSequence(opt_cfg.seed)
    ss_init, ss_train, ss_out = root.spawn(3)
    init_kids = ss_init.spawn(3)

    gen = build_generator(gen_cfg, seed=np.random.default_rng(init_kids[0]))
    sigma0 = max(opt_cfg.sigma0_scale * float(np.abs(data.y).max()), SIGMA_MIN)
    vs = VariationalState.initialize(
        gen_cfg.latent_shape,
        data.n_channels,
        sigma0=sigma0,
        seed=np.random.default_rng(init_kids[1]),
        latent_sigma0=opt_cfg.latent_sigma0,
    )
    z_fixed = constant(np.random.default_rng(init_kids[2]).standard_normal(gen_cfg.latent_shape))

    use_dropout = method.mc_dropout and gen_cfg.keep_prob < 1.0

    def dropout_fn(rng):
        return sample_dropout_mask(gen, rng)

    drop = dropout_fn if use_dropout else None

    def forward_fn(z, masks):
        return generate(gen, z, dropout_mask=masks, train=masks is not None)

    if method.z_mode == "fixed":
        z_draw = lambda rng: z_fixed
    elif method.z_mode == "prior":
        z_draw = lambda rng: constant(rng.standard_normal(gen_cfg.latent_shape))
    elif method.z_mode == "variational":
        z_draw = lambda rng: sample_z(vs, rng)[0]
    else:
        raise ValueError(f"unknown latent mode {method.z_mode!r}")

    params = parameter_groups(gen, vs, method)
    opt = AdamW(
        params,
        lr=opt_cfg.lr,
        beta1=opt_cfg.beta1,
        beta2=opt_cfg.beta2,
        eps=opt_cfg.eps,
        weight_decay=opt_cfg.weight_decay,
    )

    deterministic_step = method.z_mode == "fixed" and not use_dropout
    m_train = 1 if (method.loss == "mse" and deterministic_step) else opt_cfg.mc_samples
    n_out = 1 if deterministic_step else opt_cfg.mc_out

    def checkpoint():
        return {
            "params": [p.data.copy() for p, _ in opt.entries],
        }

    def restore(state):
        for (p, _), saved in zip(opt.entries, state["params"]):
            p.data = saved.copy()
        opt.reset_state()

    def evaluate(it_index: int):
        eval_ss = np.random.SeedSequence(entropy=(opt_cfg.seed, 0xE7A1, it_index))
        image, coils, prods, spread = _mc_forward(gen, n_out, eval_ss, z_draw, drop)
        image = image / scale
        spread = spread / scale
        if prods is not None:
            prods = prods / scale
        elif getattr(data, "use_model_maps", False):
            # known maps: the product is linear in the image, so the
            # posterior-mean coil images follow exactly from the mean image
            prods = data.expand(image)
        combined = data.combine(prods if prods is not None else image)
        return image, coils, prods, spread, combined

    trace: list[TracePoint] = []
    snapshots: dict[int, np.ndarray] = {}
    guard = checkpoint()
    lr_halved = False
    bad_streak = 0

    def handle_divergence(reason: str):
        nonlocal lr_halved, bad_streak
        bad_streak += 1
        if bad_streak < 3:
            return
        bad_streak = 0
        if lr_halved:
            raise NumericsError(f"training diverged twice ({reason}); giving up")
        lr_halved = True
        opt.lr *= 0.5
        restore(guard)

    it = 0
    while it < opt_cfg.iterations:
        it_ss = ss_train.spawn(1)[0]
        try:
            if method.loss == "elbo":
                loss_t, parts = elbo(data, forward_fn, vs, m_train, it_ss, dropout_fn=drop)
            else:
                kids = it_ss.spawn(m_train) if m_train > 1 else [it_ss]
                loss_t = None
                for child in kids:
                    rng = np.random.default_rng(child)
                    z = z_draw(rng)
                    masks = drop(rng) if drop is not None else None
                    term = data.mse(forward_fn(z, masks))
                    loss_t = term if loss_t is None else loss_t + term
                loss_t = loss_t * (1.0 / m_train)
                val = float(loss_t.data)
                if not np.isfinite(val):
                    raise NonFiniteError("non-finite MSE loss")
                parts = {
                    "loss": val,
                    "fidelity": val,
                    "logdet": 0.0,
                    "const": 0.0,
                    "latent_prior": 0.0,
                    "entropy": 0.0,
                }
        except NonFiniteError as e:
            handle_divergence(str(e))
            continue

        opt.zero_grad()
        loss_t.backward()
        if not opt.step():
            handle_divergence("non-finite gradient")
            continue
        if method.loss == "elbo":
            vs.clamp()

        bad_streak = 0
        it += 1
        want_metric = (it % opt_cfg.metric_stride == 0) or it == opt_cfg.iterations
        if want_metric or it in snapshot_iterations:
            guard = checkpoint()
            if ground_truth is not None or it in snapshot_iterations:
                _, _, _, _, combined = evaluate(it)
                if it in snapshot_iterations:
                    snapshots[it] = combined
            p = s = None
            if ground_truth is not None:
                p = psnr_metric(combined, ground_truth)
                try:
                    s = ssim_metric(combined, ground_truth)
                except ValueError:
                    s = None
            if want_metric:
                trace.append(
                    TracePoint(
                        iteration=it,
                        loss=parts["loss"],
                        fidelity=parts["fidelity"],
                        logdet=parts["logdet"],
                        latent_prior=parts["latent_prior"],
                        entropy=parts["entropy"],
                        psnr=p,
                        ssim=s,
                    )
                )

    image, coils, prods, spread, combined = evaluate(opt_cfg.iterations + 1)
    sigma = None
    if method.loss == "elbo" and vs.chol_raw is not None:
        sigma = vs.noise_covariance() / scale**2
    return ReconResult(
        method=method.name,
        image=image,
        coils=coils,
        coil_images=prods,
        combined=combined,
        uncertainty=spread,
        sigma=sigma,
        trace=trace,
        n_params=gen.n_params,
        elapsed_seconds=time.perf_counter() - t_start,
        lr_halved=lr_halved,
        gen_config=gen_cfg,
        opt_config=opt_cfg,
        snapshots=snapshots,
    )


def fit_noise_covariance(residuals: np.ndarray, iters: int = 400, lr: float = 0.05, seed: int = 0) -> np.ndarray:
    """Maximum-likelihood channel covariance of fixed complex residuals.

    Optimizes the same Cholesky parameterization the ELBO uses, holding the
    residuals constant; converges to the empirical second moment
    (1/K) sum_k Re(r_k r_k^H) and exists mostly as the learned-noise half
    of covariance-recovery checks.
    """
    from .ctensor import ComplexTensor

    residuals = np.asarray(residuals)
    n = residuals.shape[0]
    flat = residuals.reshape(n, -1)
    scale = np.sqrt(np.mean(np.abs(flat) ** 2))
    raw0 = np.zeros((n, n))
    np.fill_diagonal(raw0, np.log(scale))
    raw = Tensor(raw0, requires_grad=True)
    pred = ComplexTensor(Tensor(np.zeros_like(flat.real)), Tensor(np.zeros_like(flat.imag)))
    opt = AdamW([(raw, False)], lr=lr)
    for _ in range(iters):
        ll, _ = gaussian_loglik(flat, pred, raw)
        loss = -ll
        opt.zero_grad()
        loss.backward()
        if not opt.step():
            raise NumericsError("covariance fit diverged")
    from .variational import chol_factor

    low = chol_factor(raw).data
    return low @ low.T
