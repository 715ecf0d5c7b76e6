"""Variational pieces: Cholesky noise model, likelihood values, ELBO identities."""

import numpy as np
import pytest
from scipy.stats import multivariate_normal

from dnlinv import engine
from dnlinv.ctensor import ComplexTensor
from dnlinv.engine import NonFiniteError, Tensor, check_gradient, constant
from dnlinv.generator import GeneratorConfig, build_generator, generate, sample_dropout_mask
from dnlinv.masks import mask_even
from dnlinv.mri import ForwardModel
from dnlinv.sim import birdcage_maps
from dnlinv.variational import (
    LOG_PI,
    MulticoilKspaceData,
    RepeatedSignalData,
    VariationalState,
    chol_factor,
    chol_logdet,
    elbo,
    gaussian_loglik,
    sample_z,
)

import oracles


@pytest.fixture(autouse=True)
def float64_default():
    engine.set_default_dtype(np.float64)
    yield
    engine.set_default_dtype(np.float32)


def _raw_from_cov(cov: np.ndarray) -> np.ndarray:
    low = np.linalg.cholesky(cov)
    raw = np.tril(low, -1)
    np.fill_diagonal(raw, np.log(np.diag(low)))
    return raw


class TestCholesky:
    def test_factor_reconstructs_covariance(self):
        rng = np.random.default_rng(0)
        a = rng.standard_normal((4, 4))
        cov = a @ a.T + 4 * np.eye(4)
        raw = Tensor(_raw_from_cov(cov), requires_grad=True)
        low = chol_factor(raw).data
        np.testing.assert_allclose(low @ low.T, cov, rtol=1e-10)
        assert np.all(np.triu(low, 1) == 0)

    def test_logdet_matches_slogdet(self):
        rng = np.random.default_rng(1)
        a = rng.standard_normal((5, 5))
        cov = a @ a.T + 5 * np.eye(5)
        raw = Tensor(_raw_from_cov(cov))
        want = np.linalg.slogdet(cov)[1]
        assert float(chol_logdet(raw).data) == pytest.approx(want, rel=1e-12)


class TestGaussianLoglik:
    def test_complex_value_matches_dense_oracle(self):
        rng = np.random.default_rng(2)
        n, k = 4, 60
        resid = rng.standard_normal((n, k)) + 1j * rng.standard_normal((n, k))
        a = rng.standard_normal((n, n))
        cov = a @ a.T + 4 * np.eye(n)
        raw = Tensor(_raw_from_cov(cov), requires_grad=True)
        pred = ComplexTensor(Tensor(np.zeros((n, k))), Tensor(np.zeros((n, k))))
        ll, parts = gaussian_loglik(-resid, pred, raw)
        want = oracles.gaussian_nll_complex(resid, cov)
        assert float(ll.data) == pytest.approx(want, rel=1e-12)
        assert parts["n_locations"] == k

    def test_complex_identity_cov_reduces_to_sse(self):
        rng = np.random.default_rng(3)
        resid = rng.standard_normal((2, 30)) + 1j * rng.standard_normal((2, 30))
        raw = Tensor(np.zeros((2, 2)))
        pred = ComplexTensor(Tensor(np.zeros((2, 30))), Tensor(np.zeros((2, 30))))
        ll, _ = gaussian_loglik(-resid, pred, raw)
        want = -30 * 2 * LOG_PI - np.sum(np.abs(resid) ** 2)
        assert float(ll.data) == pytest.approx(want, rel=1e-12)

    def test_real_value_matches_scipy(self):
        rng = np.random.default_rng(4)
        n, t = 3, 40
        y = rng.standard_normal((n, t))
        a = rng.standard_normal((n, n))
        cov = a @ a.T + 3 * np.eye(n)
        raw = Tensor(_raw_from_cov(cov))
        ll, _ = gaussian_loglik(y, Tensor(np.zeros((n, t))), raw)
        want = multivariate_normal(mean=np.zeros(n), cov=cov).logpdf(y.T).sum()
        assert float(ll.data) == pytest.approx(want, rel=1e-12)

    def test_mask_restricts_locations(self):
        rng = np.random.default_rng(5)
        y = rng.standard_normal((2, 4, 4)) + 1j * rng.standard_normal((2, 4, 4))
        mask = np.zeros((4, 4), dtype=bool)
        mask[::2, :] = True
        y = y * mask
        raw = Tensor(np.zeros((2, 2)))
        pred = ComplexTensor(Tensor(np.zeros((2, 4, 4))), Tensor(np.zeros((2, 4, 4))))
        ll, parts = gaussian_loglik(y, pred, raw, mask=mask)
        assert parts["n_locations"] == 8
        want = -8 * 2 * LOG_PI - np.sum(np.abs(y) ** 2)
        assert float(ll.data) == pytest.approx(want, rel=1e-12)

    def test_gradients(self):
        rng = np.random.default_rng(6)
        n, k = 3, 10
        y = rng.standard_normal((n, k)) + 1j * rng.standard_normal((n, k))
        raw = Tensor(0.3 * rng.standard_normal((n, n)), requires_grad=True)
        pre = Tensor(rng.standard_normal((n, k)), requires_grad=True)
        pim = Tensor(rng.standard_normal((n, k)), requires_grad=True)

        def f():
            ll, _ = gaussian_loglik(y, ComplexTensor(pre, pim), raw)
            return -ll

        err = check_gradient(f, [raw, pre, pim], eps=1e-6, n_samples=8, seed=2)
        assert err <= 1e-6

    def test_single_channel_mle_is_stationary(self):
        # d loglik / d raw_00 must vanish at Sigma = mean |r|^2
        rng = np.random.default_rng(7)
        resid = rng.standard_normal((1, 500)) + 1j * rng.standard_normal((1, 500))
        sig2 = float(np.mean(np.abs(resid) ** 2))
        raw = Tensor(np.array([[0.5 * np.log(sig2)]]), requires_grad=True)
        pred = ComplexTensor(Tensor(np.zeros((1, 500))), Tensor(np.zeros((1, 500))))
        ll, _ = gaussian_loglik(-resid, pred, raw)
        (-ll).backward()
        assert abs(raw.grad[0, 0]) < 1e-8 * 500


class TestSampleZ:
    def test_reparameterization_statistics(self):
        vs = VariationalState.initialize((64,), 0, seed=0, latent_sigma0=0.5)
        vs.mu.data[:] = 1.25
        rng = np.random.default_rng(8)
        draws = np.stack([sample_z(vs, rng)[0].data for _ in range(4000)])
        assert draws.mean() == pytest.approx(1.25, abs=0.02)
        assert draws.std() == pytest.approx(0.5, rel=0.05)

    def test_sigma_zero_limit_returns_mean(self):
        vs = VariationalState.initialize((16,), 0, seed=1)
        vs.log_sigma.data[:] = -50.0
        vs.clamp()
        z, _ = sample_z(vs, np.random.default_rng(0))
        np.testing.assert_allclose(z.data, vs.mu.data, atol=1e-4)
        # clamp projected the std onto its floor, not below
        assert np.all(vs.log_sigma.data >= np.log(1e-6) - 1e-12)


def _tiny_problem(sigma_z=1e-6):
    cfg = GeneratorConfig(shape=(8, 8), n_coils=2, n_scales=1, latent_channels=4, stage_channels=6, keep_prob=1.0)
    gen = build_generator(cfg, seed=0)
    maps = birdcage_maps(2, (8, 8))
    model = ForwardModel(maps, mask_even((8, 8), 2))
    vs = VariationalState.initialize(cfg.latent_shape, 2, sigma0=1.0, seed=3)
    vs.mu.data[:] = 0.0
    vs.log_sigma.data[:] = np.log(sigma_z)
    vs.chol_raw.data[:] = 0.0  # Sigma = I

    def forward_fn(z, masks):
        return generate(gen, z, dropout_mask=masks, train=masks is not None)

    # observe exactly what the generator emits at z = 0: perfect fit
    with engine.no_grad():
        img, coils = forward_fn(Tensor(np.zeros(cfg.latent_shape)), None)
        pred = model.forward_coil_images(coils * img)
        y = pred.numpy()
    data = MulticoilKspaceData(y, model)
    return data, forward_fn, vs, cfg


class TestElbo:
    def test_degenerate_case_closed_form(self):
        # dropout off, sigma_z at the clamp floor, perfect fit, Sigma = I:
        # loss -> K n_c log pi - sum_j (log sigma_min + 1/2)
        data, forward_fn, vs, cfg = _tiny_problem()
        loss, parts = elbo(data, forward_fn, vs, 1, np.random.SeedSequence(0))
        j = vs.latent_size
        want = data.n_locations * 2 * LOG_PI - j * (np.log(1e-6) + 0.5)
        assert float(loss.data) == pytest.approx(want, rel=1e-5)
        assert parts["fidelity"] == pytest.approx(0.0, abs=1e-6)

    def test_m2_equals_mean_of_paired_m1(self):
        data, forward_fn, vs, cfg = _tiny_problem(sigma_z=0.3)
        kids = np.random.SeedSequence(42).spawn(2)
        loss2, parts2 = elbo(data, forward_fn, vs, 2, np.random.SeedSequence(42))
        loss_a, parts_a = elbo(data, forward_fn, vs, 1, [kids[0]])
        loss_b, parts_b = elbo(data, forward_fn, vs, 1, [kids[1]])
        assert float(loss2.data) == pytest.approx(0.5 * (float(loss_a.data) + float(loss_b.data)), rel=1e-12)
        assert parts2["fidelity"] == pytest.approx(0.5 * (parts_a["fidelity"] + parts_b["fidelity"]), rel=1e-12)
        assert parts2["latent_prior"] == pytest.approx(
            0.5 * (parts_a["latent_prior"] + parts_b["latent_prior"]), rel=1e-12
        )

    def test_same_seeds_reproduce_loss(self):
        data, forward_fn, vs, cfg = _tiny_problem(sigma_z=0.3)
        gen_cfg = GeneratorConfig(
            shape=(8, 8), n_coils=2, n_scales=1, latent_channels=4, stage_channels=6, keep_prob=0.8
        )
        gen = build_generator(gen_cfg, seed=0)

        def fwd(z, masks):
            return generate(gen, z, dropout_mask=masks, train=True)

        def drop(rng):
            return sample_dropout_mask(gen, rng)

        l1, _ = elbo(data, fwd, vs, 2, np.random.SeedSequence(5), dropout_fn=drop)
        l2, _ = elbo(data, fwd, vs, 2, np.random.SeedSequence(5), dropout_fn=drop)
        assert float(l1.data) == float(l2.data)
        l3, _ = elbo(data, fwd, vs, 2, np.random.SeedSequence(6), dropout_fn=drop)
        assert float(l1.data) != float(l3.data)

    def test_elbo_gradients_with_frozen_seeds(self):
        data, forward_fn, vs, cfg = _tiny_problem(sigma_z=0.2)
        gen = build_generator(
            GeneratorConfig(shape=(8, 8), n_coils=2, n_scales=1, latent_channels=4, stage_channels=6, keep_prob=0.9),
            seed=1,
        )
        kids = np.random.SeedSequence(9).spawn(2)

        def fwd(z, masks):
            return generate(gen, z, dropout_mask=masks, train=True)

        def drop(rng):
            return sample_dropout_mask(gen, rng)

        params = [vs.mu, vs.log_sigma, vs.chol_raw] + gen.parameters()

        def f():
            loss, _ = elbo(data, fwd, vs, 2, kids, dropout_fn=drop)
            return loss

        err = check_gradient(f, params, eps=1e-6, n_samples=3, seed=4)
        assert err <= 1e-6

    def test_non_finite_component_is_reported(self):
        data, forward_fn, vs, cfg = _tiny_problem(sigma_z=0.3)
        data.y[0, 0, 0] = np.nan
        with pytest.raises(NonFiniteError):
            elbo(data, forward_fn, vs, 1, np.random.SeedSequence(0))


class TestDataAdapters:
    def test_multicoil_predict_matches_model_forward(self):
        rng = np.random.default_rng(10)
        maps = birdcage_maps(3, (8, 8))
        model = ForwardModel(maps, mask_even((8, 8), 2))
        x = rng.standard_normal((8, 8)) + 1j * rng.standard_normal((8, 8))
        coils = rng.standard_normal((3, 8, 8)) + 1j * rng.standard_normal((3, 8, 8))
        data = MulticoilKspaceData(np.zeros((3, 8, 8), dtype=complex), model)
        out = (ComplexTensor.from_numpy(x), ComplexTensor.from_numpy(coils))
        from dnlinv.ctensor import fft2c

        np.testing.assert_allclose(data.predict(out).numpy(), fft2c(coils * x) * model.mask, atol=1e-12)

    def test_multicoil_mse_zero_on_exact_fit(self):
        data, forward_fn, vs, cfg = _tiny_problem()
        with engine.no_grad():
            out = forward_fn(Tensor(np.zeros(cfg.latent_shape)), None)
        assert float(data.mse(out).data) == pytest.approx(0.0, abs=1e-20)

    def test_repeated_signal_mse(self):
        y = np.array([[1.0, 2.0], [3.0, 4.0]])
        data = RepeatedSignalData(y)
        pred = Tensor(np.array([2.0, 2.0]))
        out = (pred, None)
        want = 0.5 * ((1.0) ** 2 + 0 + 1.0 + 4.0)
        assert float(data.mse(out).data) == pytest.approx(want)

    def test_repeated_signal_loglik_broadcasts(self):
        rng = np.random.default_rng(11)
        y = rng.standard_normal((4, 32))
        data = RepeatedSignalData(y)
        raw = Tensor(np.zeros((4, 4)))
        ll, parts = data.loglik((Tensor(np.zeros(32)), None), raw)
        assert parts["n_locations"] == 32
        want = multivariate_normal(mean=np.zeros(4), cov=np.eye(4)).logpdf(y.T).sum()
        assert float(ll.data) == pytest.approx(want, rel=1e-12)
