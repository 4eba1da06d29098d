import numpy as np
import pytest

from terragp import exact_gp, kernels
from terragp.datasets import from_arrays
from terragp.errors import InvalidConfigError
from terragp.means import ConstantMean, ZeroMean
from terragp.methods import method_defaults, with_overrides
from terragp.optim import check_gradient

from conftest import (
    all_family_configs,
    brute_force_lml,
    brute_force_posterior,
    random_gp_problem,
)


class TestLogMarginalLikelihood:
    def test_unit_density_scalar(self):
        # one point, residual 0, total variance 1/(2 pi): log density 0
        total_var = 1.0 / (2 * np.pi)
        kernel = kernels.KernelConfig(
            kernels.RBF, log_outputscale=np.log(total_var / 2)
        )
        lml = exact_gp.log_marginal_likelihood(
            [[0.0, 0.0]], [0.5], ConstantMean(0.5, False), kernel, total_var / 2
        )
        assert lml == pytest.approx(0.0, abs=1e-12)

    def test_scalar_gaussian_value(self):
        # residual 1, total variance 1: -log(2 pi)/2 - 1/2
        kernel = kernels.KernelConfig(kernels.RBF, log_outputscale=np.log(0.5))
        lml = exact_gp.log_marginal_likelihood(
            [[0.0, 0.0]], [1.0], ZeroMean(), kernel, 0.5
        )
        assert lml == pytest.approx(-0.5 * np.log(2 * np.pi) - 0.5, abs=1e-12)

    def test_matches_dense_oracle(self, rng):
        for _ in range(10):
            X, Y, mean, kernel, noise = random_gp_problem(rng, n=3)
            got = exact_gp.log_marginal_likelihood(X, Y, mean, kernel, noise)
            want = brute_force_lml(X, Y, mean, kernel, noise)
            assert got == pytest.approx(want, abs=1e-9)

    def test_permutation_invariant(self, rng):
        X, Y, mean, kernel, noise = random_gp_problem(rng, n=9)
        base = exact_gp.log_marginal_likelihood(X, Y, mean, kernel, noise)
        perm = rng.permutation(9)
        shuffled = exact_gp.log_marginal_likelihood(
            X[perm], Y[perm], mean, kernel, noise[perm]
        )
        assert shuffled == pytest.approx(base, abs=1e-9)


class TestLmlGradients:
    def test_matches_finite_differences(self, rng):
        for trial in range(20):
            n = int(rng.integers(3, 16))
            fam_cfg = all_family_configs(rng, jitter_params=True)[trial % 6]
            X = rng.normal(size=(n, 2))
            Y = rng.normal(size=n)
            mean = ConstantMean(rng.normal() * 0.3, learnable=True)
            sigma2 = float(np.exp(rng.normal() * 0.3 - 1.5))
            _, grads = exact_gp.lml_gradients(
                X, Y, mean, fam_cfg, np.full(n, sigma2), noise_learned=True
            )
            names = kernels.param_names(fam_cfg)
            x0 = np.concatenate(
                [kernels.get_params(fam_cfg), [mean.constant, np.log(sigma2)]]
            )
            analytic = np.array(
                [grads[nm] for nm in names]
                + [grads[exact_gp.MEAN_CONSTANT], grads[exact_gp.LOG_NOISE_VARIANCE]]
            )

            def f(v):
                k2 = kernels.with_params(fam_cfg, v[: len(names)])
                m2 = ConstantMean(v[-2], False)
                return exact_gp.log_marginal_likelihood(
                    X, Y, m2, k2, np.full(n, np.exp(v[-1]))
                )

            assert check_gradient(f, x0, analytic) < 1e-5

    def test_noise_gradient_vanishes_at_optimum(self, rng):
        # optimize only log sigma^2 for a fixed kernel, then the gradient
        # with respect to it should be near zero
        X, Y, mean, kernel, _ = random_gp_problem(rng, n=12)
        log_s = np.log(0.5)
        for _ in range(400):
            _, grads = exact_gp.lml_gradients(
                X, Y, mean, kernel, np.full(12, np.exp(log_s)), noise_learned=True
            )
            log_s += 0.01 * grads[exact_gp.LOG_NOISE_VARIANCE]
        _, grads = exact_gp.lml_gradients(
            X, Y, mean, kernel, np.full(12, np.exp(log_s)), noise_learned=True
        )
        assert abs(grads[exact_gp.LOG_NOISE_VARIANCE]) < 1e-3

    def test_duplicate_points_stay_finite(self):
        X = np.array([[0.0, 0.0], [0.0, 0.0], [1.0, 1.0]])
        Y = np.array([1.0, 1.0, 2.0])
        kernel = kernels.KernelConfig(kernels.RBF)
        lml, grads = exact_gp.lml_gradients(
            X, Y, ZeroMean(), kernel, np.full(3, 1e-6), noise_learned=True
        )
        assert np.isfinite(lml)
        assert all(np.isfinite(v) for v in grads.values())


class TestPredict:
    def test_interpolates_noise_free_point(self, rng):
        X = rng.normal(size=(5, 2))
        Y = rng.normal(size=5)
        kernel = kernels.KernelConfig(kernels.RBF, log_lengthscale=0.3)
        model = exact_gp.build_model(
            X, Y, ZeroMean(), kernel, np.zeros(5), homoscedastic=True, noise_learned=False
        )
        mean, var = exact_gp.predict_exact(model, X)
        np.testing.assert_allclose(mean, Y, atol=1e-6)
        np.testing.assert_allclose(var, 0.0, atol=1e-8)

    def test_far_field_reverts_to_prior(self, rng):
        X, Y, mean_fn, kernel, noise = random_gp_problem(rng, n=6)
        model = exact_gp.build_model(
            X, Y, mean_fn, kernel, noise, homoscedastic=False, noise_learned=False
        )
        far = np.array([[500.0, -500.0]])
        mean, var = exact_gp.predict_exact(model, far)
        assert mean[0] == pytest.approx(mean_fn(far)[0], abs=1e-8)
        assert var[0] == pytest.approx(kernel.outputscale, abs=1e-8)

    def test_matches_dense_oracle_all_families(self, rng):
        for trial in range(12):
            n = int(rng.integers(2, 6))
            kernel = all_family_configs(rng, jitter_params=True)[trial % 6]
            X = rng.normal(size=(n, 2))
            Y = rng.normal(size=n)
            mean_fn = ConstantMean(rng.normal() * 0.5, False)
            noise = np.exp(rng.normal(size=n) * 0.3 - 2)
            model = exact_gp.build_model(
                X, Y, mean_fn, kernel, noise, homoscedastic=False, noise_learned=False
            )
            Xstar = rng.normal(size=(7, 2))
            mean, var = exact_gp.predict_exact(model, Xstar)
            bmean, bvar = brute_force_posterior(X, Y, mean_fn, kernel, noise, Xstar)
            np.testing.assert_allclose(mean, bmean, atol=1e-9)
            np.testing.assert_allclose(var, np.maximum(bvar, 0), atol=1e-9)

    def test_variance_never_exceeds_prior(self, rng):
        X, Y, mean_fn, kernel, noise = random_gp_problem(rng, n=10)
        model = exact_gp.build_model(
            X, Y, mean_fn, kernel, noise, homoscedastic=False, noise_learned=False
        )
        Xstar = rng.normal(size=(200, 2)) * 3
        _, var = exact_gp.predict_exact(model, Xstar)
        assert np.all(var <= kernel.outputscale + 1e-9)

    def test_extra_point_never_increases_variance(self, rng):
        for _ in range(20):
            X, Y, mean_fn, kernel, noise = random_gp_problem(rng, n=7)
            Xstar = rng.normal(size=(15, 2))
            small = exact_gp.build_model(
                X[:6], Y[:6], mean_fn, kernel, noise[:6],
                homoscedastic=False, noise_learned=False,
            )
            full = exact_gp.build_model(
                X, Y, mean_fn, kernel, noise, homoscedastic=False, noise_learned=False
            )
            _, var_small = exact_gp.predict_exact(small, Xstar)
            _, var_full = exact_gp.predict_exact(full, Xstar)
            assert np.all(var_full <= var_small + 1e-9)

    def test_heteroscedastic_constant_equals_homoscedastic(self, rng):
        X, Y, mean_fn, kernel, _ = random_gp_problem(rng, n=8)
        sigma2 = 0.07
        het = exact_gp.build_model(
            X, Y, mean_fn, kernel, np.full(8, sigma2),
            homoscedastic=False, noise_learned=False,
        )
        hom = exact_gp.build_model(
            X, Y, mean_fn, kernel, sigma2, homoscedastic=True, noise_learned=False
        )
        Xstar = rng.normal(size=(20, 2))
        m1, v1 = exact_gp.predict_exact(het, Xstar)
        m2, v2 = exact_gp.predict_exact(hom, Xstar)
        np.testing.assert_allclose(m1, m2, atol=1e-12)
        np.testing.assert_allclose(v1, v2, atol=1e-12)


class TestFitExact:
    def test_table_configs(self):
        tomita = method_defaults("tomita")
        assert tomita.kernel_family == kernels.ABS_EXP
        assert tomita.learning_rate == 0.1 and tomita.epochs == 40
        hayner = method_defaults("hayner")
        assert hayner.kernel_family == kernels.RBF
        assert hayner.learning_rate == 0.1 and hayner.epochs == 50
        ours = method_defaults("ours-exact")
        assert ours.kernel_family == kernels.RATIONAL_QUADRATIC
        assert ours.learning_rate == 0.1 and ours.epochs == 30

    def test_recovers_lengthscale(self, rng):
        # draw from a known RBF GP and check the fitted lengthscale
        n = 200
        true_l = 0.5
        X = rng.uniform(-2, 2, size=(n, 2))
        kernel = kernels.KernelConfig(kernels.RBF, log_lengthscale=np.log(true_l))
        K = kernels.gram(kernel, X, X) + 1e-10 * np.eye(n)
        f = np.linalg.cholesky(K) @ rng.standard_normal(n)
        Y = f + 0.1 * rng.standard_normal(n)
        data = from_arrays(X, Y)
        method = method_defaults("hayner")
        model = exact_gp.fit_exact(data, method, seed=0)
        # the data were normalized; undo the x-scaling on the lengthscale
        fitted_l = model.kernel.lengthscale * data.stats.x_std.mean()
        assert abs(np.log(fitted_l) - np.log(true_l)) < 0.3

    def test_heteroscedastic_requires_noise_vector(self, rng):
        data = from_arrays(rng.normal(size=(10, 2)), rng.normal(size=10))
        with pytest.raises(InvalidConfigError):
            exact_gp.fit_exact(data, method_defaults("ours-exact"), seed=0)

    def test_fixed_noise_not_learned(self, rng):
        data = from_arrays(rng.normal(size=(12, 2)), rng.normal(size=12))
        method = with_overrides(
            method_defaults("tomita"), epochs=5, fixed_noise_var=0.123
        )
        model = exact_gp.fit_exact(data, method, seed=0)
        np.testing.assert_allclose(model.noise_var, 0.123)
        assert not model.noise_learned

    def test_loss_history_length_matches_epochs(self, rng):
        data = from_arrays(rng.normal(size=(10, 2)), rng.normal(size=10))
        method = with_overrides(method_defaults("tomita"), epochs=7)
        model = exact_gp.fit_exact(data, method, seed=0)
        assert len(model.loss_history) == 7

    def test_same_seed_bitwise_identical(self, rng):
        data = from_arrays(rng.normal(size=(15, 2)), rng.normal(size=15))
        method = with_overrides(method_defaults("hayner"), epochs=6)
        a = exact_gp.fit_exact(data, method, seed=3)
        b = exact_gp.fit_exact(data, method, seed=3)
        assert a.kernel == b.kernel
        np.testing.assert_array_equal(a.noise_var, b.noise_var)
        np.testing.assert_array_equal(a.alpha, b.alpha)
