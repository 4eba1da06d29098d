import numpy as np
import pytest

from terragp import exact_gp, kernels, svgp
from terragp.datasets import from_arrays
from terragp.errors import InvalidConfigError, InvalidInputError
from terragp.linalg import chol_with_jitter
from terragp.means import ConstantMean, ZeroMean
from terragp.methods import method_defaults, with_overrides

from conftest import random_gp_problem


def random_state(rng, m=5, family=kernels.RATIONAL_QUADRATIC, homosc=True, mean_const=0.3):
    Z = rng.normal(size=(m, 2))
    mvec = rng.normal(size=m) * 0.5
    L = np.tril(rng.normal(size=(m, m)) * 0.2, -1) + np.diag(
        np.exp(rng.normal(size=m) * 0.2 - 1.0)
    )
    kernel = kernels.KernelConfig(
        family,
        log_lengthscale=rng.normal() * 0.2,
        log_outputscale=rng.normal() * 0.2,
        log_alpha=rng.normal() * 0.2,
    )
    return svgp.SvgpState(
        Z=Z,
        mvec=mvec,
        L=L,
        kernel=kernel,
        mean_fn=ConstantMean(mean_const, False),
        log_noise_var=np.log(0.05) if homosc else None,
    )


class TestInitInducing:
    def test_full_subset_is_permutation(self, rng):
        X = rng.normal(size=(9, 2))
        Z = svgp.init_inducing(X, 9, seed=4)
        assert sorted(map(tuple, Z)) == sorted(map(tuple, X))

    def test_single_point(self, rng):
        X = rng.normal(size=(5, 2))
        Z = svgp.init_inducing(X, 1, seed=0)
        assert Z.shape == (1, 2)
        assert any(np.array_equal(Z[0], x) for x in X)

    def test_deterministic(self, rng):
        X = rng.normal(size=(30, 2))
        np.testing.assert_array_equal(
            svgp.init_inducing(X, 10, seed=7), svgp.init_inducing(X, 10, seed=7)
        )

    def test_distinct_rows(self, rng):
        X = rng.normal(size=(40, 2))
        Z = svgp.init_inducing(X, 20, seed=1)
        assert len({tuple(z) for z in Z}) == 20

    def test_oversized_request_rejected(self, rng):
        with pytest.raises(InvalidConfigError):
            svgp.init_inducing(rng.normal(size=(4, 2)), 5, seed=0)


class TestPredictive:
    def test_prior_matching_state(self, rng):
        # q(u) = p(u): zero mean offset, S = Kzz
        X = rng.normal(size=(8, 2))
        kernel = kernels.KernelConfig(kernels.RATIONAL_QUADRATIC, log_outputscale=0.2)
        mean_fn = ConstantMean(0.7, False)
        Z = X[:5]
        Lz, _ = chol_with_jitter(kernels.gram(kernel, Z, Z))
        state = svgp.SvgpState(
            Z=Z, mvec=np.zeros(5), L=Lz, kernel=kernel, mean_fn=mean_fn,
            log_noise_var=None,
        )
        Xs = rng.normal(size=(6, 2))
        mean, var = svgp.predictive_qf(state, Xs)
        np.testing.assert_allclose(mean, mean_fn(Xs), atol=1e-9)
        np.testing.assert_allclose(var, kernel.outputscale, atol=1e-9)

    def test_full_inducing_interpolates_exact_posterior(self, rng):
        # m = n, Z = X, S -> 0, mean offset from the noise-free posterior
        n = 7
        X = rng.normal(size=(n, 2))
        Y = rng.normal(size=n)
        kernel = kernels.KernelConfig(kernels.RBF, log_lengthscale=0.4)
        mean_fn = ConstantMean(0.1, False)
        state = svgp.SvgpState(
            Z=X.copy(),
            mvec=Y - mean_fn(X),
            L=1e-8 * np.eye(n),
            kernel=kernel,
            mean_fn=mean_fn,
            log_noise_var=None,
        )
        mean, _ = svgp.predictive_qf(state, X)
        np.testing.assert_allclose(mean, Y, atol=1e-6)

    def test_far_point_reverts_to_prior_variance(self, rng):
        state = random_state(rng, m=1)
        mean, var = svgp.predictive_qf(state, np.array([[300.0, 300.0]]))
        assert var[0] == pytest.approx(state.kernel.outputscale, abs=1e-8)

    def test_variance_nonnegative(self, rng):
        state = random_state(rng, m=8)
        _, var = svgp.predictive_qf(state, rng.normal(size=(100, 2)) * 2)
        assert np.all(var >= 0.0)

    def test_clamp_magnitude_small_when_well_conditioned(self, rng):
        # compute the variance without the clamp and check how far below
        # zero roundoff can push it on a benign state
        X = rng.normal(size=(20, 2)) * 2
        kernel = kernels.KernelConfig(kernels.MATERN, nu=1.5)
        Z = svgp.init_inducing(X, 10, seed=0)
        state = svgp.init_state(X, 10, kernel, ZeroMean(), seed=0, log_noise_var=None)
        Kzz = kernels.gram(kernel, state.Z, state.Z)
        Lz, _ = chol_with_jitter(Kzz)
        Xs = np.vstack([X, Z])
        Ksz = kernels.gram(kernel, Xs, state.Z)
        A = np.linalg.solve(Kzz + 1e-12 * np.eye(10), Ksz.T).T
        raw = (
            kernels.gram_diag(kernel, Xs)
            - np.einsum("ij,ij->i", A, Ksz)
            + np.einsum("ij,ij->i", A @ state.cov(), A)
        )
        assert raw.min() > -1e-8


class TestExpectedLoglik:
    def test_unit_density(self):
        v = 1.0 / (2 * np.pi)
        assert svgp.expected_loglik(0.3, 0.0, 0.3, v) == pytest.approx(0.0, abs=1e-12)

    def test_variance_penalty(self):
        v = 0.7
        got = svgp.expected_loglik(1.0, v, 1.0, v)
        assert got == pytest.approx(-0.5 * np.log(2 * np.pi * v) - 0.5, abs=1e-12)

    def test_monte_carlo_oracle(self, rng):
        for _ in range(5):
            mu = rng.normal()
            s2 = float(np.exp(rng.normal() * 0.5 - 0.5))
            y = rng.normal()
            v = float(np.exp(rng.normal() * 0.5 - 1.0))
            samples = rng.normal(mu, np.sqrt(s2), size=10**6)
            logdens = -0.5 * np.log(2 * np.pi * v) - (y - samples) ** 2 / (2 * v)
            mc = logdens.mean()
            se = logdens.std() / np.sqrt(logdens.size)
            assert svgp.expected_loglik(mu, s2, y, v) == pytest.approx(mc, abs=3 * se)

    def test_nonpositive_noise_rejected(self):
        with pytest.raises(InvalidInputError):
            svgp.expected_loglik(0.0, 1.0, 0.0, 0.0)


class TestKlTerm:
    def test_zero_at_prior(self, rng):
        X = rng.normal(size=(6, 2))
        kernel = kernels.KernelConfig(kernels.RBF)
        Lz, _ = chol_with_jitter(kernels.gram(kernel, X, X))
        state = svgp.SvgpState(
            Z=X, mvec=np.zeros(6), L=Lz, kernel=kernel,
            mean_fn=ZeroMean(), log_noise_var=None,
        )
        assert svgp.kl_term(state) == pytest.approx(0.0, abs=1e-9)

    def test_mean_shift_quadratic_form(self, rng):
        X = rng.normal(size=(5, 2))
        kernel = kernels.KernelConfig(kernels.RATIONAL_QUADRATIC)
        Kzz = kernels.gram(kernel, X, X)
        Lz, _ = chol_with_jitter(Kzz)
        delta = rng.normal(size=5) * 0.4
        state = svgp.SvgpState(
            Z=X, mvec=delta, L=Lz, kernel=kernel,
            mean_fn=ZeroMean(), log_noise_var=None,
        )
        expected = 0.5 * delta @ np.linalg.solve(Kzz, delta)
        assert svgp.kl_term(state) == pytest.approx(expected, abs=1e-9)

    def test_nonnegative(self, rng):
        for _ in range(20):
            state = random_state(rng, m=int(rng.integers(2, 8)))
            assert svgp.kl_term(state) >= -1e-9

    def test_invariant_under_inducing_reorder(self, rng):
        state = random_state(rng, m=6)
        base = svgp.kl_term(state)
        perm = rng.permutation(6)
        S = state.cov()[np.ix_(perm, perm)]
        L2, _ = chol_with_jitter(S)
        state2 = svgp.SvgpState(
            Z=state.Z[perm], mvec=state.mvec[perm], L=L2,
            kernel=state.kernel, mean_fn=state.mean_fn, log_noise_var=None,
        )
        assert svgp.kl_term(state2) == pytest.approx(base, abs=1e-9)


class TestElbo:
    def test_full_batch_scale_factor_one(self, rng):
        state = random_state(rng, m=4)
        n = 11
        X = rng.normal(size=(n, 2))
        y = rng.normal(size=n)
        v = np.exp(state.log_noise_var)
        elbo, _ = svgp.elbo_minibatch(state, X, y, n, v)
        mean, s2 = svgp.predictive_qf(state, X)
        manual = float(np.sum(svgp.expected_loglik(mean, s2, y, v))) - svgp.kl_term(state)
        assert elbo == pytest.approx(manual, abs=1e-8)

    def test_gradients_match_finite_differences(self, rng):
        for trial in range(6):
            homosc = trial % 2 == 0
            family = [kernels.RBF, kernels.RATIONAL_QUADRATIC, kernels.MATERN][trial % 3]
            m = int(rng.integers(2, 9))
            b = int(rng.integers(2, 17))
            state = random_state(rng, m=m, family=family, homosc=homosc)
            Xb = rng.normal(size=(b, 2))
            yb = rng.normal(size=b)
            noise = (
                np.exp(state.log_noise_var)
                if homosc
                else np.exp(rng.normal(size=b) * 0.3 - 2.0)
            )
            _, grads = svgp.elbo_minibatch(state, Xb, yb, 3 * b, noise)
            gvec = svgp.pack_gradients(state, grads)
            p0 = svgp.pack_state(state)

            def f(p):
                s2 = svgp.unpack_state(state, p)
                nv = np.exp(s2.log_noise_var) if homosc else noise
                return svgp.elbo_minibatch(s2, Xb, yb, 3 * b, nv)[0]

            h = 1e-5
            for i in range(p0.size):
                pp, pm = p0.copy(), p0.copy()
                pp[i] += h
                pm[i] -= h
                numeric = (f(pp) - f(pm)) / (2 * h)
                assert abs(gvec[i] - numeric) / max(1.0, abs(numeric)) < 1e-4

    def test_whitened_path_matches_unwhitened(self, rng):
        for _ in range(5):
            m, b = 6, 10
            wstate = random_state(rng, m=m)
            ustate = svgp.whitened_to_state(wstate)
            Xb = rng.normal(size=(b, 2))
            yb = rng.normal(size=b)
            v = np.exp(wstate.log_noise_var)
            e1, _ = svgp._elbo_whitened(wstate, Xb, yb, 30, v)
            e2, _ = svgp.elbo_minibatch(ustate, Xb, yb, 30, v)
            assert e1 == pytest.approx(e2, abs=1e-9)

    def test_elbo_bounded_by_exact_lml(self, rng):
        violations = 0
        for _ in range(20):
            n, m = 12, 6
            X, Y, mean_fn, kernel, _ = random_gp_problem(rng, n=n)
            sigma2 = float(np.exp(rng.normal() * 0.3 - 1.5))
            lml = exact_gp.log_marginal_likelihood(X, Y, mean_fn, kernel, sigma2)
            state = random_state(rng, m=m)
            state = svgp.SvgpState(
                Z=X[:m].copy(), mvec=state.mvec, L=state.L, kernel=kernel,
                mean_fn=mean_fn, log_noise_var=np.log(sigma2),
            )
            elbo, _ = svgp.elbo_minibatch(state, X, Y, n, sigma2)
            if elbo > lml + 1e-6:
                violations += 1
        assert violations == 0

    def test_monotone_under_small_gradient_ascent(self, rng):
        state = random_state(rng, m=4)
        n = 10
        X = rng.normal(size=(n, 2))
        y = rng.normal(size=n)
        p = svgp.pack_state(state)
        prev = -np.inf
        increases = 0
        steps = 200
        for _ in range(steps):
            st = svgp.unpack_state(state, p)
            elbo, grads = svgp.elbo_minibatch(st, X, y, n, np.exp(st.log_noise_var))
            if elbo >= prev - 1e-12:
                increases += 1
            prev = elbo
            p = p + 1e-3 * svgp.pack_gradients(st, grads)
        assert increases >= 0.95 * steps

    def test_empty_batch_rejected(self, rng):
        state = random_state(rng, m=3)
        with pytest.raises(InvalidInputError):
            svgp.elbo_minibatch(state, np.zeros((0, 2)), np.zeros(0), 5, 0.1)


class TestFitSvgp:
    def test_table_configs(self):
        torroba = method_defaults("torroba")
        assert torroba.kernel_family == kernels.MATERN
        assert torroba.learning_rate == 0.1 and torroba.epochs == 75
        assert torroba.batch_size == 256 and torroba.num_inducing == 1024
        ours = method_defaults("ours-variational")
        assert ours.kernel_family == kernels.RATIONAL_QUADRATIC
        assert ours.learning_rate == 0.05 and ours.epochs == 40
        assert ours.batch_size == 256 and ours.num_inducing == 1024

    def test_deterministic(self, rng):
        data = from_arrays(rng.normal(size=(40, 2)), rng.normal(size=40))
        method = with_overrides(
            method_defaults("torroba"), epochs=3, num_inducing=8, batch_size=16
        )
        a = svgp.fit_svgp(data, method, seed=5)
        b = svgp.fit_svgp(data, method, seed=5)
        np.testing.assert_array_equal(a.Z, b.Z)
        np.testing.assert_array_equal(a.mvec, b.mvec)
        np.testing.assert_array_equal(a.L, b.L)
        assert a.kernel == b.kernel

    def test_chol_diagonal_stays_positive(self, rng):
        data = from_arrays(rng.normal(size=(30, 2)), rng.normal(size=30))
        method = with_overrides(
            method_defaults("torroba"), epochs=4, num_inducing=6, batch_size=10
        )
        state = svgp.fit_svgp(data, method, seed=0)
        assert np.all(np.diag(state.L) > 0)

    def test_close_to_exact_on_known_gp(self, rng):
        # sample a surface from a known GP smooth enough for 64 inducing
        # points to cover, fit both models, compare held-out accuracy
        n = 500
        X = rng.uniform(-2, 2, size=(n, 2))
        kernel = kernels.KernelConfig(kernels.RBF, log_lengthscale=np.log(0.8))
        K = kernels.gram(kernel, X, X) + 1e-10 * np.eye(n)
        f = np.linalg.cholesky(K) @ rng.standard_normal(n)
        Y = f + 0.1 * rng.standard_normal(n)
        train = from_arrays(X[:400], Y[:400])
        Xtest_n = train.stats.normalize_points(X[400:])
        truth = Y[400:]

        exact_model = exact_gp.fit_exact(
            train, with_overrides(method_defaults("hayner"), epochs=30), seed=0
        )
        em, _ = exact_gp.predict_exact(exact_model, Xtest_n)
        exact_rmse = float(
            np.sqrt(np.mean((train.stats.denormalize_y(em) - truth) ** 2))
        )

        sparse_method = with_overrides(
            method_defaults("torroba"), kernel_family=kernels.RBF,
            epochs=40, num_inducing=64, batch_size=128,
        )
        state = svgp.fit_svgp(train, sparse_method, seed=0)
        sm, _ = svgp.predictive_qf(state, Xtest_n)
        sparse_rmse = float(
            np.sqrt(np.mean((train.stats.denormalize_y(sm) - truth) ** 2))
        )
        assert sparse_rmse <= 2.0 * exact_rmse

    def test_heteroscedastic_requires_vector(self, rng):
        data = from_arrays(rng.normal(size=(20, 2)), rng.normal(size=20))
        method = with_overrides(
            method_defaults("ours-variational"), epochs=2, num_inducing=4, batch_size=8
        )
        with pytest.raises(InvalidConfigError):
            svgp.fit_svgp(data, method, seed=0)
