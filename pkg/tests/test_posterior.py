"""Log-posterior pieces and the analytic gradient against finite differences."""

import math

import numpy as np
import pytest
from scipy.optimize import minimize
from scipy.stats import halfnorm, norm

from qproc.network import NetworkShape, WeightState, init_state
from qproc.posterior import (
    Dataset,
    LogPosterior,
    PosteriorConfig,
    grad_log_posterior,
    log_likelihood,
    log_posterior,
    log_prior,
)
from qproc.splines import build_knots, eval_mspline


def tiny_problem(n=20, d=2, V=3, p=5, r=2, seed=7):
    rng = np.random.default_rng(seed)
    kv = build_knots(r, p)
    cfg = PosteriorConfig(kv=kv, shape=NetworkShape(d=d, V=V, M=kv.basis_count))
    data = Dataset(X=rng.uniform(0, 1, (n, d)), z=rng.uniform(0.02, 0.98, n))
    return data, cfg


def random_vec(post, rng, scale_sd=0.5):
    vec = init_state(post.cfg.shape, rng.integers(0, 2**31)).pack()
    n_std = post.cfg.shape.n_params - post.cfg.shape.d - 2
    vec[n_std:] = rng.normal(0.0, scale_sd, post.cfg.shape.d + 2)
    return vec


def fd_gradient(post, vec, h=1e-5):
    g = np.empty_like(vec)
    for i in range(len(vec)):
        e = np.zeros_like(vec)
        e[i] = h
        g[i] = (post.value(vec + e) - post.value(vec - e)) / (2 * h)
    return g


def block_slices(shape):
    n1 = (shape.d + 1) * shape.V
    n2 = (shape.V + 1) * shape.M
    return {
        "B1": slice(0, n1),
        "B2": slice(n1, n1 + n2),
        "sigma_tilde": slice(n1 + n2, n1 + n2 + shape.d + 1),
        "gamma_tilde": slice(n1 + n2 + shape.d + 1, n1 + n2 + shape.d + 2),
    }


class TestLogLikelihood:
    def test_uniform_weights_single_point(self):
        data, cfg = tiny_problem(n=1)
        w = WeightState(
            b1=np.zeros((3, 3)), b2=np.zeros((4, 6)), sigma_tilde=np.zeros(3), gamma_tilde=0.0
        )
        mrow = eval_mspline(cfg.kv, data.z).values[0]
        expected = math.log(mrow.sum() / cfg.shape.M)
        assert log_likelihood(data, w, cfg) == pytest.approx(expected, abs=1e-12)

    def test_empty_dataset(self):
        _, cfg = tiny_problem()
        data = Dataset(X=np.zeros((0, 2)), z=np.zeros(0))
        w = init_state(cfg.shape, 0)
        assert log_likelihood(data, w, cfg) == 0.0

    def test_score_shift_invariance(self):
        data, cfg = tiny_problem()
        w = init_state(cfg.shape, 1)
        shifted = WeightState(
            b1=w.b1.copy(),
            b2=w.b2 + np.exp(-w.gamma_tilde) * 3.7 * np.eye(1, w.b2.shape[0]).T @ np.ones((1, w.b2.shape[1])),
            sigma_tilde=w.sigma_tilde.copy(),
            gamma_tilde=w.gamma_tilde,
        )
        assert log_likelihood(data, w, cfg) == pytest.approx(
            log_likelihood(data, shifted, cfg), abs=1e-10
        )

    def test_hidden_permutation_invariance(self):
        data, cfg = tiny_problem()
        rng = np.random.default_rng(5)
        w = init_state(cfg.shape, 5)
        perm = rng.permutation(cfg.shape.V)
        w_perm = WeightState(
            b1=w.b1[:, perm],
            b2=np.vstack([w.b2[:1], w.b2[1:][perm]]),
            sigma_tilde=w.sigma_tilde.copy(),
            gamma_tilde=w.gamma_tilde,
        )
        assert log_likelihood(data, w, cfg) == pytest.approx(
            log_likelihood(data, w_perm, cfg), abs=1e-10
        )

    def test_geometric_mean_density_bounded(self):
        data, cfg = tiny_problem()
        post = LogPosterior(data, cfg)
        bound = np.log(post.mz.max(axis=1)).sum()
        for seed in range(10):
            ll = post.log_likelihood(init_state(cfg.shape, seed))
            assert np.isfinite(ll)
            assert ll <= bound + 1e-9


class TestLogPrior:
    def test_closed_form_at_origin(self):
        _, cfg = tiny_problem()
        shape = cfg.shape
        w = WeightState(
            b1=np.zeros((shape.d + 1, shape.V)),
            b2=np.zeros((shape.V + 1, shape.M)),
            sigma_tilde=np.zeros(shape.d + 1),
            gamma_tilde=0.0,
        )
        n_std = w.b1.size + w.b2.size
        expected = n_std * norm.logpdf(0.0) + (shape.d + 2) * halfnorm.logpdf(1.0, scale=cfg.a)
        assert log_prior(w, cfg) == pytest.approx(expected, abs=1e-12)

    def test_gaussian_kernel_in_single_weight(self):
        _, cfg = tiny_problem()
        base = init_state(cfg.shape, 3)
        w0 = WeightState(
            b1=np.zeros_like(base.b1), b2=np.zeros_like(base.b2),
            sigma_tilde=np.zeros(cfg.shape.d + 1), gamma_tilde=0.0,
        )
        for t in (0.5, 1.0, -2.0):
            b1 = np.zeros_like(base.b1)
            b1[1, 0] = t
            wt = WeightState(b1=b1, b2=w0.b2.copy(), sigma_tilde=w0.sigma_tilde.copy(), gamma_tilde=0.0)
            assert log_prior(w0, cfg) - log_prior(wt, cfg) == pytest.approx(t**2 / 2, abs=1e-12)

    def test_large_gamma_penalized(self):
        _, cfg = tiny_problem()
        def at(gamma):
            return log_prior(
                WeightState(
                    b1=np.zeros((3, 3)), b2=np.zeros((4, 6)),
                    sigma_tilde=np.zeros(3), gamma_tilde=gamma,
                ),
                cfg,
            )
        assert at(10.0) < at(0.0)
        assert at(12.0) < at(10.0)
        assert at(12.0) < -1e6  # half-normal tail dominates the Jacobian term


class TestLogPosterior:
    def test_equals_sum_of_parts(self):
        data, cfg = tiny_problem()
        rng = np.random.default_rng(11)
        post = LogPosterior(data, cfg)
        for _ in range(50):
            w = WeightState.unpack(random_vec(post, rng), cfg.shape)
            total = log_posterior(data, w, cfg)
            parts = log_likelihood(data, w, cfg) + log_prior(w, cfg)
            assert total == pytest.approx(parts, rel=1e-12, abs=1e-12)

    def test_data_duplication_doubles_likelihood_part(self):
        data, cfg = tiny_problem(n=15)
        doubled = Dataset(X=np.vstack([data.X, data.X]), z=np.concatenate([data.z, data.z]))
        w = init_state(cfg.shape, 2)
        single = log_posterior(data, w, cfg) - log_prior(w, cfg)
        double = log_posterior(doubled, w, cfg) - log_prior(w, cfg)
        assert double == pytest.approx(2 * single, rel=1e-12)

    def test_finite_on_design_data(self):
        from qproc.model import Normalization
        from qproc.simulate import DesignSpec, generate

        sim = generate(DesignSpec(design_id=1, n=60, seed=3))
        norm_ = Normalization(
            y_min=sim.y.min(), y_max=sim.y.max(), x_min=sim.X.min(0), x_max=sim.X.max(0)
        )
        data = Dataset(X=norm_.normalize_X(sim.X), z=norm_.normalize_y(sim.y))
        kv = build_knots(2, 5)
        cfg = PosteriorConfig(kv=kv, shape=NetworkShape(d=1, V=5, M=kv.basis_count))
        for seed in range(20):
            value = log_posterior(data, init_state(cfg.shape, seed), cfg)
            assert np.isfinite(value)


class TestGradient:
    def test_against_central_differences(self):
        data, cfg = tiny_problem()
        post = LogPosterior(data, cfg)
        rng = np.random.default_rng(0)
        for _ in range(100):
            vec = random_vec(post, rng)
            _, analytic = post.value_and_grad(vec)
            fd = fd_gradient(post, vec)
            for name, block in block_slices(cfg.shape).items():
                denom = max(np.abs(fd[block]).max(), 1e-8)
                rel = np.abs(analytic[block] - fd[block]).max() / denom
                assert rel <= 1e-5, f"block {name} relative error {rel}"

    def test_fast_path_matches_reference(self):
        data, cfg = tiny_problem()
        post = LogPosterior(data, cfg)
        rng = np.random.default_rng(9)
        for _ in range(25):
            vec = random_vec(post, rng)
            v_fast, g_fast = post.value_and_grad(vec)
            v_ref, g_ref = post._value_and_grad_reference(vec)
            assert v_fast == pytest.approx(v_ref, rel=1e-12, abs=1e-10)
            np.testing.assert_allclose(g_fast, g_ref, rtol=1e-10, atol=1e-10)

    def test_directional_derivatives(self):
        data, cfg = tiny_problem()
        post = LogPosterior(data, cfg)
        rng = np.random.default_rng(13)
        vec = random_vec(post, rng)
        _, g = post.value_and_grad(vec)
        h = 1e-5
        for _ in range(50):
            u = rng.standard_normal(len(vec))
            u /= np.linalg.norm(u)
            fd = (post.value(vec + h * u) - post.value(vec - h * u)) / (2 * h)
            assert fd == pytest.approx(float(g @ u), rel=1e-5, abs=1e-7)

    def test_prior_gradient_is_negative_weight(self):
        _, cfg = tiny_problem()
        data = Dataset(X=np.zeros((0, 2)), z=np.zeros(0))
        for t in (0.3, -1.7):
            b1 = np.zeros((3, 3))
            b1[0, 1] = t
            w = WeightState(b1=b1, b2=np.zeros((4, 6)), sigma_tilde=np.zeros(3), gamma_tilde=0.0)
            g = grad_log_posterior(data, w, cfg)
            assert g.b1[0, 1] == pytest.approx(-t, abs=1e-12)

    def test_gradient_vanishes_at_maximizer(self):
        data, cfg = tiny_problem(n=15, d=1, V=2, p=5, r=2, seed=1)
        post = LogPosterior(data, cfg)

        def neg(vec):
            v, g = post.value_and_grad(vec)
            return -v, -g

        x = 0.1 * init_state(cfg.shape, 0).pack()
        for _ in range(6):  # restarts let L-BFGS escape its own ftol stopping
            x = minimize(neg, x, jac=True, method="L-BFGS-B",
                         options={"maxiter": 20000, "ftol": 1e-20, "gtol": 1e-12}).x
            _, g = post.value_and_grad(x)
            if np.abs(g).max() <= 1e-7:
                break
        assert np.abs(g).max() <= 1e-6

    def test_error_carries_block_name(self):
        data, cfg = tiny_problem()
        w = init_state(cfg.shape, 0)
        bad = WeightState(
            b1=w.b1.copy(), b2=w.b2.copy(), sigma_tilde=w.sigma_tilde + 400.0,
            gamma_tilde=w.gamma_tilde,
        )
        with pytest.raises(FloatingPointError):
            grad_log_posterior(data, bad, cfg)


class TestConfigValidation:
    def test_basis_count_mismatch(self):
        kv = build_knots(2, 5)
        with pytest.raises(ValueError):
            PosteriorConfig(kv=kv, shape=NetworkShape(d=1, V=3, M=kv.basis_count + 1))

    def test_prior_scale_positive(self):
        kv = build_knots(2, 5)
        with pytest.raises(ValueError):
            PosteriorConfig(kv=kv, shape=NetworkShape(d=1, V=3, M=kv.basis_count), a=0.0)

    def test_dataset_validation(self):
        with pytest.raises(ValueError):
            Dataset(X=np.array([[0.5], [0.5]]), z=np.array([0.2, 1.4]))
        with pytest.raises(ValueError):
            Dataset(X=np.array([[1.5]]), z=np.array([0.2]))
