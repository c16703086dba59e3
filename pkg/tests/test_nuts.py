"""Sampler checks: leapfrog mechanics, known-target laws, reproducibility."""

import numpy as np
import pytest

from qproc.network import NetworkShape, init_state
from qproc.nuts import (
    Chain,
    NutsConfig,
    leapfrog,
    nuts_step,
    run_chain,
    run_chains_parallel,
    run_nuts,
)
from qproc.posterior import Dataset, PosteriorConfig
from qproc.splines import build_knots


def std_normal_fn(q):
    return -0.5 * float(q @ q), -q


def tiny_fit_inputs(n=40, seed=3, p=5, V=3):
    rng = np.random.default_rng(seed)
    kv = build_knots(2, p)
    cfg = PosteriorConfig(kv=kv, shape=NetworkShape(d=1, V=V, M=kv.basis_count))
    data = Dataset(X=rng.uniform(0, 1, (n, 1)), z=rng.uniform(0.02, 0.98, n))
    return data, cfg


class TestLeapfrog:
    def test_reversibility(self):
        rng = np.random.default_rng(0)
        q0, p0 = rng.standard_normal(5), rng.standard_normal(5)
        grad = lambda q: -q
        q1, p1 = leapfrog(q0, p0, 0.1, grad)
        q2, p2 = leapfrog(q1, -p1, 0.1, grad)
        np.testing.assert_allclose(q2, q0, atol=1e-10)
        np.testing.assert_allclose(-p2, p0, atol=1e-10)

    def test_zero_step_identity(self):
        q0, p0 = np.array([1.0, 2.0]), np.array([-0.5, 0.25])
        q1, p1 = leapfrog(q0, p0, 0.0, lambda q: -q)
        np.testing.assert_array_equal(q1, q0)
        np.testing.assert_array_equal(p1, p0)

    def test_hamiltonian_error_on_oscillator(self):
        # Quadratic target: energy drift of 100 steps at eps = 0.01 stays tiny.
        q, p = np.array([1.0, -0.3, 0.2]), np.array([0.1, 0.7, -0.4])
        h0 = 0.5 * (q @ q) + 0.5 * (p @ p)
        for _ in range(100):
            q, p = leapfrog(q, p, 0.01, lambda q: -q)
        h1 = 0.5 * (q @ q) + 0.5 * (p @ p)
        assert abs(h1 - h0) <= 1e-3

    def test_volume_preservation_linear_gradient(self):
        # Constant-gradient target makes one step affine; the finite-difference
        # Jacobian determinant of (q, p) -> (q', p') must be 1.
        grad = lambda q: np.array([0.3, -0.2, 0.5])
        eps, h = 0.2, 1e-6
        state0 = np.array([0.1, 0.2, -0.3, 0.4, -0.5, 0.6])

        def step(state):
            q, p = state[:3], state[3:]
            q1, p1 = leapfrog(q, p, eps, grad)
            return np.concatenate([q1, p1])

        jac = np.empty((6, 6))
        for i in range(6):
            e = np.zeros(6)
            e[i] = h
            jac[:, i] = (step(state0 + e) - step(state0 - e)) / (2 * h)
        assert abs(np.linalg.det(jac) - 1.0) <= 1e-6


class TestNutsStep:
    def test_two_dim_gaussian_law(self):
        out = run_nuts(std_normal_fn, np.zeros(2), NutsConfig(n_iter=2500, n_warmup=500, seed=12))
        draws = out["draws"]
        assert np.abs(draws.mean(axis=0)).max() <= 0.1
        cov = np.cov(draws.T)
        np.testing.assert_allclose(cov, np.eye(2), atol=0.15)

    def test_gaussian_quantiles(self):
        out = run_nuts(std_normal_fn, np.zeros(2), NutsConfig(n_iter=6500, n_warmup=500, seed=4))
        draws = out["draws"][:, 0]
        for tau, truth in ((0.1, -1.2816), (0.5, 0.0), (0.9, 1.2816)):
            assert abs(np.quantile(draws, tau) - truth) <= 0.1

    def test_huge_step_size_diverges_in_place(self):
        rng = np.random.default_rng(5)
        q0 = np.array([1.0, 1.0])
        q1, stats = nuts_step(q0, 1e3, rng, std_normal_fn)
        assert stats["divergent"]
        np.testing.assert_array_equal(q1, q0)

    def test_deterministic_given_seed(self):
        cfg = NutsConfig(n_iter=200, n_warmup=50, seed=7)
        a = run_nuts(std_normal_fn, np.zeros(3), cfg)
        b = run_nuts(std_normal_fn, np.zeros(3), cfg)
        np.testing.assert_array_equal(a["draws"], b["draws"])
        assert a["step_size"] == b["step_size"]


class TestRunChain:
    def test_smoke_design_data(self):
        data, cfg = tiny_fit_inputs()
        nuts = NutsConfig(n_iter=400, n_warmup=150, thin=2, seed=1)
        chain = run_chain(data, cfg, nuts)
        assert chain.n_kept == (400 - 150) // 2
        assert chain.divergence_count / nuts.n_iter < 0.05
        assert np.all(np.isfinite(chain.log_posterior_trace))

    def test_thin_to_single_draw(self):
        data, cfg = tiny_fit_inputs(n=20)
        nuts = NutsConfig(n_iter=120, n_warmup=60, thin=60, seed=2)
        chain = run_chain(data, cfg, nuts)
        assert chain.n_kept == 1

    def test_higher_target_accept_shrinks_step(self):
        data, cfg = tiny_fit_inputs(n=25)
        eps = {}
        for ta in (0.6, 0.95):
            nuts = NutsConfig(n_iter=300, n_warmup=200, target_accept=ta, seed=3)
            eps[ta] = run_chain(data, cfg, nuts).step_size
        assert eps[0.95] < eps[0.6]

    def test_config_validation(self):
        with pytest.raises(ValueError):
            NutsConfig(n_iter=100, n_warmup=100)
        with pytest.raises(ValueError):
            NutsConfig(n_iter=100, n_warmup=10, thin=0)
        with pytest.raises(ValueError):
            NutsConfig(n_iter=100, n_warmup=10, target_accept=1.0)
        with pytest.raises(ValueError):
            NutsConfig(n_iter=100, n_warmup=10, max_tree_depth=16)


class TestParallelChains:
    def test_single_chain_matches_run_chain(self):
        data, cfg = tiny_fit_inputs(n=20)
        nuts = NutsConfig(n_iter=150, n_warmup=50, seed=9)
        solo = run_chain(data, cfg, nuts)
        par = run_chains_parallel(1, data, cfg, nuts)
        np.testing.assert_array_equal(solo.draws, par[0].draws)

    def test_distinct_seeds_distinct_first_draws(self):
        data, cfg = tiny_fit_inputs(n=20)
        nuts = NutsConfig(n_iter=150, n_warmup=50, seed=9)
        chains = run_chains_parallel(3, data, cfg, nuts)
        firsts = [tuple(c.draws[0]) for c in chains]
        assert len(set(firsts)) == 3

    def test_parallelism_does_not_change_results(self):
        data, cfg = tiny_fit_inputs(n=20)
        nuts = NutsConfig(n_iter=150, n_warmup=50, seed=9)
        seq = run_chains_parallel(2, data, cfg, nuts, n_jobs=1)
        par = run_chains_parallel(2, data, cfg, nuts, n_jobs=2)
        for a, b in zip(seq, par):
            np.testing.assert_array_equal(a.draws, b.draws)

    def test_gaussian_target_multi_chain(self):
        chains = []
        for c in range(4):
            out = run_nuts(std_normal_fn, np.zeros(2), NutsConfig(n_iter=1200, n_warmup=200, seed=20 + c))
            chains.append(out["draws"])
        pooled = np.vstack(chains)
        assert np.abs(pooled.mean(axis=0)).max() <= 0.1
        np.testing.assert_allclose(np.cov(pooled.T), np.eye(2), atol=0.15)

    def test_requires_positive_count(self):
        data, cfg = tiny_fit_inputs(n=20)
        with pytest.raises(ValueError):
            run_chains_parallel(0, data, cfg, NutsConfig(n_iter=100, n_warmup=10, seed=0))
