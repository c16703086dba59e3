"""Fit/predict pipeline: normalization, CDF inversion, WAIC, determinism."""

import numpy as np
import pytest

from qproc.model import (
    FitResult,
    Normalization,
    fit,
    grid_search,
    invert_cdf,
    posterior_mean_cdf,
    predict_quantiles,
    quantile_surface,
    waic,
)
from qproc.network import NetworkShape
from qproc.nuts import Chain, NutsConfig
from qproc.posterior import PosteriorConfig
from qproc.splines import build_knots, eval_ispline

SMALL_NUTS = NutsConfig(n_iter=400, n_warmup=150, thin=5, seed=11)


def small_data(n=60, seed=0):
    rng = np.random.default_rng(seed)
    X = rng.uniform(0, 2, (n, 1))
    y = X[:, 0] + 0.3 * rng.standard_normal(n)
    return X, y


@pytest.fixture(scope="module")
def small_fit():
    X, y = small_data()
    return fit(X, y, interior=5, hidden=3, nuts=SMALL_NUTS, n_chains=2)


def zero_draw_fit(n_draws=1):
    """Fit-shaped object whose draws are all-zero weight states (uniform simplex)."""
    kv = build_knots(2, 5)
    shape = NetworkShape(d=1, V=3, M=kv.basis_count)
    cfg = PosteriorConfig(kv=kv, shape=shape)
    chain = Chain(
        draws=np.zeros((n_draws, shape.n_params)),
        log_posterior_trace=np.zeros(n_draws),
        accept_stats=1.0,
        step_size=0.1,
        divergence_count=0,
        seed=0,
        shape=shape,
    )
    norm = Normalization(y_min=0.0, y_max=1.0, x_min=np.zeros(1), x_max=np.ones(1))
    return FitResult(chains=[chain], cfg=cfg, normalization=norm,
                     loglik_matrix=np.zeros((2, n_draws)))


class TestNormalization:
    def test_minmax_example(self):
        norm = Normalization(y_min=2.0, y_max=6.0, x_min=np.zeros(1), x_max=np.ones(1))
        np.testing.assert_allclose(norm.normalize_y(np.array([2.0, 4.0, 6.0])), [0.0, 0.5, 1.0])

    def test_denormalize_example(self):
        norm = Normalization(y_min=2.0, y_max=6.0, x_min=np.zeros(1), x_max=np.ones(1))
        assert norm.denormalize_y(0.5) == pytest.approx(4.0)

    def test_clamp_warns(self):
        norm = Normalization(y_min=0.0, y_max=1.0, x_min=np.zeros(1), x_max=np.ones(1))
        with pytest.warns(UserWarning):
            out = norm.normalize_X(np.array([[2.0]]), clamp=True)
        assert out[0, 0] == 1.0


class TestFitValidation:
    def test_constant_response_fatal(self):
        X = np.linspace(0, 1, 10)[:, None]
        with pytest.raises(ValueError, match="constant"):
            fit(X, np.ones(10), nuts=SMALL_NUTS)

    def test_nan_cell_reports_row(self):
        X, y = small_data(n=10)
        X[3, 0] = np.nan
        with pytest.raises(ValueError, match="row 3"):
            fit(X, y, nuts=SMALL_NUTS)
        X, y = small_data(n=10)
        y[7] = np.inf
        with pytest.raises(ValueError, match="row 7"):
            fit(X, y, nuts=SMALL_NUTS)

    def test_refit_reproduces(self):
        X, y = small_data(n=30)
        nuts = NutsConfig(n_iter=200, n_warmup=80, thin=2, seed=5)
        a = fit(X, y, interior=5, hidden=3, nuts=nuts, n_chains=2)
        b = fit(X, y, interior=5, hidden=3, nuts=nuts, n_chains=2)
        for ca, cb in zip(a.chains, b.chains):
            np.testing.assert_array_equal(ca.draws, cb.draws)
        np.testing.assert_array_equal(a.loglik_matrix, b.loglik_matrix)


class TestPosteriorMeanCdf:
    def test_zero_weights_match_equal_ispline_mix(self):
        res = zero_draw_fit()
        z_grid = np.linspace(0, 1, 101)
        cdf = posterior_mean_cdf(res, np.array([0.4]), z_grid)
        expected = eval_ispline(res.cfg.kv, z_grid).values.mean(axis=1)
        np.testing.assert_allclose(cdf, expected, atol=1e-12)

    def test_endpoints(self, small_fit):
        cdf = posterior_mean_cdf(small_fit, np.array([1.0]))
        assert cdf[0] == 0.0
        assert cdf[-1] == 1.0
        assert np.all(np.diff(cdf) >= -1e-12)

    def test_duplicate_draws_average_to_same(self):
        one = zero_draw_fit(1)
        two = zero_draw_fit(2)
        grid = np.linspace(0, 1, 64)
        np.testing.assert_array_equal(
            posterior_mean_cdf(one, np.array([0.3]), grid),
            posterior_mean_cdf(two, np.array([0.3]), grid),
        )


class TestInvertCdf:
    def test_identity_cdf(self):
        grid = np.linspace(0, 1, 512)
        taus = np.linspace(0.05, 0.95, 19)
        out = invert_cdf(grid, grid, taus)
        np.testing.assert_allclose(out, taus, atol=1.0 / 1024)

    def test_exact_at_grid_knots(self):
        grid = np.linspace(0, 1, 11)
        cdf = grid**2
        assert invert_cdf(cdf, grid, [cdf[4]])[0] == grid[4]

    def test_round_trip(self):
        grid = np.linspace(0, 1, 512)
        cdf = 0.5 * grid + 0.5 * grid**3
        for tau in np.linspace(0.05, 0.95, 19):
            z = invert_cdf(cdf, grid, [tau])[0]
            back = np.interp(z, grid, cdf)
            assert abs(back - tau) <= 1.0 / 512

    def test_rejects_bad_levels(self):
        grid = np.linspace(0, 1, 16)
        for tau in (0.0, 1.0, -0.5, 1.5):
            with pytest.raises(ValueError):
                invert_cdf(grid, grid, [tau])

    def test_rejects_decreasing_cdf(self):
        grid = np.linspace(0, 1, 16)
        with pytest.raises(ValueError):
            invert_cdf(grid[::-1], grid, [0.5])

    def test_monotone_in_tau(self, small_fit):
        surf = quantile_surface(small_fit, np.array([0.7]))
        taus = np.linspace(0.01, 0.99, 99)
        q = surf.tau_to_y(taus)
        assert np.all(np.diff(q) >= -1e-12)


class TestPredictQuantiles:
    def test_non_crossing(self, small_fit):
        Xq = np.linspace(0, 2, 25)[:, None]
        preds = predict_quantiles(small_fit, Xq, [0.05, 0.5, 0.95])
        assert np.all(preds[:, 0] <= preds[:, 1] + 1e-12)
        assert np.all(preds[:, 1] <= preds[:, 2] + 1e-12)

    def test_affine_response_equivariance(self):
        X, y = small_data(n=40)
        nuts = NutsConfig(n_iter=250, n_warmup=100, thin=3, seed=2)
        fit1 = fit(X, y, interior=5, hidden=3, nuts=nuts, n_chains=1)
        fit2 = fit(X, 2.0 * y + 3.0, interior=5, hidden=3, nuts=nuts, n_chains=1)
        Xq = X[:7]
        q1 = predict_quantiles(fit1, Xq, [0.1, 0.5, 0.9])
        q2 = predict_quantiles(fit2, Xq, [0.1, 0.5, 0.9])
        np.testing.assert_allclose(q2, 2.0 * q1 + 3.0, atol=1e-8)


class TestWaic:
    def test_identical_draws(self):
        ll = np.tile(np.array([[-1.2], [-0.7], [-2.0]]), (1, 5))
        w, p_w, lppd = waic(ll)
        assert p_w == 0.0
        assert w == pytest.approx(-2.0 * ll[:, 0].sum())
        assert lppd == pytest.approx(ll[:, 0].sum())

    def test_noise_draw_never_decreases_penalty(self):
        rng = np.random.default_rng(0)
        base = np.tile(rng.normal(-1.0, 0.2, (20, 1)), (1, 4))
        _, p0, _ = waic(base)
        for _ in range(10):
            extra = base[:, :1] + rng.normal(0, 0.3, (20, 1))
            _, p1, _ = waic(np.hstack([base, extra]))
            assert p1 >= p0 - 1e-12

    def test_single_draw_rejected(self):
        with pytest.raises(ValueError):
            waic(np.zeros((5, 1)))


class TestGridSearch:
    def test_single_cell_trivially_selected(self):
        X, y = small_data(n=40)
        best, table = grid_search(X, y, [5], [3], nuts=SMALL_NUTS, n_chains=1)
        assert len(table) == 1
        assert best.cfg.kv.interior == 5
        assert table[0]["error"] is None

    def test_table_shape_and_argmin(self):
        X, y = small_data(n=40)
        nuts = NutsConfig(n_iter=200, n_warmup=80, thin=4, seed=3)
        best, table = grid_search(X, y, [5, 8], [3, 4], nuts=nuts, n_chains=1)
        assert len(table) == 4
        ok = [r for r in table if r["error"] is None]
        winner = min(ok, key=lambda r: r["waic"])
        assert (best.cfg.kv.interior, best.cfg.shape.V) == (winner["p"], winner["V"])

    def test_empty_grid_rejected(self):
        X, y = small_data(n=20)
        with pytest.raises(ValueError):
            grid_search(X, y, [], [3], nuts=SMALL_NUTS)
