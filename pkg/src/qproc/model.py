"""End-to-end fit/predict pipeline.

Fitting min-max normalizes the response and every covariate to [0, 1], runs
independent NUTS chains over the weight posterior, and stores the
per-observation log-likelihood of every kept draw.  Prediction averages the
conditional CDF over posterior draws on a dense grid, inverts it by linear
interpolation, and maps the result back to the original response scale.
Because every quantile level is read off one monotone CDF, predicted
quantile curves cannot cross.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from qproc.network import NetworkShape, WeightState, forward_scores, softmax_rows
from qproc.nuts import Chain, NutsConfig, run_chains_parallel
from qproc.posterior import Dataset, LogPosterior, PosteriorConfig
from qproc.splines import build_knots, eval_ispline

__all__ = [
    "FitResult",
    "Normalization",
    "QuantileSurface",
    "fit",
    "grid_search",
    "invert_cdf",
    "posterior_mean_cdf",
    "predict_quantiles",
    "quantile_surface",
    "waic",
]

DEFAULT_GRID_SIZE = 512


@dataclass(frozen=True)
class Normalization:
    """Min-max maps for the response and each covariate."""

    y_min: float
    y_max: float
    x_min: np.ndarray = field(repr=False)
    x_max: np.ndarray = field(repr=False)

    def normalize_y(self, y: np.ndarray) -> np.ndarray:
        return (np.asarray(y, dtype=float) - self.y_min) / (self.y_max - self.y_min)

    def denormalize_y(self, z: np.ndarray) -> np.ndarray:
        return self.y_min + np.asarray(z, dtype=float) * (self.y_max - self.y_min)

    def normalize_X(self, X: np.ndarray, clamp: bool = False) -> np.ndarray:
        """Map covariates to [0, 1]; query points outside the training range
        are clamped with a warning when ``clamp`` is set."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        Xn = (X - self.x_min) / (self.x_max - self.x_min)
        if clamp:
            if Xn.size and (Xn.min() < 0.0 or Xn.max() > 1.0):
                warnings.warn(
                    "query covariates outside the training range were clamped",
                    stacklevel=2,
                )
            Xn = np.clip(Xn, 0.0, 1.0)
        return Xn


@dataclass
class FitResult:
    """Posterior sample of the model plus everything needed to predict.

    ``loglik_matrix`` has one row per training observation and one column
    per kept draw (chains concatenated in order).
    """

    chains: list[Chain]
    cfg: PosteriorConfig
    normalization: Normalization
    loglik_matrix: np.ndarray = field(repr=False)
    data: Dataset = None

    @property
    def n_draws(self) -> int:
        return sum(c.n_kept for c in self.chains)

    def draws(self) -> np.ndarray:
        """All kept draws pooled across chains, shape ``(T, n_params)``."""
        return np.vstack([c.draws for c in self.chains])

    def state(self, t: int) -> WeightState:
        return WeightState.unpack(self.draws()[t], self.cfg.shape)


def _validate_table(X: np.ndarray, y: np.ndarray):
    bad = np.argwhere(~np.isfinite(X))
    if bad.size:
        raise ValueError(f"non-finite covariate cell at row {bad[0][0]}, column {bad[0][1]}")
    bad = np.argwhere(~np.isfinite(y))
    if bad.size:
        raise ValueError(f"non-finite response at row {bad[0][0]}")


def fit(
    X: np.ndarray,
    y: np.ndarray,
    *,
    interior: int = 5,
    hidden: int = 5,
    degree: int = 2,
    a: float = 30.0,
    nuts: NutsConfig,
    n_chains: int = 2,
    n_jobs: int = 1,
) -> FitResult:
    """Fit the model to raw covariates and response.

    Parameters
    ----------
    X : numpy.ndarray
        Raw covariates, shape ``(n, d)``; categorical columns must already
        be encoded numerically.
    y : numpy.ndarray
        Raw response, length ``n``; must not be constant.
    interior, hidden, degree : int
        Spline subdivisions ``p``, hidden width ``V``, spline degree ``r``.
    a : float
        Half-normal prior scale on the weight scales.
    nuts : NutsConfig
        Sampler settings; chain ``i`` uses seed ``nuts.seed + i``.
    n_chains, n_jobs : int
        Number of chains and worker processes.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    y = np.atleast_1d(np.asarray(y, dtype=float))
    if X.shape[0] != y.shape[0]:
        raise ValueError(f"X has {X.shape[0]} rows but y has {y.shape[0]}")
    _validate_table(X, y)
    if y.max() == y.min():
        raise ValueError("response is constant; cannot min-max normalize")
    x_min, x_max = X.min(axis=0), X.max(axis=0)
    flat = np.nonzero(x_max == x_min)[0]
    if flat.size:
        raise ValueError(f"covariate column {flat[0]} is constant; cannot min-max normalize")

    norm = Normalization(y_min=float(y.min()), y_max=float(y.max()), x_min=x_min, x_max=x_max)
    data = Dataset(X=norm.normalize_X(X), z=norm.normalize_y(y), y_min=norm.y_min, y_max=norm.y_max)
    kv = build_knots(degree, interior)
    cfg = PosteriorConfig(kv=kv, shape=NetworkShape(d=X.shape[1], V=hidden, M=kv.basis_count), a=a)

    chains = run_chains_parallel(n_chains, data, cfg, nuts, n_jobs=n_jobs)

    post = LogPosterior(data, cfg)
    cols = [post.log_likelihood_per_obs(state) for chain in chains for state in chain.states()]
    loglik_matrix = np.column_stack(cols) if cols else np.zeros((data.n, 0))
    return FitResult(
        chains=chains, cfg=cfg, normalization=norm, loglik_matrix=loglik_matrix, data=data
    )


def _mean_theta(fit: FitResult, Xn: np.ndarray) -> np.ndarray:
    """Posterior-mean simplex weights at normalized query points, ``(B, M)``."""
    if fit.n_draws == 0:
        raise ValueError("fit contains no draws")
    acc = np.zeros((Xn.shape[0], fit.cfg.shape.M))
    total = 0
    for chain in fit.chains:
        for state in chain.states():
            acc += softmax_rows(forward_scores(Xn, state))
            total += 1
    return acc / total


def _theta_per_draw(fit: FitResult, Xn: np.ndarray, draw_indices=None) -> np.ndarray:
    """Simplex weights per draw, ``(T, B, M)``."""
    draws = fit.draws()
    if draw_indices is not None:
        draws = draws[np.asarray(draw_indices)]
    out = np.empty((draws.shape[0], Xn.shape[0], fit.cfg.shape.M))
    for t, vec in enumerate(draws):
        state = WeightState.unpack(vec, fit.cfg.shape)
        out[t] = softmax_rows(forward_scores(Xn, state))
    return out


def _default_grid(n: int = DEFAULT_GRID_SIZE) -> np.ndarray:
    return np.linspace(0.0, 1.0, n)


def posterior_mean_cdf(fit: FitResult, x: np.ndarray, z_grid: np.ndarray | None = None) -> np.ndarray:
    """Posterior-mean conditional CDF of the normalized response at one query point.

    Averaging the CDF over draws commutes with the basis expansion, so this
    is the mean simplex weight vector applied to the integrated basis.  The
    result starts at exactly 0, ends at exactly 1, and is non-decreasing.
    """
    if z_grid is None:
        z_grid = _default_grid()
    x = np.atleast_2d(np.asarray(x, dtype=float))
    xn = fit.normalization.normalize_X(x, clamp=True)
    theta = _mean_theta(fit, xn)
    ivals = eval_ispline(fit.cfg.kv, z_grid).values
    return (ivals @ theta[0]).ravel()


def invert_cdf(cdf_values: np.ndarray, z_grid: np.ndarray, taus) -> np.ndarray:
    """Quantiles of a tabulated CDF by linear interpolation.

    Treats ``cdf_values`` as inputs and ``z_grid`` as outputs; exact at grid
    knots and non-decreasing in the quantile level.

    Raises
    ------
    ValueError
        If any level is outside (0, 1) or the CDF is not non-decreasing.
    """
    taus = np.atleast_1d(np.asarray(taus, dtype=float))
    if np.any(taus <= 0.0) or np.any(taus >= 1.0):
        raise ValueError("quantile levels must lie strictly inside (0, 1)")
    cdf = np.asarray(cdf_values, dtype=float)
    if np.any(np.diff(cdf) < -1e-12):
        raise ValueError("cdf_values must be non-decreasing")
    cdf = np.maximum.accumulate(cdf)

    idx = np.searchsorted(cdf, taus, side="left")
    idx = np.clip(idx, 1, len(cdf) - 1)
    lo, hi = cdf[idx - 1], cdf[idx]
    with np.errstate(divide="ignore", invalid="ignore"):
        frac = np.where(hi > lo, (taus - lo) / (hi - lo), 1.0)
    z = z_grid[idx - 1] + frac * (z_grid[idx] - z_grid[idx - 1])
    return np.where(hi == taus, z_grid[idx], z)


@dataclass(frozen=True)
class QuantileSurface:
    """Posterior-mean CDF at one query point with its inverse on the raw scale."""

    z_grid: np.ndarray = field(repr=False)
    cdf_values: np.ndarray = field(repr=False)
    normalization: Normalization = field(repr=False)

    def tau_to_y(self, taus) -> np.ndarray:
        """Quantiles at the requested levels, on the original response scale."""
        zq = invert_cdf(self.cdf_values, self.z_grid, taus)
        return self.normalization.denormalize_y(zq)


def quantile_surface(fit: FitResult, x, z_grid: np.ndarray | None = None) -> QuantileSurface:
    """Bundle the posterior-mean CDF at ``x`` with its quantile inverse."""
    if z_grid is None:
        z_grid = _default_grid()
    cdf = posterior_mean_cdf(fit, x, z_grid)
    return QuantileSurface(z_grid=z_grid, cdf_values=cdf, normalization=fit.normalization)


def _invert_cdf_matrix(cdfs: np.ndarray, z_grid: np.ndarray, taus: np.ndarray) -> np.ndarray:
    """Row-wise CDF inversion, ``(B, N) -> (B, K)``."""
    out = np.empty((cdfs.shape[0], taus.shape[0]))
    for i in range(cdfs.shape[0]):
        out[i] = invert_cdf(cdfs[i], z_grid, taus)
    return out


def predict_quantiles(
    fit: FitResult,
    X_query: np.ndarray,
    taus,
    z_grid: np.ndarray | None = None,
) -> np.ndarray:
    """Predicted quantiles on the original response scale.

    Returns a matrix with one row per query point and one column per
    quantile level; each row is non-decreasing across increasing levels.
    """
    if z_grid is None:
        z_grid = _default_grid()
    taus = np.atleast_1d(np.asarray(taus, dtype=float))
    X_query = np.atleast_2d(np.asarray(X_query, dtype=float))
    xn = fit.normalization.normalize_X(X_query, clamp=True)
    theta = _mean_theta(fit, xn)
    ivals = eval_ispline(fit.cfg.kv, z_grid).values
    cdfs = theta @ ivals.T
    zq = _invert_cdf_matrix(cdfs, z_grid, taus)
    return fit.normalization.denormalize_y(zq)


def predict_quantiles_per_draw(
    fit: FitResult,
    X_query: np.ndarray,
    taus,
    draw_indices=None,
    z_grid: np.ndarray | None = None,
) -> np.ndarray:
    """Quantiles from each draw's own CDF, shape ``(T, B, K)``.

    Pointwise percentiles of the first axis give posterior credible bands;
    the point estimate remains the posterior-mean-CDF inversion.
    """
    if z_grid is None:
        z_grid = _default_grid()
    taus = np.atleast_1d(np.asarray(taus, dtype=float))
    X_query = np.atleast_2d(np.asarray(X_query, dtype=float))
    xn = fit.normalization.normalize_X(X_query, clamp=True)
    thetas = _theta_per_draw(fit, xn, draw_indices)
    ivals = eval_ispline(fit.cfg.kv, z_grid).values
    out = np.empty((thetas.shape[0], xn.shape[0], taus.shape[0]))
    for t in range(thetas.shape[0]):
        cdfs = thetas[t] @ ivals.T
        out[t] = fit.normalization.denormalize_y(_invert_cdf_matrix(cdfs, z_grid, taus))
    return out


def waic(loglik_matrix: np.ndarray) -> tuple[float, float, float]:
    """Widely applicable information criterion from per-draw log-likelihoods.

    Parameters
    ----------
    loglik_matrix : numpy.ndarray
        Shape ``(n_obs, n_draws)`` with at least two draws.

    Returns
    -------
    (waic, p_waic, lppd)
        ``lppd`` is the sum of log mean predictive densities, ``p_waic``
        the summed per-observation variance of log densities, and
        ``waic = -2 (lppd - p_waic)``.
    """
    ll = np.atleast_2d(np.asarray(loglik_matrix, dtype=float))
    if ll.shape[1] < 2:
        raise ValueError("WAIC requires at least two draws")
    if not np.all(np.isfinite(ll)):
        raise ValueError("loglik_matrix must be finite")
    n_draws = ll.shape[1]
    lppd = float(np.sum(logsumexp(ll, axis=1) - np.log(n_draws)))
    p_waic = float(np.sum(ll.var(axis=1, ddof=1)))
    return -2.0 * (lppd - p_waic), p_waic, lppd


def grid_search(
    X: np.ndarray,
    y: np.ndarray,
    p_list,
    V_list,
    *,
    degree: int = 2,
    a: float = 30.0,
    nuts: NutsConfig,
    n_chains: int = 2,
    n_jobs: int = 1,
):
    """Fit every (p, V) combination and select the smallest-WAIC fit.

    Returns
    -------
    (FitResult, list[dict])
        The selected fit and one record per grid cell with keys ``p``,
        ``V``, ``waic``, ``p_waic``, ``lppd`` and ``error`` (None on
        success).  Selection considers successful cells only.
    """
    p_list = list(p_list)
    V_list = list(V_list)
    if not p_list or not V_list:
        raise ValueError("grid lists must be non-empty")
    table = []
    best = None
    for p in p_list:
        for V in V_list:
            rec = {"p": int(p), "V": int(V), "waic": None, "p_waic": None, "lppd": None, "error": None}
            try:
                result = fit(
                    X,
                    y,
                    interior=p,
                    hidden=V,
                    degree=degree,
                    a=a,
                    nuts=nuts,
                    n_chains=n_chains,
                    n_jobs=n_jobs,
                )
                w, p_w, lppd = waic(result.loglik_matrix)
                rec.update(waic=w, p_waic=p_w, lppd=lppd)
                if best is None or w < best[0]:
                    best = (w, result)
            except Exception as exc:
                rec["error"] = str(exc)
            table.append(rec)
    if best is None:
        raise RuntimeError("every grid cell failed; see the returned table for messages")
    return best[1], table
