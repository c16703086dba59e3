"""Accumulated-local-effect summaries of fitted quantile predictors.

Main effects accumulate, across percentile bins of one covariate, the
average change in prediction when that covariate moves between the bin's
edges with all other covariates held at their observed values.  Joint
effects of a covariate pair accumulate second differences over a cell grid;
the grid's own one-dimensional content is removed and the two main effects
are added back, so the joint surface carries mains plus interaction, and
subtracting the mains again isolates a pure interaction that vanishes for
predictors additive in the pair.  Every returned effect is centered so its
count-weighted mean over the data is zero.

Variable importance is the spread of an effect: standard deviation over the
upper bin edges for continuous covariates, one quarter of the range over all
levels for categorical ones.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from qproc.model import FitResult, predict_quantiles, predict_quantiles_per_draw

__all__ = [
    "AleBins",
    "AleEstimate",
    "AleKind",
    "PosteriorAle",
    "ale_interaction",
    "ale_main",
    "ale_second_order",
    "make_bins",
    "posterior_ale",
    "vi_score",
]

DEFAULT_MAIN_BINS = 40
DEFAULT_PAIR_BINS = 20


class AleKind(enum.Enum):
    MAIN = "main"
    JOINT = "joint"
    INTERACTION = "interaction"


@dataclass(frozen=True)
class AleBins:
    """Bin edges and per-bin observation counts for one covariate.

    Edges are the k/K sample percentiles for continuous covariates (type-7,
    linear interpolation) with duplicates merged, or the sorted unique
    values for categorical ones.  Observations at the minimum belong to the
    first bin, so counts always sum to n.
    """

    edges: np.ndarray = field(repr=False)
    counts: np.ndarray = field(repr=False)
    categorical: bool = False

    def __post_init__(self):
        self.edges.setflags(write=False)
        self.counts.setflags(write=False)

    @property
    def n_bins(self) -> int:
        return len(self.edges) - 1


@dataclass(frozen=True)
class AleEstimate:
    """A centered effect at one quantile level.

    ``effect`` holds values at bin edges: a vector of length K+1 for main
    effects, or a (Kj+1) x (Kl+1) grid for joint and interaction effects.
    """

    tau: float
    effect: np.ndarray = field(repr=False)
    vi: float
    kind: AleKind
    covariates: tuple[int, ...]
    bins: tuple[AleBins, ...]
    cell_counts: np.ndarray | None = field(default=None, repr=False)


def make_bins(values: np.ndarray, K: int, categorical: bool = False, name=None) -> AleBins:
    """Partition a covariate sample into ALE bins.

    Raises
    ------
    ValueError
        For a constant continuous covariate (named via ``name``), or when
        ``K < 2`` or ``n < K`` for continuous covariates.
    """
    values = np.asarray(values, dtype=float).ravel()
    label = f"covariate {name}" if name is not None else "covariate"
    if categorical:
        edges = np.unique(values)
        if len(edges) < 2:
            raise ValueError(f"{label} has fewer than two distinct levels")
    else:
        if K < 2:
            raise ValueError(f"need K >= 2 bins, got {K}")
        if len(values) < K:
            raise ValueError(f"need at least K={K} observations, got {len(values)}")
        if values.max() == values.min():
            raise ValueError(f"{label} is constant; cannot form percentile bins")
        edges = np.unique(np.percentile(values, np.linspace(0.0, 100.0, K + 1)))

    counts = _bin_counts(values, edges)
    # Percentile ties can leave interior bins empty; drop their upper edge
    # (merging with the right neighbor) until every bin is populated.
    while len(edges) > 2 and np.any(counts == 0):
        k = int(np.nonzero(counts == 0)[0][0])
        edges = np.delete(edges, k + 1 if k + 1 < len(edges) - 1 else k)
        counts = _bin_counts(values, edges)
    return AleBins(edges=edges, counts=counts, categorical=categorical)


def _bin_counts(values: np.ndarray, edges: np.ndarray) -> np.ndarray:
    idx = _bin_index(values, edges)
    return np.bincount(idx - 1, minlength=len(edges) - 1)


def _bin_index(values: np.ndarray, edges: np.ndarray) -> np.ndarray:
    """1-based bin index; bin k covers (edges[k-1], edges[k]], minimum included in bin 1."""
    return np.clip(np.searchsorted(edges, values, side="left"), 1, len(edges) - 1)


def _center(uncentered: np.ndarray, counts: np.ndarray) -> tuple[np.ndarray, float]:
    """Subtract the count-weighted mean over upper bin edges."""
    shift = float(np.sum(counts * uncentered[1:]) / counts.sum())
    return uncentered - shift, shift


def _vi(effect: np.ndarray, categorical: bool) -> float:
    """Spread summary: population SD over upper edges, or range/4 over all levels."""
    if categorical:
        return float(np.ptp(effect) / 4.0)
    vals = effect[1:] if effect.ndim == 1 else effect[1:, 1:].ravel()
    return float(np.sqrt(np.mean((vals - vals.mean()) ** 2)))


def ale_main(
    predict,
    X: np.ndarray,
    j: int,
    K: int = DEFAULT_MAIN_BINS,
    tau: float = 0.5,
    categorical: bool = False,
    bins: AleBins | None = None,
) -> AleEstimate:
    """Centered main effect of covariate ``j`` on the ``tau`` prediction.

    ``predict(X, tau)`` must return one prediction per row; it is called
    twice on the full sample (each observation evaluated at its bin's two
    edges).
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if not 0 <= j < X.shape[1]:
        raise ValueError(f"covariate index {j} out of range for {X.shape[1]} columns")
    if bins is None:
        bins = make_bins(X[:, j], K, categorical=categorical, name=j)
    edges = bins.edges
    idx = _bin_index(X[:, j], edges)

    x_hi = X.copy()
    x_hi[:, j] = edges[idx]
    x_lo = X.copy()
    x_lo[:, j] = edges[idx - 1]
    delta = np.asarray(predict(x_hi, tau)) - np.asarray(predict(x_lo, tau))

    bin_means = np.bincount(idx - 1, weights=delta, minlength=bins.n_bins) / bins.counts
    uncentered = np.concatenate([[0.0], np.cumsum(bin_means)])
    effect, _ = _center(uncentered, bins.counts)
    return AleEstimate(
        tau=float(tau),
        effect=effect,
        vi=_vi(effect, bins.categorical),
        kind=AleKind.MAIN,
        covariates=(j,),
        bins=(bins,),
    )


def _fill_empty_cells(D: np.ndarray, counts: np.ndarray) -> np.ndarray:
    """Give empty grid cells the value of the nearest populated cell (index distance)."""
    if not np.any(counts == 0):
        return D
    filled = np.argwhere(counts > 0)
    empty = np.argwhere(counts == 0)
    out = D.copy()
    for cell in empty:
        dist = np.abs(filled - cell).sum(axis=1)
        out[tuple(cell)] = D[tuple(filled[np.argmin(dist)])]
    return out


def _axis_correction(H: np.ndarray, cell_counts: np.ndarray, axis: int) -> np.ndarray:
    """Accumulated count-weighted average strip difference of H along one axis.

    This is the one-dimensional content the doubly-cumulated surface picks
    up from the data distribution; subtracting it leaves a pure interaction.
    """
    if axis == 1:
        return _axis_correction(H.T, cell_counts.T, 0)
    strip = np.diff(H, axis=0)
    padded = np.zeros((cell_counts.shape[0], cell_counts.shape[1] + 2))
    padded[:, 1:-1] = cell_counts
    edge_w = 0.5 * (padded[:, :-1] + padded[:, 1:])
    num = (strip * edge_w).sum(axis=1)
    den = edge_w.sum(axis=1)
    return np.concatenate([[0.0], np.cumsum(num / den)])


def ale_second_order(
    predict,
    X: np.ndarray,
    j: int,
    l: int,
    K: int = DEFAULT_PAIR_BINS,
    tau: float = 0.5,
) -> AleEstimate:
    """Centered joint effect of covariates ``j`` and ``l`` (mains plus interaction).

    Second differences of the prediction across each cell's corners are
    averaged per cell, accumulated over the grid, stripped of their
    one-dimensional content, and recombined with the two main effects; the
    result is centered to count-weighted mean zero.  Swapping ``j`` and
    ``l`` transposes the grid exactly.
    """
    if j == l:
        raise ValueError("joint effect requires two distinct covariates")
    if j > l:
        est = ale_second_order(predict, X, l, j, K=K, tau=tau)
        return AleEstimate(
            tau=est.tau,
            effect=est.effect.T,
            vi=est.vi,
            kind=est.kind,
            covariates=(j, l),
            bins=(est.bins[1], est.bins[0]),
            cell_counts=est.cell_counts.T,
        )

    X = np.atleast_2d(np.asarray(X, dtype=float))
    bins_j = make_bins(X[:, j], K, name=j)
    bins_l = make_bins(X[:, l], K, name=l)
    kj = _bin_index(X[:, j], bins_j.edges)
    kl = _bin_index(X[:, l], bins_l.edges)
    Kj, Kl = bins_j.n_bins, bins_l.n_bins
    cell_counts = np.zeros((Kj, Kl), dtype=int)
    np.add.at(cell_counts, (kj - 1, kl - 1), 1)

    corners = []
    for ej, el in ((kj, kl), (kj - 1, kl), (kj, kl - 1), (kj - 1, kl - 1)):
        Xm = X.copy()
        Xm[:, j] = bins_j.edges[ej]
        Xm[:, l] = bins_l.edges[el]
        corners.append(np.asarray(predict(Xm, tau)))
    second_diff = corners[0] - corners[1] - corners[2] + corners[3]

    sums = np.zeros((Kj, Kl))
    np.add.at(sums, (kj - 1, kl - 1), second_diff)
    with np.errstate(invalid="ignore"):
        D = np.where(cell_counts > 0, sums / np.maximum(cell_counts, 1), 0.0)
    D = _fill_empty_cells(D, cell_counts)

    H = np.zeros((Kj + 1, Kl + 1))
    H[1:, 1:] = D.cumsum(axis=0).cumsum(axis=1)
    core = H - _axis_correction(H, cell_counts, 0)[:, None] - _axis_correction(H, cell_counts, 1)[None, :]

    main_j = ale_main(predict, X, j, tau=tau, bins=bins_j)
    main_l = ale_main(predict, X, l, tau=tau, bins=bins_l)
    joint = core + main_j.effect[:, None] + main_l.effect[None, :]
    joint = joint - _grid_weighted_mean(joint, cell_counts)
    return AleEstimate(
        tau=float(tau),
        effect=joint,
        vi=_vi(joint, categorical=False),
        kind=AleKind.JOINT,
        covariates=(j, l),
        bins=(bins_j, bins_l),
        cell_counts=cell_counts,
    )


def _grid_weighted_mean(grid: np.ndarray, cell_counts: np.ndarray) -> float:
    return float(np.sum(cell_counts * grid[1:, 1:]) / cell_counts.sum())


def ale_interaction(joint: AleEstimate, main_j: AleEstimate, main_l: AleEstimate) -> AleEstimate:
    """Pure interaction: the joint effect minus both mains on the grid edges.

    Vanishes (up to rounding) for predictors additive in the pair.

    Raises
    ------
    ValueError
        On kind, covariate, or bin-grid mismatch.
    """
    if joint.kind is not AleKind.JOINT:
        raise ValueError("first argument must be a joint effect")
    if main_j.kind is not AleKind.MAIN or main_l.kind is not AleKind.MAIN:
        raise ValueError("mains must be main effects")
    j, l = joint.covariates
    if j == l:
        raise ValueError("interaction of a covariate with itself is undefined")
    if (main_j.covariates[0], main_l.covariates[0]) != (j, l):
        raise ValueError(
            f"mains for covariates {main_j.covariates[0]}, {main_l.covariates[0]} do not "
            f"match joint pair ({j}, {l})"
        )
    if not np.array_equal(joint.bins[0].edges, main_j.bins[0].edges) or not np.array_equal(
        joint.bins[1].edges, main_l.bins[0].edges
    ):
        raise ValueError("bin grids of the joint and main effects do not match")

    surface = joint.effect - main_j.effect[:, None] - main_l.effect[None, :]
    surface = surface - _grid_weighted_mean(surface, joint.cell_counts)
    categorical = joint.bins[0].categorical and joint.bins[1].categorical
    return AleEstimate(
        tau=joint.tau,
        effect=surface,
        vi=_vi(surface, categorical),
        kind=AleKind.INTERACTION,
        covariates=joint.covariates,
        bins=joint.bins,
        cell_counts=joint.cell_counts,
    )


def vi_score(est: AleEstimate, categorical: bool | None = None) -> float:
    """Variable importance of an effect; see module docstring for conventions."""
    if categorical is None:
        categorical = all(b.categorical for b in est.bins)
    return _vi(est.effect, categorical)


@dataclass(frozen=True)
class PosteriorAle:
    """Per-draw ALE summaries at one quantile level."""

    tau: float
    kind: AleKind
    covariates: tuple[int, ...]
    bins: tuple[AleBins, ...]
    mean: np.ndarray = field(repr=False)
    lower: np.ndarray = field(repr=False)
    upper: np.ndarray = field(repr=False)
    vi_mean: float = 0.0
    vi_lower: float = 0.0
    vi_upper: float = 0.0
    per_draw_effects: np.ndarray | None = field(default=None, repr=False)


def _fit_predictor(fit: FitResult):
    def predict(X, tau):
        return predict_quantiles(fit, X, [tau])[:, 0]

    return predict


def _draw_predictor(fit: FitResult, t: int):
    def predict(X, tau):
        return predict_quantiles_per_draw(fit, X, [tau], draw_indices=[t])[0, :, 0]

    return predict


def posterior_ale(
    fit: FitResult,
    covariates,
    K: int | None = None,
    taus=(0.05, 0.5, 0.95),
    draw_subset=None,
    X: np.ndarray | None = None,
) -> list[PosteriorAle]:
    """ALE computed per posterior draw, with pointwise mean and 95% bands.

    Parameters
    ----------
    covariates : int or (int, int)
        A single index for a main effect or a pair for an interaction.
    draw_subset : int or sequence of int, optional
        Number of evenly spaced draws (default up to 200) or explicit draw
        indices.
    X : numpy.ndarray, optional
        Raw-scale covariate sample; defaults to the training covariates.

    Returns
    -------
    list[PosteriorAle]
        One summary per requested quantile level.
    """
    if X is None:
        if fit.data is None:
            raise ValueError("fit carries no training data; pass X explicitly")
        X = fit.data.X * (fit.normalization.x_max - fit.normalization.x_min) + fit.normalization.x_min
    X = np.atleast_2d(np.asarray(X, dtype=float))

    total = fit.n_draws
    if draw_subset is None:
        draw_subset = min(200, total)
    if np.isscalar(draw_subset):
        indices = np.unique(np.linspace(0, total - 1, int(draw_subset)).astype(int))
    else:
        indices = np.asarray(draw_subset, dtype=int)

    pair = not np.isscalar(covariates)
    if K is None:
        K = DEFAULT_PAIR_BINS if pair else DEFAULT_MAIN_BINS

    results = []
    for tau in np.atleast_1d(taus):
        effects = []
        vis = []
        for t in indices:
            predict = _draw_predictor(fit, int(t))
            if pair:
                j, l = covariates
                joint = ale_second_order(predict, X, int(j), int(l), K=K, tau=float(tau))
                mj = ale_main(predict, X, int(j), tau=float(tau), bins=joint.bins[0])
                ml = ale_main(predict, X, int(l), tau=float(tau), bins=joint.bins[1])
                est = ale_interaction(joint, mj, ml)
            else:
                est = ale_main(predict, X, int(covariates), K=K, tau=float(tau))
            effects.append(est.effect)
            vis.append(est.vi)
        stack = np.stack(effects)
        vis = np.asarray(vis)
        results.append(
            PosteriorAle(
                tau=float(tau),
                kind=est.kind,
                covariates=est.covariates,
                bins=est.bins,
                mean=stack.mean(axis=0),
                lower=np.percentile(stack, 2.5, axis=0),
                upper=np.percentile(stack, 97.5, axis=0),
                vi_mean=float(vis.mean()),
                vi_lower=float(np.percentile(vis, 2.5)),
                vi_upper=float(np.percentile(vis, 97.5)),
                per_draw_effects=stack,
            )
        )
    return results
