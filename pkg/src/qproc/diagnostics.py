"""MCMC convergence diagnostics.

Implements rank-normalized split R-hat together with bulk and tail effective
sample sizes.  The monitored scalar for fitted models is the data
log-likelihood of each draw, not individual weights: the network weights
are non-identifiable, so their traces are expected to be multimodal even at
convergence.

Rank normalization maps average ranks through the standard normal quantile
function with the (rank - 3/8) / (S + 1/4) offset.  Autocorrelations are
truncated with Geyer's initial monotone sequence.  R-hat is floored at 1
(values below 1 are finite-sample noise), and ESS is capped at 1.5 times
the total number of draws.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import ndtri
from scipy.stats import rankdata

from qproc.nuts import Chain
from qproc.posterior import Dataset, LogPosterior, PosteriorConfig

__all__ = ["DiagnosticsReport", "loglik_trace", "scalar_diagnostics"]

RHAT_THRESHOLD = 1.05
ESS_THRESHOLD = 100.0
_ESS_CAP_FACTOR = 1.5


@dataclass(frozen=True)
class DiagnosticsReport:
    """Convergence summary for one monitored scalar."""

    rhat: float
    ess_bulk: float
    ess_tail: float
    passed: bool
    degenerate: bool = False

    def row(self, name: str) -> str:
        return (
            f"{name:<16} {self.rhat:>8.4f} {self.ess_bulk:>10.1f} {self.ess_tail:>10.1f} "
            f"{'pass' if self.passed else 'FAIL'}"
        )


def _split_chains(x: np.ndarray) -> np.ndarray:
    """Split each chain in half; drops the middle draw of odd-length chains."""
    k, n = x.shape
    half = n // 2
    return np.vstack([x[:, :half], x[:, n - half :]])


def _rank_normalize(x: np.ndarray) -> np.ndarray:
    ranks = rankdata(x, method="average").reshape(x.shape)
    return ndtri((ranks - 0.375) / (x.size + 0.25))


def _rhat(split: np.ndarray) -> float:
    k, n = split.shape
    chain_means = split.mean(axis=1)
    within = split.var(axis=1, ddof=1).mean()
    between_over_n = chain_means.var(ddof=1)
    if within <= 0.0:
        return np.inf if between_over_n > 0 else np.nan
    var_plus = (n - 1) / n * within + between_over_n
    return max(float(np.sqrt(var_plus / within)), 1.0)


def _autocovariance(x: np.ndarray) -> np.ndarray:
    """Biased autocovariance of one chain via FFT."""
    n = x.shape[0]
    centered = x - x.mean()
    size = 2 ** int(np.ceil(np.log2(2 * n)))
    f = np.fft.rfft(centered, size)
    acov = np.fft.irfft(f * np.conj(f), size)[:n].real
    return acov / n


def _ess(split: np.ndarray) -> float:
    """Combined-chain ESS with Geyer initial monotone truncation."""
    k, n = split.shape
    if n < 4:
        return np.nan
    acov = np.vstack([_autocovariance(split[i]) for i in range(k)])
    chain_var = acov[:, 0] * n / (n - 1)
    within = chain_var.mean()
    if within <= 0.0:
        return np.nan
    var_plus = (n - 1) / n * within
    if k > 1:
        var_plus += split.mean(axis=1).var(ddof=1)

    rho = 1.0 - (within - acov.mean(axis=0)) / var_plus
    rho[0] = 1.0

    # Geyer pairs: keep while sums of adjacent autocorrelations stay
    # positive, then enforce monotone non-increase.
    max_pairs = (n - 1) // 2
    pair_sums = []
    for t in range(max_pairs):
        s = rho[2 * t] + rho[2 * t + 1]
        if s <= 0.0 and t > 0:
            break
        pair_sums.append(s)
    pair_sums = np.minimum.accumulate(pair_sums) if pair_sums else np.array([1.0])
    tau = -1.0 + 2.0 * float(np.sum(pair_sums))
    total = k * n
    ess = total / tau if tau > 0 else _ESS_CAP_FACTOR * total
    return float(min(ess, _ESS_CAP_FACTOR * total))


def scalar_diagnostics(chains: np.ndarray) -> DiagnosticsReport:
    """Diagnostics for one scalar monitored across chains.

    Parameters
    ----------
    chains : numpy.ndarray
        Array of shape ``(k, n)`` with ``k >= 2`` chains of ``n >= 4`` draws.

    Returns
    -------
    DiagnosticsReport
        Passing requires R-hat below 1.05 and both ESS values above 100.
        Constant chains yield the ``degenerate`` flag and a failing report
        instead of dividing by zero.
    """
    chains = np.atleast_2d(np.asarray(chains, dtype=float))
    k, n = chains.shape
    if k < 2:
        raise ValueError(f"need at least 2 chains, got {k}")
    if n < 4:
        raise ValueError(f"need at least 4 draws per chain, got {n}")

    if np.ptp(chains) == 0.0:
        return DiagnosticsReport(
            rhat=np.nan, ess_bulk=np.nan, ess_tail=np.nan, passed=False, degenerate=True
        )

    bulk = _split_chains(_rank_normalize(chains))
    rhat = _rhat(bulk)
    ess_bulk = _ess(bulk)

    q05, q95 = np.quantile(chains, [0.05, 0.95])
    tail_vals = []
    for q in (q05, q95):
        indicator = _split_chains((chains <= q).astype(float))
        if np.ptp(indicator) == 0.0:
            tail_vals.append(np.nan)
        else:
            tail_vals.append(_ess(indicator))
    ess_tail = float(np.nanmin(tail_vals)) if not all(np.isnan(v) for v in tail_vals) else np.nan

    ok = (
        np.isfinite(rhat)
        and rhat < RHAT_THRESHOLD
        and np.isfinite(ess_bulk)
        and ess_bulk > ESS_THRESHOLD
        and np.isfinite(ess_tail)
        and ess_tail > ESS_THRESHOLD
    )
    return DiagnosticsReport(
        rhat=float(rhat), ess_bulk=float(ess_bulk), ess_tail=float(ess_tail), passed=bool(ok)
    )


def loglik_trace(chains: list[Chain], data: Dataset, cfg: PosteriorConfig) -> np.ndarray:
    """Per-draw data log-likelihood for each chain, shape ``(k, n_kept)``.

    This is the scalar the diagnostics monitor for fitted models.
    """
    if not chains:
        raise ValueError("no chains supplied")
    post = LogPosterior(data, cfg)
    out = np.empty((len(chains), chains[0].n_kept))
    for i, chain in enumerate(chains):
        for t in range(chain.n_kept):
            out[i, t] = post.log_likelihood(chain.state(t))
    return out
