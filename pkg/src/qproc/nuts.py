"""No-U-turn sampler with dual-averaging step-size adaptation.

Trajectories are grown by multiplicative doubling until the no-U-turn
criterion fires or the tree depth cap is reached; proposals are drawn with
the slice-variable scheme, and the step size is adapted during warmup by
dual averaging toward a target acceptance statistic.  The mass matrix is the
identity.  Everything operates on packed parameter vectors through a single
callable returning the log density and its gradient.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from joblib import Parallel, delayed

from qproc.network import NetworkShape, WeightState, init_state
from qproc.posterior import Dataset, LogPosterior, PosteriorConfig

__all__ = [
    "Chain",
    "NutsConfig",
    "find_reasonable_epsilon",
    "leapfrog",
    "nuts_step",
    "run_chain",
    "run_chains_parallel",
    "run_nuts",
]

# Energy-error threshold (nats) beyond which a transition is declared
# divergent and its subtree discarded.
DIVERGENCE_THRESHOLD = 1000.0

# Dual-averaging constants.
_DA_GAMMA = 0.05
_DA_T0 = 10.0
_DA_KAPPA = 0.75


@dataclass(frozen=True)
class NutsConfig:
    """Sampler run configuration.

    ``n_iter`` total iterations of which the first ``n_warmup`` adapt the
    step size and are discarded; every ``thin``-th post-warmup draw is kept.
    """

    n_iter: int
    n_warmup: int
    thin: int = 1
    target_accept: float = 0.8
    max_tree_depth: int = 10
    seed: int = 0

    def __post_init__(self):
        if not 0 <= self.n_warmup < self.n_iter:
            raise ValueError(f"need 0 <= n_warmup < n_iter, got {self.n_warmup}, {self.n_iter}")
        if self.thin < 1:
            raise ValueError(f"thin must be >= 1, got {self.thin}")
        if not 0.0 < self.target_accept < 1.0:
            raise ValueError(f"target_accept must be in (0, 1), got {self.target_accept}")
        if not 1 <= self.max_tree_depth <= 15:
            raise ValueError(f"max_tree_depth must be in [1, 15], got {self.max_tree_depth}")

    @property
    def n_kept(self) -> int:
        return (self.n_iter - self.n_warmup) // self.thin


@dataclass
class Chain:
    """Kept draws of one chain plus sampling metadata.

    ``draws`` has one row per kept draw (packed parameter order); the
    ``shape`` is retained so rows can be unpacked to weight states.
    """

    draws: np.ndarray = field(repr=False)
    log_posterior_trace: np.ndarray = field(repr=False)
    accept_stats: float
    step_size: float
    divergence_count: int
    seed: int
    shape: NetworkShape | None = None

    @property
    def n_kept(self) -> int:
        return self.draws.shape[0]

    def state(self, t: int) -> WeightState:
        if self.shape is None:
            raise ValueError("chain has no network shape attached")
        return WeightState.unpack(self.draws[t], self.shape)

    def states(self):
        """Iterate kept draws as weight states."""
        for t in range(self.n_kept):
            yield self.state(t)


def leapfrog(state, momentum, eps, grad_fn):
    """One leapfrog step: half momentum kick, position drift, half kick.

    ``grad_fn`` maps a position to the gradient of the log density.  A zero
    step size is the identity map.  Non-finite gradients propagate to the
    returned arrays rather than raising; callers treat them as divergences.
    """
    q = np.asarray(state, dtype=float)
    p = np.asarray(momentum, dtype=float)
    with np.errstate(invalid="ignore", over="ignore"):
        p_half = p + 0.5 * eps * np.asarray(grad_fn(q), dtype=float)
        q_new = q + eps * p_half
        p_new = p_half + 0.5 * eps * np.asarray(grad_fn(q_new), dtype=float)
    return q_new, p_new


def _leapfrog_cached(fn, q, p, grad, eps):
    """Leapfrog reusing the cached gradient; returns the new tuple or None on overflow."""
    with np.errstate(invalid="ignore", over="ignore"):
        p_half = p + 0.5 * eps * grad
        q_new = q + eps * p_half
        if not np.all(np.isfinite(q_new)):
            return None
        logp_new, grad_new = fn(q_new)
        if not math.isfinite(logp_new) or not np.all(np.isfinite(grad_new)):
            return None
        p_new = p_half + 0.5 * eps * grad_new
        if not np.all(np.isfinite(p_new)):
            return None
    return q_new, p_new, logp_new, grad_new


def find_reasonable_epsilon(fn, q, rng) -> float:
    """Step-size heuristic: double or halve until the one-step acceptance crosses 1/2."""
    eps = 1.0
    logp, grad = fn(q)
    if not math.isfinite(logp):
        raise RuntimeError("initial state has non-finite log density")
    p = rng.standard_normal(q.shape[0])
    joint0 = logp - 0.5 * float(p @ p)

    def joint_after(eps):
        step = _leapfrog_cached(fn, q, p, grad, eps)
        if step is None:
            return -np.inf
        q1, p1, logp1, _ = step
        return logp1 - 0.5 * float(p1 @ p1)

    log_ratio = joint_after(eps) - joint0
    while not math.isfinite(log_ratio) and eps > 1e-10:
        eps *= 0.5
        log_ratio = joint_after(eps) - joint0
    direction = 1.0 if log_ratio > math.log(0.5) else -1.0
    for _ in range(100):
        if direction * log_ratio <= -direction * math.log(2.0):
            break
        eps *= 2.0**direction
        if eps < 1e-10 or eps > 1e7:
            break
        log_ratio = joint_after(eps) - joint0
    return eps


@dataclass
class _Tree:
    q_minus: np.ndarray
    p_minus: np.ndarray
    grad_minus: np.ndarray
    q_plus: np.ndarray
    p_plus: np.ndarray
    grad_plus: np.ndarray
    q_prop: np.ndarray
    logp_prop: float
    grad_prop: np.ndarray
    n: int
    s: bool
    alpha: float
    n_alpha: int
    divergent: bool


def _build_tree(fn, q, p, grad, logu, v, depth, eps, joint0, rng) -> _Tree:
    if depth == 0:
        step = _leapfrog_cached(fn, q, p, grad, v * eps)
        if step is None:
            # Numerical blow-up: treat as an infinitely bad proposal.
            return _Tree(q, p, grad, q, p, grad, q, -np.inf, grad, 0, False, 0.0, 1, True)
        q1, p1, logp1, grad1 = step
        joint = logp1 - 0.5 * float(p1 @ p1)
        n = 1 if logu <= joint else 0
        divergent = joint - logu < -DIVERGENCE_THRESHOLD
        alpha = min(1.0, math.exp(min(0.0, joint - joint0)))
        return _Tree(q1, p1, grad1, q1, p1, grad1, q1, logp1, grad1, n, not divergent, alpha, 1, divergent)

    tree = _build_tree(fn, q, p, grad, logu, v, depth - 1, eps, joint0, rng)
    if tree.s:
        if v == -1:
            sub = _build_tree(
                fn, tree.q_minus, tree.p_minus, tree.grad_minus, logu, v, depth - 1, eps, joint0, rng
            )
            tree.q_minus, tree.p_minus, tree.grad_minus = sub.q_minus, sub.p_minus, sub.grad_minus
        else:
            sub = _build_tree(
                fn, tree.q_plus, tree.p_plus, tree.grad_plus, logu, v, depth - 1, eps, joint0, rng
            )
            tree.q_plus, tree.p_plus, tree.grad_plus = sub.q_plus, sub.p_plus, sub.grad_plus
        if sub.n > 0 and rng.random() < sub.n / max(tree.n + sub.n, 1):
            tree.q_prop, tree.logp_prop, tree.grad_prop = sub.q_prop, sub.logp_prop, sub.grad_prop
        span = tree.q_plus - tree.q_minus
        no_uturn = (span @ tree.p_minus) >= 0.0 and (span @ tree.p_plus) >= 0.0
        tree.s = tree.s and sub.s and no_uturn
        tree.n += sub.n
        tree.alpha += sub.alpha
        tree.n_alpha += sub.n_alpha
        tree.divergent = tree.divergent or sub.divergent
    return tree


def _nuts_transition(fn, q, logp, grad, eps, rng, max_tree_depth):
    """One trajectory from ``q``; returns (q', logp', grad', stats dict)."""
    dim = q.shape[0]
    p0 = rng.standard_normal(dim)
    joint0 = logp - 0.5 * float(p0 @ p0)
    logu = joint0 - rng.exponential()

    q_minus = q_plus = q
    p_minus = p_plus = p0
    grad_minus = grad_plus = grad
    q_cur, logp_cur, grad_cur = q, logp, grad
    n, s, depth = 1, True, 0
    alpha_sum, n_alpha_sum = 0.0, 0
    divergent = False

    while s and depth < max_tree_depth:
        v = 1 if rng.random() < 0.5 else -1
        if v == -1:
            tree = _build_tree(fn, q_minus, p_minus, grad_minus, logu, v, depth, eps, joint0, rng)
            q_minus, p_minus, grad_minus = tree.q_minus, tree.p_minus, tree.grad_minus
        else:
            tree = _build_tree(fn, q_plus, p_plus, grad_plus, logu, v, depth, eps, joint0, rng)
            q_plus, p_plus, grad_plus = tree.q_plus, tree.p_plus, tree.grad_plus
        if tree.s and tree.n > 0 and rng.random() < min(1.0, tree.n / n):
            q_cur, logp_cur, grad_cur = tree.q_prop, tree.logp_prop, tree.grad_prop
        n += tree.n
        span = q_plus - q_minus
        s = tree.s and (span @ p_minus) >= 0.0 and (span @ p_plus) >= 0.0
        alpha_sum += tree.alpha
        n_alpha_sum += tree.n_alpha
        divergent = divergent or tree.divergent
        depth += 1

    stats = {
        "accept_stat": alpha_sum / max(n_alpha_sum, 1),
        "depth": depth,
        "divergent": divergent,
        "logp": logp_cur,
    }
    return q_cur, logp_cur, grad_cur, stats


def nuts_step(current: np.ndarray, eps: float, rng, fn, max_tree_depth: int = 10):
    """Public single-transition interface.

    Parameters
    ----------
    current : numpy.ndarray
        Current packed position.
    eps : float
        Leapfrog step size.
    rng : numpy.random.Generator
    fn : callable
        Maps a position to ``(log density, gradient)``.

    Returns
    -------
    (numpy.ndarray, dict)
        The next position and a stats dict with keys ``accept_stat``,
        ``depth``, ``divergent`` and ``logp``.
    """
    q = np.asarray(current, dtype=float)
    logp, grad = fn(q)
    if not math.isfinite(logp):
        raise RuntimeError("current state has non-finite log density")
    q_new, _, _, stats = _nuts_transition(fn, q, logp, grad, eps, rng, max_tree_depth)
    return q_new, stats


def run_nuts(fn, q0: np.ndarray, nuts: NutsConfig):
    """Run one adaptive chain over a generic log density.

    Returns
    -------
    dict
        ``draws`` (kept x dim), ``logp`` (kept,), ``accept_mean``,
        ``step_size``, ``divergences``.
    """
    rng = np.random.default_rng(nuts.seed)
    q = np.asarray(q0, dtype=float)
    logp, grad = fn(q)
    if not math.isfinite(logp):
        raise RuntimeError("initial state has non-finite log density")

    eps = find_reasonable_epsilon(fn, q, rng)
    mu = math.log(10.0 * eps)
    log_eps_bar = 0.0
    h_bar = 0.0

    n_kept = nuts.n_kept
    draws = np.empty((n_kept, q.shape[0]))
    lp_trace = np.empty(n_kept)
    kept = 0
    divergences = 0
    warmup_divergences = 0
    accept_sum, accept_n = 0.0, 0

    for m in range(1, nuts.n_iter + 1):
        q, logp, grad, stats = _nuts_transition(fn, q, logp, grad, eps, rng, nuts.max_tree_depth)
        if stats["divergent"]:
            divergences += 1
            if m <= nuts.n_warmup:
                warmup_divergences += 1
        if m <= nuts.n_warmup:
            frac = 1.0 / (m + _DA_T0)
            h_bar = (1.0 - frac) * h_bar + frac * (nuts.target_accept - stats["accept_stat"])
            log_eps = mu - math.sqrt(m) / _DA_GAMMA * h_bar
            eta = m**-_DA_KAPPA
            log_eps_bar = eta * log_eps + (1.0 - eta) * log_eps_bar
            eps = math.exp(log_eps)
            if m == nuts.n_warmup:
                if warmup_divergences == nuts.n_warmup:
                    raise RuntimeError(
                        "every warmup iteration diverged; the step size is likely "
                        "far too large for this posterior (check data scaling)"
                    )
                eps = math.exp(log_eps_bar)
        else:
            accept_sum += stats["accept_stat"]
            accept_n += 1
            if (m - nuts.n_warmup) % nuts.thin == 0 and kept < n_kept:
                draws[kept] = q
                lp_trace[kept] = logp
                kept += 1

    return {
        "draws": draws,
        "logp": lp_trace,
        "accept_mean": accept_sum / max(accept_n, 1),
        "step_size": eps,
        "divergences": divergences,
    }


def run_chain(data: Dataset, cfg: PosteriorConfig, nuts: NutsConfig) -> Chain:
    """Sample the weight posterior for one chain.

    The initial state is drawn from :func:`qproc.network.init_state` with
    the chain seed, so distinct seeds give independent initializations.
    """
    post = LogPosterior(data, cfg)
    q0 = init_state(cfg.shape, nuts.seed).pack()
    out = run_nuts(post.value_and_grad, q0, nuts)
    return Chain(
        draws=out["draws"],
        log_posterior_trace=out["logp"],
        accept_stats=out["accept_mean"],
        step_size=out["step_size"],
        divergence_count=out["divergences"],
        seed=nuts.seed,
        shape=cfg.shape,
    )


def run_chains_parallel(
    k: int,
    data: Dataset,
    cfg: PosteriorConfig,
    nuts: NutsConfig,
    n_jobs: int = 1,
) -> list[Chain]:
    """Run ``k`` independent chains with seeds ``nuts.seed + i``.

    Chains share the immutable data and basis cache but own their RNG and
    state, so results do not depend on ``n_jobs``.  Per-chain failures are
    re-raised with the chain index attached.
    """
    if k < 1:
        raise ValueError(f"number of chains must be >= 1, got {k}")
    configs = [
        NutsConfig(
            n_iter=nuts.n_iter,
            n_warmup=nuts.n_warmup,
            thin=nuts.thin,
            target_accept=nuts.target_accept,
            max_tree_depth=nuts.max_tree_depth,
            seed=nuts.seed + i,
        )
        for i in range(k)
    ]

    def one(i):
        try:
            return run_chain(data, cfg, configs[i])
        except Exception as exc:
            raise RuntimeError(f"chain {i} (seed {configs[i].seed}) failed: {exc}") from exc

    if n_jobs == 1 or k == 1:
        return [one(i) for i in range(k)]
    return Parallel(n_jobs=min(n_jobs, k))(delayed(one)(i) for i in range(k))
