"""Single-hidden-layer network producing simplex-constrained spline weights.

The network maps a covariate vector to one unconstrained score per basis
function; a row-wise softmax then projects the scores onto the unit simplex.
Weights are stored in non-centered form: standardized matrices together with
log-scales, so the effective input-hidden weights are the standardized ones
scaled per input row by ``exp(sigma_tilde)`` and the hidden-output weights
are scaled globally by ``exp(gamma_tilde)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = ["NetworkShape", "WeightState", "forward_scores", "init_state", "softmax_rows"]


@dataclass(frozen=True)
class NetworkShape:
    """Dimensions of the coefficient network.

    Parameters
    ----------
    d : int
        Number of covariates (input dimension), >= 1.
    V : int
        Hidden width, >= 1.
    M : int
        Output dimension (number of spline basis functions), >= 2.
    """

    d: int
    V: int
    M: int

    def __post_init__(self):
        if self.d < 1 or self.V < 1 or self.M < 2:
            raise ValueError(f"invalid network shape d={self.d}, V={self.V}, M={self.M}")

    @property
    def n_params(self) -> int:
        """Length of the packed unconstrained parameter vector."""
        return (self.d + 1) * self.V + (self.V + 1) * self.M + (self.d + 1) + 1


@dataclass(frozen=True)
class WeightState:
    """Non-centered network weights and log-scales.

    Attributes
    ----------
    b1 : numpy.ndarray
        Standardized input-hidden weights, shape ``(d + 1, V)``; row 0 is
        the bias row.
    b2 : numpy.ndarray
        Standardized hidden-output weights, shape ``(V + 1, M)``; row 0 is
        the bias row.
    sigma_tilde : numpy.ndarray
        Per-input-row log-scales, length ``d + 1`` (entry 0 scales the bias
        row of ``b1``).
    gamma_tilde : float
        Log-scale shared by every entry of ``b2``.
    """

    b1: np.ndarray = field(repr=False)
    b2: np.ndarray = field(repr=False)
    sigma_tilde: np.ndarray = field(repr=False)
    gamma_tilde: float

    def __post_init__(self):
        for arr in (self.b1, self.b2, self.sigma_tilde):
            arr.setflags(write=False)
        if self.b1.shape[1] + 1 != self.b2.shape[0]:
            raise ValueError(
                f"inconsistent hidden width: b1 has {self.b1.shape[1]} columns "
                f"but b2 has {self.b2.shape[0]} rows"
            )
        if self.sigma_tilde.shape != (self.b1.shape[0],):
            raise ValueError(
                f"sigma_tilde must have one entry per b1 row; got {self.sigma_tilde.shape}"
            )

    @property
    def shape(self) -> NetworkShape:
        return NetworkShape(d=self.b1.shape[0] - 1, V=self.b1.shape[1], M=self.b2.shape[1])

    def pack(self) -> np.ndarray:
        """Flatten to a single unconstrained parameter vector."""
        return np.concatenate([
            self.b1.ravel(),
            self.b2.ravel(),
            self.sigma_tilde,
            [self.gamma_tilde],
        ])

    @classmethod
    def unpack(cls, vec: np.ndarray, shape: NetworkShape) -> "WeightState":
        """Rebuild a state from a packed vector."""
        vec = np.asarray(vec, dtype=float)
        if vec.shape != (shape.n_params,):
            raise ValueError(f"expected packed vector of length {shape.n_params}, got {vec.shape}")
        n1 = (shape.d + 1) * shape.V
        n2 = (shape.V + 1) * shape.M
        b1 = vec[:n1].reshape(shape.d + 1, shape.V).copy()
        b2 = vec[n1 : n1 + n2].reshape(shape.V + 1, shape.M).copy()
        sigma_tilde = vec[n1 + n2 : n1 + n2 + shape.d + 1].copy()
        gamma_tilde = float(vec[-1])
        return cls(b1=b1, b2=b2, sigma_tilde=sigma_tilde, gamma_tilde=gamma_tilde)

    @staticmethod
    def param_names(shape: NetworkShape) -> list[str]:
        """Names of the packed parameters, in packing order."""
        names = [f"B1[{i},{j}]" for i in range(shape.d + 1) for j in range(shape.V)]
        names += [f"B2[{i},{j}]" for i in range(shape.V + 1) for j in range(shape.M)]
        names += [f"sigma_tilde[{j}]" for j in range(shape.d + 1)]
        names.append("gamma_tilde")
        return names


def forward_scores(X: np.ndarray, w: WeightState) -> np.ndarray:
    """Unconstrained scores ``U`` for each observation and basis function.

    The covariate matrix is augmented with a leading column of ones, scaled
    per input row by ``exp(sigma_tilde)``, passed through the tanh hidden
    layer, augmented again with a bias column, and multiplied by the
    ``exp(gamma_tilde)``-scaled output weights.

    Parameters
    ----------
    X : numpy.ndarray
        Covariates, shape ``(n, d)``.
    w : WeightState

    Returns
    -------
    numpy.ndarray
        Scores, shape ``(n, M)``.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    shape = w.shape
    if X.shape[1] != shape.d:
        raise ValueError(f"X has {X.shape[1]} columns but the network expects {shape.d}")
    xt = np.hstack([np.ones((X.shape[0], 1)), X])
    hidden = np.tanh(xt @ (np.exp(w.sigma_tilde)[:, None] * w.b1))
    v0 = np.hstack([np.ones((X.shape[0], 1)), hidden])
    return v0 @ (np.exp(w.gamma_tilde) * w.b2)


def softmax_rows(U: np.ndarray) -> np.ndarray:
    """Row-wise softmax with max subtraction for overflow safety.

    Every output row is non-negative and sums to 1.

    Raises
    ------
    ValueError
        If the input contains non-finite entries.
    """
    U = np.atleast_2d(np.asarray(U, dtype=float))
    if not np.all(np.isfinite(U)):
        raise ValueError("softmax input must be finite")
    shifted = U - U.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def init_state(shape: NetworkShape, rng_seed: int) -> WeightState:
    """Random initial state: standard-normal weights, unit scales.

    Deterministic given the seed.
    """
    rng = np.random.default_rng(rng_seed)
    b1 = rng.standard_normal((shape.d + 1, shape.V))
    b2 = rng.standard_normal((shape.V + 1, shape.M))
    return WeightState(
        b1=b1,
        b2=b2,
        sigma_tilde=np.zeros(shape.d + 1),
        gamma_tilde=0.0,
    )
