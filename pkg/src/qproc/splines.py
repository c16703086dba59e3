"""Monotone spline bases on the unit interval.

Two families are evaluated on a shared clamped knot sequence: density-like
basis functions (non-negative, each integrating to one over [0, 1]) and
their running integrals (monotone from 0 to 1).  Convex combinations of the
former model a PDF on [0, 1]; convex combinations of the latter model a CDF.

Evaluation uses the order-recursive definition of Ramsay-style M-splines,
with the integrated basis obtained from the closed-form sum of normalized
B-spline terms of one order higher (no quadrature involved).
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "BasisKind",
    "BasisMatrix",
    "KnotVector",
    "build_knots",
    "eval_ispline",
    "eval_mspline",
]


class BasisKind(enum.Enum):
    """Which of the two spline families a basis matrix holds."""

    M_SPLINE = "m_spline"
    I_SPLINE = "i_spline"


@dataclass(frozen=True)
class KnotVector:
    """Clamped knot sequence on [0, 1].

    Parameters
    ----------
    degree : int
        Polynomial degree ``r >= 1`` of the density-like basis.
    interior : int
        Number ``p >= 2`` of equal-width interior subdivisions.
    knots : numpy.ndarray
        The full non-decreasing sequence of ``p + 2r`` knots: ``r`` zeros,
        the points ``1/p, 2/p, ..., 1``, then ``r`` additional ones.

    Notes
    -----
    The left boundary knot has multiplicity ``r`` while the right has
    ``r + 1``, so every basis function vanishes at 0 and the last one has a
    positive left limit at 1.
    """

    degree: int
    interior: int
    knots: np.ndarray = field(repr=False)

    def __post_init__(self):
        self.knots.setflags(write=False)

    @property
    def order(self) -> int:
        """Spline order (degree + 1) of the density-like basis."""
        return self.degree + 1

    @property
    def basis_count(self) -> int:
        """Number of basis functions, ``p + r - 1``."""
        return self.interior + self.degree - 1


@dataclass(frozen=True)
class BasisMatrix:
    """Basis functions evaluated at a vector of points.

    ``values[i, m]`` holds basis function ``m`` at point ``i``.
    """

    values: np.ndarray = field(repr=False)
    kind: BasisKind

    def __post_init__(self):
        self.values.setflags(write=False)

    @property
    def basis_count(self) -> int:
        return self.values.shape[1]


def build_knots(degree: int, interior: int) -> KnotVector:
    """Construct the clamped knot sequence for the given degree and subdivisions.

    Parameters
    ----------
    degree : int
        Polynomial degree ``r >= 1``.
    interior : int
        Number of equal subdivisions ``p >= 2`` of [0, 1].

    Returns
    -------
    KnotVector

    Raises
    ------
    ValueError
        If ``degree < 1`` or ``interior < 2``.
    """
    if not isinstance(degree, (int, np.integer)) or degree < 1:
        raise ValueError(f"degree must be an integer >= 1, got {degree!r}")
    if not isinstance(interior, (int, np.integer)) or interior < 2:
        raise ValueError(f"interior must be an integer >= 2, got {interior!r}")
    r, p = int(degree), int(interior)
    knots = np.concatenate([
        np.zeros(r),
        np.arange(1, p + 1) / p,
        np.ones(r),
    ])
    return KnotVector(degree=r, interior=p, knots=knots)


def _check_unit_interval(z: np.ndarray) -> np.ndarray:
    z = np.atleast_1d(np.asarray(z, dtype=float))
    if z.ndim != 1:
        raise ValueError(f"evaluation points must be one-dimensional, got shape {z.shape}")
    if not np.all(np.isfinite(z)) or np.any(z < 0.0) or np.any(z > 1.0):
        bad = z[~(np.isfinite(z) & (z >= 0.0) & (z <= 1.0))][:5]
        raise ValueError(f"evaluation points must lie in [0, 1]; offending values {bad}")
    return z


def _mspline_orders(knots: np.ndarray, z: np.ndarray, order: int) -> np.ndarray:
    """All order-`order` M-splines on `knots` at points `z`.

    Returns an array of shape ``(len(z), len(knots) - order)``.  The point
    ``z == 1`` is assigned to the span whose upper knot is the first 1, so
    values at 1 are left limits.
    """
    nk = len(knots)
    upper = knots[-1]
    m = np.zeros((len(z), nk - 1))
    for i in range(nk - 1):
        width = knots[i + 1] - knots[i]
        if width <= 0.0:
            continue
        inside = (z >= knots[i]) & (z < knots[i + 1])
        if knots[i + 1] == upper:
            inside |= z == upper
        m[inside, i] = 1.0 / width
    for k in range(2, order + 1):
        m_next = np.zeros((len(z), nk - k))
        for i in range(nk - k):
            denom = knots[i + k] - knots[i]
            if denom <= 0.0:
                continue
            m_next[:, i] = (
                k
                * ((z - knots[i]) * m[:, i] + (knots[i + k] - z) * m[:, i + 1])
                / ((k - 1) * denom)
            )
        m = m_next
    return m


def eval_mspline(kv: KnotVector, z) -> BasisMatrix:
    """Evaluate the density-like basis at points ``z`` in [0, 1].

    Returns a matrix with one row per point and one column per basis
    function; all entries are non-negative and each column integrates to 1
    over the unit interval.

    Raises
    ------
    ValueError
        If any point lies outside [0, 1].
    """
    z = _check_unit_interval(z)
    values = _mspline_orders(kv.knots, z, kv.order)
    assert values.shape[1] == kv.basis_count
    return BasisMatrix(values=values, kind=BasisKind.M_SPLINE)


def eval_ispline(kv: KnotVector, z) -> BasisMatrix:
    """Evaluate the integrated (monotone) basis at points ``z`` in [0, 1].

    Column ``m`` at point ``z`` equals the integral of the corresponding
    density-like basis function from 0 to ``z``: it is 0 at ``z = 0``,
    1 at ``z = 1``, and non-decreasing in between.  Evaluated through the
    closed-form sum of normalized B-spline terms of order ``r + 2`` on the
    knot sequence extended by one phantom knot at 1.

    Raises
    ------
    ValueError
        If any point lies outside [0, 1].
    """
    z = _check_unit_interval(z)
    knots = kv.knots
    k = kv.order
    n_basis = kv.basis_count
    aug = np.append(knots, 1.0)

    # Normalized B-spline terms (t[m+k+1] - t[m]) * M_{m,k+1} / (k+1); the
    # suffix sum over m gives the partial-zone value of each integral.
    m_high = _mspline_orders(aug, z, k + 1)
    coef = (aug[k + 1 : k + 1 + n_basis] - aug[:n_basis]) / (k + 1)
    terms = m_high * coef
    suffix = np.cumsum(terms[:, ::-1], axis=1)[:, ::-1]

    # Span index j with t[j] <= z < t[j+1]; z == 1 maps to the last
    # non-degenerate span so the left-limit convention applies.
    j = np.searchsorted(knots, z, side="right") - 1
    first_one = int(np.searchsorted(knots, 1.0, side="left"))
    j = np.minimum(j, first_one - 1)

    cols = np.arange(n_basis)
    values = np.where(
        cols[None, :] > j[:, None],
        0.0,
        np.where(cols[None, :] <= j[:, None] - k, 1.0, suffix),
    )
    values = np.clip(values, 0.0, 1.0)
    values[z == 0.0, :] = 0.0
    values[z == 1.0, :] = 1.0
    return BasisMatrix(values=values, kind=BasisKind.I_SPLINE)
