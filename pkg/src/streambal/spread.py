"""Spatial balance diagnostics: the Voronoi B index and Moran's I.

Both statistics summarize how well a realized sample spreads over the
population's coordinates.  B measures, for each sampled unit, the inclusion
probability mass of the population units nearest to it (1 per cell is
perfect); I is a normalized spatial autocorrelation of the sample indicator
under a contiguity weight matrix, where strongly negative values indicate
spatial repulsion.
"""

from __future__ import annotations

import math

import numpy as np
from scipy import sparse
from scipy.spatial.distance import cdist

from .core import Population, _check_sample
from .errors import (
    ConfigurationError,
    DegenerateVarianceError,
    ValidationError,
)

_TIE_RTOL = 1e-12
_TIE_ATOL = 1e-12


class ContiguityMatrix:
    """Sparse nonnegative neighbour weights with zero diagonal.

    `row_sums` holds the diagonal of D, the row-sum matrix used by Moran's I.
    """

    def __init__(self, weights):
        w = sparse.csr_matrix(weights, dtype=float)
        if w.shape[0] != w.shape[1]:
            raise ValidationError("contiguity matrix must be square")
        if w.nnz and w.min() < 0:
            raise ValidationError("contiguity weights must be nonnegative")
        if np.abs(w.diagonal()).max(initial=0.0) > 0:
            raise ValidationError("contiguity diagonal must be zero")
        row_sums = np.asarray(w.sum(axis=1)).ravel()
        if np.any(row_sums <= 0):
            raise ValidationError("every row needs at least one positive weight")
        self.weights = w
        self.row_sums = row_sums

    @property
    def n(self) -> int:
        return self.weights.shape[0]

    def dense(self) -> np.ndarray:
        return self.weights.toarray()


def voronoi_balance(pop: Population, sample) -> float:
    """B index: mean squared deviation from 1 of each cell's probability mass.

    Every population unit is assigned to its nearest sampled unit (Euclidean
    distance on the coordinates, ties split equally among the tied sampled
    units); the index averages (b_i - 1)^2 over the sampled units, where b_i
    is the inclusion-probability sum assigned to unit i.  0 is perfect
    spread.
    """
    if pop.coords is None:
        raise ConfigurationError("population carries no coordinates")
    a = _check_sample(sample, len(pop))
    selected = np.flatnonzero(a == 1.0)
    if selected.size == 0:
        raise ValidationError("sample selects no units")

    d = cdist(pop.coords, pop.coords[selected])
    dmin = d.min(axis=1)
    tied = d <= dmin[:, None] * (1.0 + _TIE_RTOL) + _TIE_ATOL
    shares = tied / tied.sum(axis=1, keepdims=True)
    b = shares.T @ pop.pis
    return float(np.mean((b - 1.0) ** 2))


def build_contiguity_matrix(pop: Population) -> ContiguityMatrix:
    """Nearest-neighbour weights whose rows carry one unit of probability mass.

    For each unit the nearest neighbours (ties broken by index; duplicate
    coordinates rank first) receive weight 1 until their cumulative inclusion
    probability reaches 1; the boundary neighbour gets the fractional weight
    that makes the row's probability-weighted sum exactly 1.  This puts the
    rows on the same "expected mass one" scale as the B index.  Should the
    total mass of all other units fall short of 1, they all get weight 1.

    The construction is a deliberate, swappable choice: Moran's I accepts any
    :class:`ContiguityMatrix`.
    """
    if pop.coords is None:
        raise ConfigurationError("population carries no coordinates")
    n = len(pop)
    if n < 2:
        raise ValidationError("need at least two units to define neighbours")

    d = cdist(pop.coords, pop.coords)
    np.fill_diagonal(d, np.inf)
    pis = pop.pis
    rows, cols, vals = [], [], []
    order_tiebreak = np.arange(n)
    for k in range(n):
        order = np.lexsort((order_tiebreak, d[k]))
        cum = 0.0
        for idx in order[: n - 1]:
            remaining = 1.0 - cum
            if pis[idx] < remaining - 1e-12:
                w = 1.0
                cum += pis[idx]
            else:
                w = remaining / pis[idx]
                cum = 1.0
            rows.append(k)
            cols.append(int(idx))
            vals.append(w)
            if cum >= 1.0:
                break
    w = sparse.csr_matrix((vals, (rows, cols)), shape=(n, n))
    return ContiguityMatrix(w)


def morans_i(sample, w: ContiguityMatrix) -> float:
    """Spatial autocorrelation of the sample indicator under weights W.

    Uses the weighted mean a_w = (a' W 1) / (1' W 1) and, with
    e = a - a_w 1, D the diagonal of row sums and
    C = D^{-1} W - (1 1' W) / (1' W 1), returns

        I = e' W e / sqrt((e' D e) (e' C' D C e)).

    Raises:
        DegenerateVarianceError: the sample is constant (all in or all out)
            or either quadratic form vanishes.
    """
    if not isinstance(w, ContiguityMatrix):
        w = ContiguityMatrix(w)
    a = _check_sample(sample, w.n)
    if a.min() == a.max():
        raise DegenerateVarianceError("constant sample has no spatial variance")

    W = w.weights
    rs = w.row_sums
    total = float(rs.sum())
    col_sums = np.asarray(W.sum(axis=0)).ravel()

    a_bar = float(rs @ a) / total
    e = a - a_bar
    we = W @ e
    num = float(e @ we)
    den_d = float(rs @ (e * e))
    ce = we / rs - (float(col_sums @ e) / total)
    den_g = float(rs @ (ce * ce))
    den = den_d * den_g
    if den <= 0.0 or not np.isfinite(den):
        raise DegenerateVarianceError("variance normalization is degenerate")
    return num / math.sqrt(den)
