"""Population containers, validation, and design-based estimation basics.

Everything downstream (the sequential sampler, the spread diagnostics, the
simulation harness) works against the types defined here.  A unit carries an
inclusion probability, a vector of auxiliary variables used by the balancing
equations, optional spatial coordinates, and optional study variables.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import ConfigurationError, DimensionError, ValidationError


@dataclass(frozen=True)
class Unit:
    """One population element.

    Attributes:
        id: unique integer identifier.
        pi: first-order inclusion probability, in (0, 1] once validated.
        aux: auxiliary vector entering the balancing equations, shape (p,).
        coords: optional spatial coordinates, shape (q,).
        y: optional study variables, shape (n_y,).
    """

    id: int
    pi: float
    aux: np.ndarray
    coords: np.ndarray | None = None
    y: np.ndarray | None = None


class Population:
    """Ordered collection of validated units; the order is the stream order.

    Provides dense array views (`pis`, `aux`, `coords`, `y`) aligned with that
    order.  Construct via :func:`validate_population` when the input has not
    been checked yet.
    """

    def __init__(self, units: Sequence[Unit]):
        if not units:
            raise ValidationError("population must contain at least one unit")
        units = tuple(units)

        ids = [u.id for u in units]
        if len(set(ids)) != len(ids):
            raise ValidationError("unit ids must be unique")

        p = len(np.atleast_1d(units[0].aux))
        q = 0 if units[0].coords is None else len(np.atleast_1d(units[0].coords))
        has_y = units[0].y is not None
        n_y = 0 if not has_y else len(np.atleast_1d(units[0].y))

        pis = np.empty(len(units))
        aux = np.empty((len(units), p))
        coords = np.empty((len(units), q)) if q else None
        ys = np.empty((len(units), n_y)) if has_y else None

        for i, u in enumerate(units):
            a = np.atleast_1d(np.asarray(u.aux, dtype=float))
            if a.shape != (p,):
                raise DimensionError(
                    f"unit {u.id}: aux has length {a.size}, expected {p}"
                )
            if (u.coords is None) != (q == 0):
                raise DimensionError(f"unit {u.id}: coords presence is inconsistent")
            if (u.y is None) == has_y:
                raise DimensionError(f"unit {u.id}: y presence is inconsistent")
            pis[i] = u.pi
            aux[i] = a
            if q:
                c = np.atleast_1d(np.asarray(u.coords, dtype=float))
                if c.shape != (q,):
                    raise DimensionError(
                        f"unit {u.id}: coords has length {c.size}, expected {q}"
                    )
                coords[i] = c
            if has_y:
                yv = np.atleast_1d(np.asarray(u.y, dtype=float))
                if yv.shape != (n_y,):
                    raise DimensionError(
                        f"unit {u.id}: y has length {yv.size}, expected {n_y}"
                    )
                ys[i] = yv

        self.units = units
        self.p = p
        self.q = q
        self.ids = np.asarray(ids, dtype=np.int64)
        self.pis = pis
        self.aux = aux
        self.coords = coords
        self.y = ys
        self.pre_decided = pis >= 1.0

    def __len__(self) -> int:
        return len(self.units)

    @property
    def expanded_aux(self) -> np.ndarray:
        """Auxiliary matrix expanded by the inclusion probabilities, x_k / pi_k."""
        return self.aux / self.pis[:, None]


def validate_population(raw: Sequence[Unit]) -> Population:
    """Check raw units and assemble a :class:`Population`.

    Units with pi exactly 0 are dropped (with a warning) since they can never
    be sampled and would break the 1/pi expansion everywhere.  Units with
    pi = 1 are kept and flagged pre-decided: they bypass the sampler and are
    always selected.

    Raises:
        ValidationError: non-finite values, pi outside [0, 1], duplicate ids.
        DimensionError: inconsistent aux / coords / y lengths.
    """
    if not raw:
        raise ValidationError("population must contain at least one unit")

    kept: list[Unit] = []
    dropped = 0
    for u in raw:
        pi = float(u.pi)
        if not np.isfinite(pi) or pi < 0.0 or pi > 1.0:
            raise ValidationError(
                f"unit {u.id}: inclusion probability {u.pi!r} outside [0, 1]"
            )
        a = np.atleast_1d(np.asarray(u.aux, dtype=float))
        if not np.all(np.isfinite(a)):
            raise ValidationError(f"unit {u.id}: non-finite auxiliary value")
        if u.coords is not None and not np.all(
            np.isfinite(np.asarray(u.coords, dtype=float))
        ):
            raise ValidationError(f"unit {u.id}: non-finite coordinate")
        if pi == 0.0:
            dropped += 1
            continue
        kept.append(u)

    if dropped:
        warnings.warn(
            f"dropped {dropped} unit(s) with zero inclusion probability",
            stacklevel=2,
        )
    if not kept:
        raise ValidationError("all units have zero inclusion probability")
    return Population(kept)


def population_from_arrays(
    pis,
    aux=None,
    coords=None,
    y=None,
    ids=None,
) -> Population:
    """Convenience constructor from dense arrays.

    `aux` defaults to the pi column itself, which makes the design fixed-size
    when the probabilities sum to an integer.
    """
    pis = np.asarray(pis, dtype=float)
    n = pis.size
    if aux is None:
        aux = pis[:, None]
    aux = np.atleast_2d(np.asarray(aux, dtype=float))
    if aux.shape[0] != n:
        aux = aux.T
    if coords is not None:
        coords = np.atleast_2d(np.asarray(coords, dtype=float))
        if coords.shape[0] != n:
            coords = coords.T
    if y is not None:
        y = np.atleast_2d(np.asarray(y, dtype=float))
        if y.shape[0] != n:
            y = y.T
    if ids is None:
        ids = range(n)
    units = [
        Unit(
            id=int(i),
            pi=float(pis[k]),
            aux=aux[k],
            coords=None if coords is None else coords[k],
            y=None if y is None else y[k],
        )
        for k, i in enumerate(ids)
    ]
    return validate_population(units)


def _check_sample(sample, n: int) -> np.ndarray:
    a = np.asarray(sample)
    if a.shape != (n,):
        raise DimensionError(f"sample has shape {a.shape}, expected ({n},)")
    a = a.astype(float)
    if not np.all((a == 0.0) | (a == 1.0)):
        raise ValidationError("sample entries must be exactly 0 or 1")
    return a


def ht_estimate(sample, pop: Population, var_index: int = 0) -> float:
    """Horvitz-Thompson estimate of the total of one study variable.

    Returns sum over selected units of y_k / pi_k.  An empty sample gives 0.
    """
    if pop.y is None:
        raise ConfigurationError("population carries no study variables")
    if not 0 <= var_index < pop.y.shape[1]:
        raise ConfigurationError(
            f"var_index {var_index} out of range for {pop.y.shape[1]} variable(s)"
        )
    a = _check_sample(sample, len(pop))
    return float(np.dot(a, pop.y[:, var_index] / pop.pis))


def balance_residual(pop: Population, probs) -> np.ndarray:
    """Residual of the balancing equations for a (possibly updated) probability vector.

    Computes sum_k (x_k / pi_k) * probs_k - sum_k x_k, where pi_k are the
    original inclusion probabilities.  A zero vector means the balancing
    equations hold exactly for the current state; in particular the residual
    at probs = pis is identically zero.
    """
    probs = np.asarray(probs, dtype=float)
    if probs.shape != (len(pop),):
        raise DimensionError(
            f"probs has shape {probs.shape}, expected ({len(pop)},)"
        )
    return pop.expanded_aux.T @ probs - pop.aux.sum(axis=0)
