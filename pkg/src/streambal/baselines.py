"""Reference designs the simulation harness compares against.

local_pivotal spreads a sample spatially by letting nearby unit pairs trade
probability mass until everything is integer.  rejective_poisson approximates
the fixed-size maximum-entropy design by conditioning independent Poisson
draws on the realized size; it uses the target probabilities directly as
working probabilities, so for unequal designs the realized inclusion
probabilities deviate slightly (the harness reports realized frequencies,
which makes that visible).  poisson_sample is the unconditional sanity check.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import Population
from .errors import ConfigurationError, SamplingError

KNOWN_DESIGNS = ("proposed", "local_pivotal", "rejective_poisson", "poisson")


@dataclass(frozen=True)
class DesignSpec:
    """Which design to run, plus the parameters only some designs need."""

    kind: str
    window: int | None = None  # proposed only

    def __post_init__(self):
        if self.kind not in KNOWN_DESIGNS:
            raise ConfigurationError(
                f"unknown design {self.kind!r}; expected one of {KNOWN_DESIGNS}"
            )
        if self.kind == "proposed" and (self.window is None or self.window < 1):
            raise ConfigurationError("the proposed design needs a positive window")


def poisson_sample(pop: Population, rng: np.random.Generator) -> np.ndarray:
    """Independent Bernoulli(pi_k) draws; random sample size."""
    return (rng.random(len(pop)) < pop.pis).astype(np.int64)


def rejective_poisson(
    pop: Population,
    n: int,
    rng: np.random.Generator,
    max_tries: int = 1_000_000,
) -> np.ndarray:
    """Poisson draws conditioned on size n by rejection.

    Requires the probabilities to sum to n (within 1e-6), which keeps the
    acceptance rate workable.  Raises SamplingError when the retry budget is
    exhausted.
    """
    total = float(pop.pis.sum())
    if abs(total - n) > 1e-6:
        raise ConfigurationError(
            f"probabilities sum to {total:.6f}, expected the target size {n}"
        )
    pis = pop.pis
    for _ in range(max_tries):
        a = rng.random(len(pop)) < pis
        if int(a.sum()) == n:
            return a.astype(np.int64)
    raise SamplingError(f"no size-{n} draw accepted within {max_tries} tries")


def local_pivotal(pop: Population, rng: np.random.Generator) -> np.ndarray:
    """Local pivotal draw: nearby pairs repel until all probabilities are integer.

    Each sweep visits the still-fractional units in a freshly randomized
    order; the visited unit duels its nearest fractional neighbour (ties
    broken by index) with the probability-preserving pivotal update.  A lone
    leftover unit is decided by a direct draw on its probability.
    """
    if pop.coords is None:
        raise ConfigurationError("local_pivotal requires coordinates")
    tol = 1e-9
    pis = pop.pis.copy()
    coords = pop.coords

    while True:
        frac = np.flatnonzero((pis > tol) & (pis < 1.0 - tol))
        if frac.size == 0:
            break
        if frac.size == 1:
            k = int(frac[0])
            pis[k] = 1.0 if rng.random() < pis[k] else 0.0
            break
        for i in rng.permutation(frac):
            i = int(i)
            if not tol < pis[i] < 1.0 - tol:
                continue
            others = np.flatnonzero((pis > tol) & (pis < 1.0 - tol))
            others = others[others != i]
            if others.size == 0:
                break
            diffs = coords[others] - coords[i]
            j = int(others[np.argmin(np.einsum("ij,ij->i", diffs, diffs))])
            _pivotal_update(pis, i, j, float(rng.random()))
    return np.rint(pis).astype(np.int64)


def _pivotal_update(pis: np.ndarray, i: int, j: int, u: float) -> None:
    """One pivotal duel between units i and j; preserves both expectations."""
    s = pis[i] + pis[j]
    if s <= 1.0:
        if u < pis[j] / s:
            pis[i], pis[j] = 0.0, s
        else:
            pis[i], pis[j] = s, 0.0
    else:
        if u < (1.0 - pis[j]) / (2.0 - s):
            pis[i], pis[j] = 1.0, s - 1.0
        else:
            pis[i], pis[j] = s - 1.0, 1.0
    for k in (i, j):
        if pis[k] < 1e-9:
            pis[k] = 0.0
        elif pis[k] > 1.0 - 1e-9:
            pis[k] = 1.0
