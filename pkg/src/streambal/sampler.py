"""Sequential balanced sampling over a bounded pool of undecided units.

Units are pushed one at a time.  Once the pool reaches its capacity the
sampler resolves units: it picks the pooled unit with the largest current
probability, reorders the remaining pool by distance to it (stream order
when there are no coordinates), and searches for the smallest candidate
count whose compensation program is feasible.  The randomized update then
either rejects the pivot (probability 1 - q) and adds the compensations to
the candidates, or selects it (probability q) and subtracts them scaled by
(1 - q) / q.  Either branch leaves every balancing equation untouched and
keeps each unit's expected outcome equal to its inclusion probability.

After the stream ends, `finish` drains the pool the same way and, when the
program can no longer be satisfied, lands the stragglers by suppressing
balancing columns one at a time (last column first, never a column equal to
the inclusion probabilities, which is what guarantees a fixed sample size).
If nothing remains to balance on, leftover units are decided directly from
their current probabilities.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .core import Unit
from .errors import (
    ConfigurationError,
    DimensionError,
    InvariantError,
    ValidationError,
)
from .lp import _bounds_arrays, _solve_core

PHASE_FLIGHT = "flight"
PHASE_LANDING = "landing"
PHASE_PRE_DECIDED = "pre-decided"

#: Relative tolerance used to recognize an auxiliary column as the
#: inclusion-probability column (protected during landing).
_PI_COLUMN_RTOL = 1e-12


@dataclass(frozen=True)
class DecisionRecord:
    """One emitted decision: the audit trail of the sampler."""

    unit_id: int
    outcome: int
    step: int
    j_used: int
    phase: str

    def as_line(self) -> str:
        return f"{self.step},{self.unit_id},{self.outcome},{self.phase},{self.j_used}"


@dataclass(frozen=True)
class SamplerConfig:
    """Tuning knobs of the sequential sampler.

    Attributes:
        window: pool capacity M; decisions are triggered when the pool fills.
        seed: seed of the deterministic counter-based generator.
        initial_j: first candidate-set size tried (pivot included); defaults
            to p + 1 and must exceed the number of balancing columns.
        max_j: cap on the candidate-set growth; defaults to the window.
        spatial_reordering: reorder candidates by distance to the pivot;
            defaults to on exactly when coordinates are present.
        integer_tolerance: probabilities this close to 0 or 1 are decided.
    """

    window: int
    seed: int
    initial_j: int | None = None
    max_j: int | None = None
    spatial_reordering: bool | None = None
    integer_tolerance: float = 1e-9


class PoolEntry:
    """Mutable per-unit state while the unit sits in the pool."""

    __slots__ = ("unit_id", "stream_index", "base_pi", "cur_pi", "weights",
                 "coords", "deferred")

    def __init__(self, unit_id, stream_index, base_pi, weights, coords):
        self.unit_id = unit_id
        self.stream_index = stream_index
        self.base_pi = base_pi
        self.cur_pi = base_pi
        self.weights = weights          # aux / base_pi, shape (p,)
        self.coords = coords            # tuple of floats or None
        self.deferred = False


def select_pivot(pool: Sequence[PoolEntry], indices=None) -> int:
    """Index of the pool entry with the largest current probability.

    Ties break on the smallest stream index, so equal-probability pools are
    processed in arrival order.
    """
    if indices is None:
        indices = range(len(pool))
    best = -1
    for i in indices:
        e = pool[i]
        if best < 0:
            best = i
            continue
        eb = pool[best]
        if e.cur_pi > eb.cur_pi or (
            e.cur_pi == eb.cur_pi and e.stream_index < eb.stream_index
        ):
            best = i
    if best < 0:
        raise ValueError("pool is empty")
    return best


def reorder_candidates(
    pool: Sequence[PoolEntry], pivot_index: int, spatial: bool = True
) -> list[int]:
    """Non-pivot pool indices, nearest to the pivot first.

    Distance is Euclidean on the stored coordinates; without coordinates (or
    with spatial reordering off) candidates keep their arrival order.
    Distance ties break on the stream index.
    """
    pivot = pool[pivot_index]
    others = [i for i in range(len(pool)) if i != pivot_index]
    if spatial and pivot.coords is not None:
        pc = pivot.coords

        def key(i):
            c = pool[i].coords
            d = 0.0
            for a, b in zip(c, pc):
                d += (a - b) * (a - b)
            return (d, pool[i].stream_index)

        others.sort(key=key)
    else:
        others.sort(key=lambda i: pool[i].stream_index)
    return others


class StreamSampler:
    """Single-writer sequential sampler; one instance per stream.

    All methods must be called from one thread at a time.  Given the same
    seed and push sequence, the decision log is reproducible bit for bit:
    every pivot decision consumes exactly one uniform draw.
    """

    def __init__(
        self,
        config: SamplerConfig,
        p: int,
        q: int = 0,
        cost_fn: Callable[[int, np.ndarray], np.ndarray] | None = None,
    ):
        if p < 0 or q < 0:
            raise ConfigurationError("dimensions must be nonnegative")
        if config.window < 1:
            raise ConfigurationError("window must be a positive integer")
        initial_j = config.initial_j if config.initial_j is not None else p + 1
        max_j = config.max_j if config.max_j is not None else config.window
        if initial_j <= p:
            raise ConfigurationError(
                f"initial_j ({initial_j}) must exceed the number of balancing "
                f"columns ({p})"
            )
        if not initial_j <= max_j <= config.window:
            raise ConfigurationError(
                "need initial_j <= max_j <= window "
                f"(got {initial_j}, {max_j}, {config.window})"
            )
        if config.integer_tolerance <= 0:
            raise ConfigurationError("integer_tolerance must be positive")

        self.config = config
        self.p = p
        self.q = q
        self._initial_j = initial_j
        self._max_j = max_j
        self._tol = config.integer_tolerance
        self._spatial = (
            config.spatial_reordering
            if config.spatial_reordering is not None
            else q > 0
        )
        if self._spatial and q == 0:
            raise ConfigurationError("spatial reordering requires coordinates")
        self._cost_fn = cost_fn if cost_fn is not None else _default_costs
        self._rng = np.random.Generator(np.random.Philox(config.seed))

        self._pool: list[PoolEntry] = []
        self._records: list[DecisionRecord] = []
        self._seen_ids: list[int] = []
        self._outcomes: dict[int, int] = {}
        self._weights_by_id: dict[int, np.ndarray] = {}
        self._decided_balance = np.zeros(p)
        self._pi_column = np.ones(p, dtype=bool)
        self._active_cols = list(range(p))
        self._in_landing = False
        self._landing_invoked = False
        self._finished = False
        self._step_count = 0
        self._j_total = 0
        self._next_stream_index = 0

    # ------------------------------------------------------------------
    # streaming API

    def push(self, unit: Unit) -> list[DecisionRecord]:
        """Admit one unit; returns every decision emitted as a consequence."""
        if self._finished:
            raise ConfigurationError("stream already finished")
        aux = np.atleast_1d(np.asarray(unit.aux, dtype=float))
        if aux.shape != (self.p,):
            raise DimensionError(
                f"unit {unit.id}: aux has length {aux.size}, expected {self.p}"
            )
        coords = None
        if self._spatial:
            if unit.coords is None:
                raise DimensionError(f"unit {unit.id}: coordinates required")
            c = np.atleast_1d(np.asarray(unit.coords, dtype=float))
            if c.shape != (self.q,):
                raise DimensionError(
                    f"unit {unit.id}: coords has length {c.size}, expected {self.q}"
                )
            coords = tuple(float(v) for v in c)
        if unit.id in self._outcomes or any(
            e.unit_id == unit.id for e in self._pool
        ):
            raise ValidationError(f"duplicate unit id {unit.id}")

        pi = float(unit.pi)
        if not np.isfinite(pi) or pi < 0.0 or pi > 1.0:
            raise ValidationError(
                f"unit {unit.id}: inclusion probability {unit.pi!r} outside [0, 1]"
            )
        start = len(self._records)
        self._seen_ids.append(unit.id)
        stream_index = self._next_stream_index
        self._next_stream_index += 1

        if pi >= 1.0 - self._tol:
            self._weights_by_id[unit.id] = aux / pi
            self._decide(unit.id, 1, j_used=0, phase=PHASE_PRE_DECIDED)
            return list(self._records[start:])
        if pi <= self._tol:
            self._weights_by_id[unit.id] = np.zeros(self.p)
            self._decide(unit.id, 0, j_used=0, phase=PHASE_PRE_DECIDED)
            return list(self._records[start:])

        weights = aux / pi
        self._weights_by_id[unit.id] = weights
        self._pi_column &= np.abs(aux - pi) <= _PI_COLUMN_RTOL * max(1.0, pi)
        entry = PoolEntry(unit.id, stream_index, pi, weights, coords)
        # A fresh arrival changes every pivot's candidate set, so previously
        # stuck pivots get another chance.
        self._clear_deferrals()
        self._pool.append(entry)

        while len(self._pool) >= self.config.window:
            rec = self.step()
            if rec is None and all(e.deferred for e in self._pool):
                break
        return list(self._records[start:])

    def step(self) -> DecisionRecord | None:
        """Resolve one pivot if possible.

        Returns the pivot's decision record, or None when every pool entry is
        deferred (no feasible program at any admissible candidate count); the
        deferred units wait for new arrivals or for the landing phase.
        """
        eligible = [i for i, e in enumerate(self._pool) if not e.deferred]
        if not eligible:
            return None
        piv_idx = select_pivot(self._pool, eligible)
        pivot = self._pool[piv_idx]
        order = reorder_candidates(self._pool, piv_idx, self._spatial)

        active = self._active_cols
        q = pivot.cur_pi
        target = q * pivot.weights[active]
        j_start = self._initial_j if not self._in_landing else len(active) + 1
        j_cap = min(self._max_j, len(self._pool))
        if j_cap < j_start:
            pivot.deferred = True
            return None

        m_full = j_cap - 1
        cols = np.empty((len(active), m_full))
        pis = np.empty(m_full)
        for col in range(m_full):
            e = self._pool[order[col]]
            cols[:, col] = e.weights[active]
            pis[col] = e.cur_pi
        lo, hi = _bounds_arrays(q, pis)

        # Interval screen: per row, the reachable sum ignoring the coupling
        # between rows.  A candidate count failing it is certainly
        # infeasible, so skipping its solve cannot change the first feasible
        # candidate count.
        up = np.cumsum(np.where(cols > 0.0, cols * hi, cols * lo), axis=1)
        dn = np.cumsum(np.where(cols > 0.0, cols * lo, cols * hi), axis=1)
        reach = (
            (up >= target[:, None] - 1e-9) & (dn <= target[:, None] + 1e-9)
        ).all(axis=0)

        for j in range(j_start, j_cap + 1):
            m = j - 1
            if not reach[m - 1]:
                continue
            ranks = np.arange(1, m + 1, dtype=float)
            sol = _solve_core(
                np.ascontiguousarray(cols[:, :m]),
                np.asarray(self._cost_fn(j, ranks), dtype=float),
                target,
                lo[:m],
                hi[:m],
            )
            if sol.feasible:
                self._step_count += 1
                self._j_total += j
                return self._apply(piv_idx, order[:m], sol.v, j_used=j)
        pivot.deferred = True
        return None

    def apply_update(
        self, pivot_index: int, candidate_indices: Sequence[int], v
    ) -> str:
        """Apply one randomized update directly; returns the branch taken.

        Validates the compensation vector against the box bounds first; a
        violation means the caller breached the solver contract.
        """
        v = np.asarray(v, dtype=float)
        pivot = self._pool[pivot_index]
        if len(candidate_indices) != v.size:
            raise InvariantError("compensation vector misaligned with candidates")
        if v.size:
            pis = np.array([self._pool[i].cur_pi for i in candidate_indices])
            lo, hi = _bounds_arrays(pivot.cur_pi, pis)
            if np.any(v < lo - 1e-9) or np.any(v > hi + 1e-9):
                raise InvariantError("compensation outside its box bounds")
        rec = self._apply(pivot_index, list(candidate_indices), v,
                          j_used=v.size + 1)
        return "select" if rec.outcome == 1 else "reject"

    def finish(self) -> tuple[np.ndarray, list[DecisionRecord]]:
        """Drain and land the pool; returns (sample vector, new records).

        The sample vector is aligned with the arrival order of all seen
        units.  Calling finish twice is harmless; the second call returns an
        empty addendum.
        """
        if self._finished:
            return self.sample_vector(), []
        start = len(self._records)
        self._drain()
        if self._pool:
            self._landing_invoked = True
            self._in_landing = True
            while self._pool:
                droppable = [c for c in self._active_cols if not self._pi_column[c]]
                if not droppable:
                    self._land_remaining()
                    break
                self._active_cols.remove(max(droppable))
                self._clear_deferrals()
                self._drain()
        self._finished = True
        return self.sample_vector(), list(self._records[start:])

    # ------------------------------------------------------------------
    # inspection

    @property
    def pool(self) -> tuple[PoolEntry, ...]:
        return tuple(self._pool)

    @property
    def decisions(self) -> tuple[DecisionRecord, ...]:
        return tuple(self._records)

    @property
    def stats(self) -> dict:
        return {
            "steps": self._step_count,
            "mean_j": (self._j_total / self._step_count) if self._step_count else 0.0,
            "landing_invoked": self._landing_invoked,
            "decided": len(self._outcomes),
            "seen": len(self._seen_ids),
        }

    def sample_vector(self) -> np.ndarray:
        """0/1 outcomes in arrival order; undecided units raise."""
        try:
            return np.array(
                [self._outcomes[i] for i in self._seen_ids], dtype=np.int64
            )
        except KeyError as exc:
            raise ConfigurationError(
                "sample vector requested before the stream was finished"
            ) from exc

    def selected_ids(self) -> list[int]:
        return [i for i in self._seen_ids if self._outcomes.get(i) == 1]

    def current_balance(self) -> np.ndarray:
        """Running value of sum_k (x_k / pi_k) * (probability or decision).

        Constant across flight steps up to rounding; the conservation of this
        vector is exactly what makes the final sample balanced.
        """
        total = self._decided_balance.copy()
        for e in self._pool:
            total += e.weights * e.cur_pi
        return total

    # ------------------------------------------------------------------
    # internals

    def _clear_deferrals(self) -> None:
        for e in self._pool:
            e.deferred = False

    def _drain(self) -> None:
        while self._pool:
            rec = self.step()
            if rec is None and all(e.deferred for e in self._pool):
                return

    def _decide(self, unit_id: int, outcome: int, j_used: int, phase: str) -> DecisionRecord:
        self._outcomes[unit_id] = outcome
        if outcome:
            self._decided_balance += self._weights_by_id[unit_id]
        rec = DecisionRecord(
            unit_id=unit_id,
            outcome=outcome,
            step=self._step_count,
            j_used=j_used,
            phase=phase,
        )
        self._records.append(rec)
        return rec

    def _apply(self, pivot_index, candidate_indices, v, j_used) -> DecisionRecord:
        pivot = self._pool[pivot_index]
        q = pivot.cur_pi
        u = float(self._rng.random())
        if u < q:
            outcome = 1
            factor = -(1.0 - q) / q
        else:
            outcome = 0
            factor = 1.0
        phase = PHASE_LANDING if self._in_landing else PHASE_FLIGHT
        removed = {pivot_index}
        rec = self._decide(pivot.unit_id, outcome, j_used=j_used, phase=phase)
        for k, i in enumerate(candidate_indices):
            e = self._pool[i]
            e.cur_pi += factor * v[k]
            if e.cur_pi <= self._tol:
                e.cur_pi = 0.0
                self._decide(e.unit_id, 0, j_used=j_used, phase=phase)
                removed.add(i)
            elif e.cur_pi >= 1.0 - self._tol:
                e.cur_pi = 1.0
                self._decide(e.unit_id, 1, j_used=j_used, phase=phase)
                removed.add(i)
        self._pool = [e for i, e in enumerate(self._pool) if i not in removed]
        # Updated probabilities change what is feasible, so stuck pivots get
        # retried after every successful step.
        self._clear_deferrals()
        return rec

    def _land_remaining(self) -> None:
        """Decide leftover units directly from their current probabilities.

        With a protected probability column still active, a single systematic
        pass preserves both the marginal probabilities and the fixed sample
        size; otherwise each unit gets an independent draw.
        """
        entries = sorted(self._pool, key=lambda e: e.stream_index)
        self._pool = []
        fixed_size = any(self._pi_column[c] for c in self._active_cols)
        if fixed_size:
            u = float(self._rng.random())
            cum = 0.0
            for e in entries:
                lo = cum
                cum += e.cur_pi
                crossed = math.floor(cum - u) - math.floor(lo - u)
                self._decide(e.unit_id, 1 if crossed >= 1 else 0,
                             j_used=0, phase=PHASE_LANDING)
        else:
            for e in entries:
                u = float(self._rng.random())
                self._decide(e.unit_id, 1 if u < e.cur_pi else 0,
                             j_used=0, phase=PHASE_LANDING)


def _default_costs(j: int, ranks: np.ndarray) -> np.ndarray:
    """Distance-decaying objective weights: the k-th closest candidate gets j - k."""
    return j - ranks
