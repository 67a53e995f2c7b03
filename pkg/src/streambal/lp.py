"""Dense bounded-variable simplex for the per-step compensation program.

When the sampler resolves one unit it must move the compensating amounts
v_k of its pool neighbours so that the balancing equations survive the
decision.  That is a tiny linear program: maximize a distance-weighted sum
of the v_k subject to p equality constraints (one per balancing column) and
per-candidate box bounds that keep both branch outcomes inside [0, 1].

Problems here have at most a handful of equality rows and a few dozen
variables, so a dense two-phase simplex with explicit lower/upper variable
bounds is both the simplest and the fastest adequate tool.  Determinism
matters more than asymptotics: entering variables follow Bland's rule
(smallest eligible index) and ties in the ratio test break on the smallest
basic-variable index, so identical inputs always produce identical vertices.

Internally the free-within-box variables are shifted to nonnegative ones
(v = lo + u with 0 <= u <= hi - lo) before phase 1 builds a basic feasible
point from artificial columns.  A problem whose phase-1 objective exceeds
``FEASIBILITY_TOL`` is reported infeasible; basis breakdowns raise
:class:`LpNumericalError` instead, so callers can tell the two apart.

The numeric kernels are plain-loop numpy code compiled with numba when it is
available; without numba they run unchanged (slower) as ordinary Python.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import LpNumericalError

try:  # pragma: no cover - exercised implicitly on import
    from numba import njit
except ImportError:  # pragma: no cover - numba is a hard dep, fallback for safety
    def njit(*args, **kwargs):
        if len(args) == 1 and callable(args[0]):
            return args[0]

        def wrap(func):
            return func

        return wrap


#: Absolute tolerance on constraint residuals; a phase-1 optimum above this
#: is declared infeasible.
FEASIBILITY_TOL = 1e-9

_DTOL = 1e-10    # reduced-cost threshold
_PIVTOL = 1e-11  # smallest usable ratio-test denominator

FEASIBLE = "feasible"
INFEASIBLE = "infeasible"


@dataclass(frozen=True)
class FlightLpProblem:
    """One compensation program.

    Attributes:
        pivot_pi: current probability of the unit being resolved, in (0, 1).
        candidate_pis: current probabilities of the J-1 candidates, shape (m,).
        columns: expanded auxiliary columns x_k / pi_k, shape (p, m).
        costs: objective coefficients, shape (m,).
        target: right-hand side of the equality constraints, shape (p,).
    """

    pivot_pi: float
    candidate_pis: np.ndarray
    columns: np.ndarray
    costs: np.ndarray
    target: np.ndarray


@dataclass(frozen=True)
class FlightLpSolution:
    status: str
    v: np.ndarray | None = None
    objective: float | None = None

    @property
    def feasible(self) -> bool:
        return self.status == FEASIBLE


def bounds_for(pivot_pi: float, pi_k: float) -> tuple[float, float]:
    """Box bounds on the compensation v_k of one candidate.

    Both branch outcomes must stay in [0, 1]: the rejection branch adds v_k
    to the candidate probability, the selection branch subtracts
    v_k * (1 - pivot_pi) / pivot_pi.  The interval always contains 0.
    """
    if not 0.0 < pivot_pi < 1.0:
        raise ValueError(f"pivot probability {pivot_pi!r} must lie strictly in (0, 1)")
    if not 0.0 < pi_k < 1.0:
        raise ValueError(f"candidate probability {pi_k!r} must lie strictly in (0, 1)")
    ratio = pivot_pi / (1.0 - pivot_pi)
    lo = max(-pi_k, (pi_k - 1.0) * ratio)
    hi = min(1.0 - pi_k, pi_k * ratio)
    return lo, hi


def _bounds_arrays(pivot_pi: float, pis: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    ratio = pivot_pi / (1.0 - pivot_pi)
    lo = np.maximum(-pis, (pis - 1.0) * ratio)
    hi = np.minimum(1.0 - pis, pis * ratio)
    return lo, hi


@njit(cache=True)
def _gauss_solve(mat, rhs):
    """Solve mat @ x = rhs by elimination with partial pivoting.

    Returns (ok, x); ok is False when a pivot is negligibly small relative
    to the matrix scale.
    """
    n = mat.shape[0]
    a = mat.copy()
    x = rhs.copy()
    scale = 1.0
    for i in range(n):
        for j in range(n):
            v = abs(a[i, j])
            if v > scale:
                scale = v
    thresh = 1e-13 * scale
    for col in range(n):
        piv = col
        best = abs(a[col, col])
        for i in range(col + 1, n):
            v = abs(a[i, col])
            if v > best:
                best = v
                piv = i
        if best < thresh:
            return False, x
        if piv != col:
            for j in range(col, n):
                tmp = a[col, j]
                a[col, j] = a[piv, j]
                a[piv, j] = tmp
            tmp = x[col]
            x[col] = x[piv]
            x[piv] = tmp
        inv = 1.0 / a[col, col]
        for i in range(col + 1, n):
            f = a[i, col] * inv
            if f != 0.0:
                for j in range(col, n):
                    a[i, j] -= f * a[col, j]
                x[i] -= f * x[col]
    for i in range(n - 1, -1, -1):
        s = x[i]
        for j in range(i + 1, n):
            s -= a[i, j] * x[j]
        x[i] = s / a[i, i]
    return True, x


@njit(cache=True)
def _simplex_iterate(Af, bvec, cost, ubf, x, basis, at_upper, dtol, pivtol, maxit):
    """Run bounded-variable simplex iterations in place; returns a status code.

    0 = optimal, 2 = numerical breakdown (singular basis or iteration cap).
    Basic values are recomputed from the basis at every iteration, which keeps
    the equality residual at rounding level for these tiny systems.
    """
    m = Af.shape[0]
    ntot = Af.shape[1]
    B = np.empty((m, m))
    for _ in range(maxit):
        is_basic = np.zeros(ntot, np.bool_)
        for i in range(m):
            is_basic[basis[i]] = True
        r = bvec.copy()
        for j in range(ntot):
            if not is_basic[j]:
                xj = x[j]
                if xj != 0.0:
                    for i in range(m):
                        r[i] -= Af[i, j] * xj
        for i in range(m):
            for k in range(m):
                B[i, k] = Af[i, basis[k]]
        ok, xb = _gauss_solve(B, r)
        if not ok:
            return 2
        for i in range(m):
            x[basis[i]] = xb[i]

        cb = np.empty(m)
        for i in range(m):
            cb[i] = cost[basis[i]]
        ok, dual = _gauss_solve(B.T.copy(), cb)
        if not ok:
            return 2

        enter = -1
        enter_upper = False
        for j in range(ntot):
            if is_basic[j] or ubf[j] <= 0.0:
                continue
            d = cost[j]
            for i in range(m):
                d -= dual[i] * Af[i, j]
            if at_upper[j]:
                if d < -dtol:
                    enter = j
                    enter_upper = True
                    break
            else:
                if d > dtol:
                    enter = j
                    enter_upper = False
                    break
        if enter == -1:
            return 0

        aj = np.empty(m)
        for i in range(m):
            aj[i] = Af[i, enter]
        ok, w = _gauss_solve(B, aj)
        if not ok:
            return 2

        # Moving the entering variable by t >= 0 (down from its upper bound
        # when enter_upper) changes each basic value by -sgn * t * w_i.  The
        # step stops at the first basic variable hitting a bound, or at the
        # entering variable's own opposite bound (a bound flip).
        sgn = -1.0 if enter_upper else 1.0
        tbest = ubf[enter]
        leave = -1
        leave_var = enter
        leave_upper = False
        for i in range(m):
            g = sgn * w[i]
            bi = basis[i]
            if g > pivtol:
                tt = x[bi] / g
                if tt < 0.0:
                    tt = 0.0
                to_upper = False
            elif g < -pivtol:
                cap = ubf[bi] - x[bi]
                if cap < 0.0:
                    cap = 0.0
                tt = cap / (-g)
                to_upper = True
            else:
                continue
            if tt < tbest or (tt == tbest and bi < leave_var):
                tbest = tt
                leave = i
                leave_var = bi
                leave_upper = to_upper
        if not np.isfinite(tbest):
            return 2

        if leave == -1:
            if enter_upper:
                x[enter] = 0.0
                at_upper[enter] = False
            else:
                x[enter] = ubf[enter]
                at_upper[enter] = True
        else:
            lv = basis[leave]
            if leave_upper:
                x[lv] = ubf[lv]
                at_upper[lv] = True
            else:
                x[lv] = 0.0
                at_upper[lv] = False
            basis[leave] = enter
            if enter_upper:
                x[enter] = ubf[enter] - tbest
            else:
                x[enter] = tbest
            at_upper[enter] = False
    return 2


@njit(cache=True)
def _solve_bounded(A, b, c, ub, feastol, dtol, pivtol, maxit):
    """Two-phase simplex for: maximize c @ x s.t. A @ x = b, 0 <= x <= ub.

    Returns (status, x) with status 0 = optimal, 1 = infeasible,
    2 = numerical breakdown.
    """
    m, n = A.shape
    ntot = n + m
    Af = np.zeros((m, ntot))
    for i in range(m):
        for j in range(n):
            Af[i, j] = A[i, j]
    x = np.zeros(ntot)
    ubf = np.empty(ntot)
    for j in range(n):
        ubf[j] = ub[j]
    basis = np.empty(m, np.int64)
    at_upper = np.zeros(ntot, np.bool_)
    cost1 = np.zeros(ntot)
    for i in range(m):
        if b[i] >= 0.0:
            Af[i, n + i] = 1.0
            x[n + i] = b[i]
        else:
            Af[i, n + i] = -1.0
            x[n + i] = -b[i]
        # Artificials never usefully exceed their starting value; a finite
        # cap keeps every ratio test bounded.
        ubf[n + i] = x[n + i] + 1.0
        basis[i] = n + i
        cost1[n + i] = -1.0

    st = _simplex_iterate(Af, b, cost1, ubf, x, basis, at_upper, dtol, pivtol, maxit)
    if st != 0:
        return st, x[:n].copy()
    art = 0.0
    for i in range(m):
        art += x[n + i]
    if art > feastol:
        return 1, x[:n].copy()

    # Phase 2: lock the artificials inside [0, 0] so the feasible point found
    # above can only be improved within the original polytope.
    cost2 = np.zeros(ntot)
    for j in range(n):
        cost2[j] = c[j]
    for i in range(m):
        ubf[n + i] = 0.0
        x[n + i] = 0.0
        at_upper[n + i] = False
    st = _simplex_iterate(Af, b, cost2, ubf, x, basis, at_upper, dtol, pivtol, maxit)
    return st, x[:n].copy()


def _solve_core(cols, costs, target, lo, hi) -> FlightLpSolution:
    """Shared solve path; expects consistent float64 arrays and valid bounds."""
    m = costs.size
    p = target.size
    if m == 0:
        # Nothing to move: feasible exactly when nothing needs moving.
        if p == 0 or np.max(np.abs(target)) <= FEASIBILITY_TOL:
            return FlightLpSolution(FEASIBLE, np.zeros(0), 0.0)
        return FlightLpSolution(INFEASIBLE)
    if p == 0:
        # Unconstrained box maximization.
        v = np.where(costs > 0.0, hi, np.where(costs < 0.0, lo, 0.0))
        return FlightLpSolution(FEASIBLE, v, float(costs @ v))

    b = target - cols @ lo
    status, u = _solve_bounded(
        cols, b, costs, hi - lo, FEASIBILITY_TOL, _DTOL, _PIVTOL, 200 + 25 * (m + p)
    )
    if status == 2:
        raise LpNumericalError("simplex basis breakdown")
    if status == 1:
        return FlightLpSolution(INFEASIBLE)

    v = lo + u
    residual = np.max(np.abs(cols @ v - target))
    box = max(np.max(lo - v, initial=0.0), np.max(v - hi, initial=0.0))
    if residual > 2.0 * FEASIBILITY_TOL or box > 2.0 * FEASIBILITY_TOL:
        raise LpNumericalError(
            f"solution drifted out of tolerance (residual {residual:.2e}, box {box:.2e})"
        )
    return FlightLpSolution(FEASIBLE, v, float(costs @ v))


def solve(problem: FlightLpProblem) -> FlightLpSolution:
    """Solve one compensation program.

    Returns a vertex solution maximizing costs @ v when the feasible region
    is non-empty, and status "infeasible" otherwise (the caller then grows
    the candidate set).  Identical inputs give identical outputs.

    Raises:
        LpNumericalError: basis breakdown, distinct from infeasibility.
        ValueError: probabilities outside (0, 1) or mismatched shapes.
    """
    pivot_pi = float(problem.pivot_pi)
    if not 0.0 < pivot_pi < 1.0:
        raise ValueError(f"pivot probability {pivot_pi!r} must lie strictly in (0, 1)")
    pis = np.ascontiguousarray(problem.candidate_pis, dtype=float)
    cols = np.ascontiguousarray(problem.columns, dtype=float)
    costs = np.ascontiguousarray(problem.costs, dtype=float)
    target = np.ascontiguousarray(problem.target, dtype=float)
    m = pis.size
    p = target.size
    if cols.shape != (p, m) or costs.shape != (m,):
        raise ValueError("columns / costs shapes are inconsistent with the problem")
    if m == 0:
        return _solve_core(cols, costs, target, np.zeros(0), np.zeros(0))
    if pis.min() <= 0.0 or pis.max() >= 1.0:
        raise ValueError("candidate probabilities must lie strictly in (0, 1)")
    lo, hi = _bounds_arrays(pivot_pi, pis)
    return _solve_core(cols, costs, target, lo, hi)
