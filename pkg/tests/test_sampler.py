import numpy as np
import pytest

from streambal.core import Unit
from streambal.errors import ConfigurationError, InvariantError
from streambal.sampler import (
    PoolEntry,
    SamplerConfig,
    StreamSampler,
    reorder_candidates,
    select_pivot,
)

from conftest import make_units, unequal_population


def entry(i, pi, coords=None):
    return PoolEntry(i, i, pi, np.array([1.0]), coords)


def run_stream(units, window, seed, p, q=0):
    s = StreamSampler(SamplerConfig(window=window, seed=seed), p=p, q=q)
    for u in units:
        s.push(u)
    vec, _ = s.finish()
    return s, vec


class TestConstruction:
    def test_fresh_state_is_empty(self):
        s = StreamSampler(SamplerConfig(window=10, seed=1), p=1)
        assert s.pool == ()
        assert s.decisions == ()
        assert s.stats["steps"] == 0

    def test_initial_j_must_exceed_p(self):
        with pytest.raises(ConfigurationError):
            StreamSampler(SamplerConfig(window=10, seed=1, initial_j=1), p=1)

    def test_j_ordering_enforced(self):
        with pytest.raises(ConfigurationError):
            StreamSampler(SamplerConfig(window=4, seed=1, initial_j=3, max_j=9), p=1)

    def test_identical_construction_behaves_identically(self):
        units = make_units([0.5, 0.5, 0.5, 0.5])
        logs = []
        for _ in range(2):
            s, _ = run_stream(units, window=2, seed=1, p=1)
            logs.append(s.decisions)
        assert logs[0] == logs[1]


class TestSelectPivot:
    def test_takes_maximum(self):
        pool = [entry(0, 0.3), entry(1, 0.9), entry(2, 0.5)]
        assert select_pivot(pool) == 1

    def test_tie_breaks_on_stream_index(self):
        pool = [entry(0, 0.5), entry(1, 0.5)]
        assert select_pivot(pool) == 0

    def test_singleton(self):
        assert select_pivot([entry(0, 0.2)]) == 0


class TestReorderCandidates:
    def test_by_distance(self):
        pool = [
            entry(0, 0.5, (0.0, 0.0)),
            entry(1, 0.5, (3.0, 0.0)),
            entry(2, 0.5, (1.0, 0.0)),
            entry(3, 0.5, (2.0, 0.0)),
        ]
        assert reorder_candidates(pool, 0) == [2, 3, 1]

    def test_without_coordinates_keeps_arrival_order(self):
        pool = [entry(2, 0.5), entry(0, 0.5), entry(1, 0.5)]
        assert reorder_candidates(pool, 0, spatial=False) == [1, 2]

    def test_distance_tie_breaks_on_stream_index(self):
        pool = [
            entry(0, 0.5, (0.0, 0.0)),
            entry(1, 0.5, (1.0, 0.0)),
            entry(2, 0.5, (-1.0, 0.0)),
        ]
        assert reorder_candidates(pool, 0) == [1, 2]


class TestPush:
    def test_below_capacity_no_decisions(self):
        s = StreamSampler(SamplerConfig(window=5, seed=0), p=1)
        assert s.push(make_units([0.5])[0]) == []

    def test_filling_pool_triggers_decisions(self):
        s = StreamSampler(SamplerConfig(window=3, seed=0), p=1)
        records = []
        for u in make_units([0.5, 0.5, 0.5]):
            records += s.push(u)
        assert records

    def test_pre_decided_unit_bypasses_pool(self):
        s = StreamSampler(SamplerConfig(window=5, seed=0), p=1)
        recs = s.push(Unit(id=7, pi=1.0, aux=np.array([1.0])))
        assert len(recs) == 1
        assert recs[0].outcome == 1
        assert recs[0].phase == "pre-decided"
        assert s.pool == ()

    def test_zero_probability_unit_pre_decided_out(self):
        s = StreamSampler(SamplerConfig(window=5, seed=0), p=1)
        recs = s.push(Unit(id=7, pi=0.0, aux=np.array([0.0])))
        assert recs[0].outcome == 0

    def test_dimension_mismatch(self):
        s = StreamSampler(SamplerConfig(window=5, seed=0), p=2)
        with pytest.raises(Exception):
            s.push(make_units([0.5])[0])


class TestStep:
    def test_fixed_size_pair(self):
        # either branch decides both units; exactly one selected
        for seed in range(10):
            s, vec = run_stream(make_units([0.5, 0.5]), window=2, seed=seed, p=1)
            assert vec.sum() == 1

    def test_pair_branch_probability(self):
        picks_first = 0
        runs = 2000
        for seed in range(runs):
            _, vec = run_stream(make_units([0.5, 0.5]), window=2, seed=seed, p=1)
            picks_first += vec[0]
        assert abs(picks_first / runs - 0.5) < 3 * 0.5 / np.sqrt(runs)

    def test_infeasible_pool_is_left_for_landing(self):
        # x = pi: pivot 0.9 needs 0.9 from a candidate capped at 0.1, and
        # pivot 0.2 needs 0.2 capped at 0.1; every pivot defers.
        s = StreamSampler(SamplerConfig(window=2, seed=0), p=1)
        recs = []
        for u in make_units([0.2, 0.9]):
            recs += s.push(u)
        assert recs == []
        assert len(s.pool) == 2
        assert all(e.deferred for e in s.pool)
        probs = sorted(e.cur_pi for e in s.pool)
        assert probs == [0.2, 0.9]

    def test_seeded_replay_is_identical(self):
        pis, aux = unequal_population(30, 6, seed=4)
        units = make_units(pis, aux=aux)
        s1, _ = run_stream(units, window=8, seed=11, p=2)
        s2, _ = run_stream(units, window=8, seed=11, p=2)
        assert s1.decisions == s2.decisions
        s3, _ = run_stream(units, window=8, seed=12, p=2)
        assert s3.decisions != s1.decisions


class TestApplyUpdate:
    def _sampler_with_pool(self, pis):
        s = StreamSampler(SamplerConfig(window=50, seed=0), p=1)
        for u in make_units(pis):
            s.push(u)
        return s

    def _branches(self, q, cand_pi, v):
        """Run the update under many seeds; returns candidate value per branch."""
        out = {}
        for seed in range(64):
            s = StreamSampler(SamplerConfig(window=50, seed=seed), p=1)
            for u in make_units([q, cand_pi]):
                s.push(u)
            branch = s.apply_update(0, [1], np.array([v]))
            if s.pool:
                out[branch] = s.pool[0].cur_pi
            else:  # candidate got decided by clamping
                out[branch] = float(s.decisions[-1].outcome)
            if len(out) == 2:
                return out
        raise AssertionError("both branches should appear within 64 seeds")

    def test_branch_arithmetic_and_martingale(self):
        got = self._branches(q=0.5, cand_pi=0.3, v=0.1)
        assert got["reject"] == pytest.approx(0.4)
        assert got["select"] == pytest.approx(0.2)
        # expectation over branches returns the original probability
        assert 0.5 * got["reject"] + 0.5 * got["select"] == pytest.approx(0.3)

    def test_zero_compensation_leaves_candidates(self):
        got = self._branches(q=0.5, cand_pi=0.3, v=0.0)
        assert got["reject"] == pytest.approx(0.3)
        assert got["select"] == pytest.approx(0.3)

    def test_select_branch_scaling(self):
        got = self._branches(q=0.9, cand_pi=0.5, v=0.05)
        assert got["select"] == pytest.approx(0.5 - (0.1 / 0.9) * 0.05)

    def test_bound_violation_is_invariant_error(self):
        s = self._sampler_with_pool([0.5, 0.3])
        with pytest.raises(InvariantError):
            s.apply_update(0, [1], np.array([0.9]))


class TestFinish:
    def test_empty_pool_empty_addendum(self):
        s = StreamSampler(SamplerConfig(window=4, seed=0), p=1)
        vec, addendum = s.finish()
        assert vec.size == 0
        assert addendum == []

    def test_residual_trio_selects_exactly_one(self):
        pis = [0.5, 0.3, 0.2]
        freq = np.zeros(3)
        runs = 10_000
        for seed in range(runs):
            _, vec = run_stream(make_units(pis), window=10, seed=seed, p=1)
            assert vec.sum() == 1
            freq += vec
        freq /= runs
        bound = 3 * np.sqrt(np.array(pis) * (1 - np.array(pis)) / runs)
        assert np.all(np.abs(freq - pis) <= bound)

    def test_unsatisfiable_column_is_dropped(self):
        # constant column 1 forces sum(a)/0.5 = 3, impossible for integers:
        # the landing must drop it, then complete on the pi column.
        aux = np.column_stack([np.full(3, 0.5), np.ones(3)])
        units = make_units([0.5, 0.5, 0.5], aux=aux)
        s, vec = run_stream(units, window=3, seed=5, p=2)
        assert s.stats["landing_invoked"]
        assert any(r.phase == "landing" for r in s.decisions)
        assert vec.sum() in (1, 2)

    def test_finish_is_idempotent(self):
        s, vec = run_stream(make_units([0.5, 0.5]), window=2, seed=3, p=1)
        vec2, addendum = s.finish()
        assert addendum == []
        np.testing.assert_array_equal(vec, vec2)

    def test_push_after_finish_rejected(self):
        s, _ = run_stream(make_units([0.5, 0.5]), window=2, seed=3, p=1)
        with pytest.raises(ConfigurationError):
            s.push(make_units([0.5])[0])


class TestInvariants:
    def test_probability_preservation_unequal(self):
        pis, aux = unequal_population(20, 5, seed=9)
        units = make_units(pis, aux=aux)
        runs = 3000
        freq = np.zeros(20)
        for seed in range(runs):
            _, vec = run_stream(units, window=7, seed=seed, p=2)
            assert vec.sum() == 5
            freq += vec
        freq /= runs
        bound = 3 * np.sqrt(pis * (1 - pis) / runs)
        assert np.all(np.abs(freq - pis) <= bound)

    def test_per_step_balance_conservation(self):
        pis, aux = unequal_population(80, 16, seed=2)
        units = make_units(pis, aux=aux)
        s = StreamSampler(SamplerConfig(window=10, seed=1), p=2)
        prev = np.zeros(2)
        worst = 0.0
        for u in units:
            expected = prev + u.aux  # an arrival adds (x/pi) * pi = x
            s.push(u)
            cur = s.current_balance()
            worst = max(worst, float(np.abs(cur - expected).max()))
            prev = cur
        assert worst <= 1e-8

    def test_probabilities_stay_inside_unit_interval(self):
        pis, aux = unequal_population(60, 12, seed=3)
        units = make_units(pis, aux=aux)
        s = StreamSampler(SamplerConfig(window=9, seed=7), p=2)
        for u in units:
            s.push(u)
            for e in s.pool:
                assert -1e-9 < e.cur_pi < 1 + 1e-9

    def test_mean_j_and_counters(self):
        pis, aux = unequal_population(40, 8, seed=5)
        s, vec = run_stream(make_units(pis, aux=aux), window=10, seed=2, p=2)
        st = s.stats
        assert st["decided"] == 40
        assert st["seen"] == 40
        assert st["steps"] > 0
        assert st["mean_j"] >= 3  # initial_j for p = 2

    def test_record_line_format(self):
        s, _ = run_stream(make_units([0.5, 0.5]), window=2, seed=0, p=1)
        line = s.decisions[0].as_line()
        parts = line.split(",")
        assert len(parts) == 5
        assert parts[2] in ("0", "1")
