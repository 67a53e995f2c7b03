import numpy as np
import pytest

from streambal.core import population_from_arrays
from streambal.errors import (
    ConfigurationError,
    DegenerateVarianceError,
    ValidationError,
)
from streambal.spread import (
    ContiguityMatrix,
    build_contiguity_matrix,
    morans_i,
    voronoi_balance,
)


def dense_morans_i(a, w_dense):
    """Direct dense evaluation of the index; the oracle for the optimized path."""
    a = np.asarray(a, dtype=float)
    n = a.size
    ones = np.ones(n)
    total = ones @ w_dense @ ones
    a_bar = (a @ w_dense @ ones) / total
    e = a - a_bar * ones
    d = np.diag(w_dense.sum(axis=1))
    c = np.linalg.inv(d) @ w_dense - np.outer(ones, ones @ w_dense) / total
    g = c.T @ d @ c
    return float(e @ w_dense @ e / np.sqrt((e @ d @ e) * (e @ g @ e)))


def random_weight_matrix(rng, n):
    w = rng.uniform(0.1, 1.0, (n, n))
    np.fill_diagonal(w, 0.0)
    return w


class TestVoronoiBalance:
    def test_perfect_spread_on_a_line(self):
        # cells {0,1,2} and {3,4,5} are tie-free and each carry mass 1
        pop = population_from_arrays([1 / 3] * 6, coords=np.arange(6.0)[:, None])
        assert voronoi_balance(pop, [0, 1, 0, 0, 1, 0]) == pytest.approx(0.0)

    def test_midpoint_tie_splits_equally(self):
        # the unit at 2 is equidistant to both sampled units; its mass splits,
        # so the cells carry 1.25 and 0.75 rather than 1 and 1
        pop = population_from_arrays([0.5] * 4, coords=np.arange(4.0)[:, None])
        assert voronoi_balance(pop, [0, 1, 0, 1]) == pytest.approx(0.0625)

    def test_coincident_sampled_units_split_mass(self):
        # both sampled units sit at the same point; every assignment ties
        coords = np.array([[0.0], [0.0], [1.0], [-1.0]])
        pop = population_from_arrays([0.5] * 4, coords=coords)
        assert voronoi_balance(pop, [1, 1, 0, 0]) == pytest.approx(0.0)

    def test_clustered_sample_scores_worse(self):
        coords = np.arange(8.0)[:, None]
        pop = population_from_arrays([0.25] * 8, coords=coords)
        spread = voronoi_balance(pop, [1, 0, 0, 0, 1, 0, 0, 0])
        clustered = voronoi_balance(pop, [1, 1, 0, 0, 0, 0, 0, 0])
        assert spread < clustered

    def test_empty_sample_rejected(self):
        pop = population_from_arrays([0.5, 0.5], coords=np.array([[0.0], [1.0]]))
        with pytest.raises(ValidationError):
            voronoi_balance(pop, [0, 0])

    def test_missing_coordinates_rejected(self):
        pop = population_from_arrays([0.5, 0.5])
        with pytest.raises(ConfigurationError):
            voronoi_balance(pop, [1, 0])

    def test_cell_mass_sums_to_total(self):
        rng = np.random.default_rng(3)
        for trial in range(200):
            n = int(rng.integers(3, 12))
            # integer grid coordinates force exact distance ties
            coords = rng.integers(0, 3, (n, 2)).astype(float)
            pis = rng.uniform(0.05, 1.0, n)
            pop = population_from_arrays(pis, coords=coords)
            a = np.zeros(n)
            a[rng.choice(n, size=int(rng.integers(1, n + 1)), replace=False)] = 1
            sel = np.flatnonzero(a == 1)
            d = np.linalg.norm(coords[:, None, :] - coords[None, sel, :], axis=2)
            dmin = d.min(axis=1)
            tied = d <= dmin[:, None] * (1 + 1e-12) + 1e-12
            shares = tied / tied.sum(axis=1, keepdims=True)
            b = shares.T @ pis
            assert abs(b.sum() - pis.sum()) <= 1e-9
            expected = float(np.mean((b - 1.0) ** 2))
            assert voronoi_balance(pop, a) == pytest.approx(expected, abs=1e-12)


class TestContiguityMatrix:
    def test_equal_thirds_give_three_unit_weights(self):
        pop = population_from_arrays(
            [1 / 3] * 5, coords=np.arange(5.0)[:, None]
        )
        w = build_contiguity_matrix(pop).dense()
        for k in range(5):
            row = w[k]
            assert np.count_nonzero(row) == 3
            np.testing.assert_allclose(row[row > 0], 1.0)
            assert row @ pop.pis == pytest.approx(1.0)

    def test_probability_one_neighbour_single_entry(self):
        pop = population_from_arrays(
            [0.4, 1.0, 0.4], coords=np.array([[0.0], [1.0], [9.0]])
        )
        w = build_contiguity_matrix(pop).dense()
        assert np.count_nonzero(w[0]) == 1
        assert w[0, 1] == pytest.approx(1.0)

    def test_fractional_boundary_weight(self):
        # nearest pi = 0.7 gets weight 1; second pi = 0.5 tops the row up: 0.6
        pop = population_from_arrays(
            [0.4, 0.7, 0.5], coords=np.array([[0.0], [1.0], [2.2]])
        )
        w = build_contiguity_matrix(pop).dense()
        assert w[0, 1] == pytest.approx(1.0)
        assert w[0, 2] == pytest.approx(0.6)

    def test_rows_carry_unit_mass(self):
        rng = np.random.default_rng(8)
        coords = rng.uniform(0, 1, (30, 2))
        pis = rng.uniform(0.1, 0.6, 30)
        pop = population_from_arrays(pis, coords=coords)
        cm = build_contiguity_matrix(pop)
        np.testing.assert_allclose(cm.dense() @ pis, 1.0, atol=1e-9)

    def test_rejects_negative_weights(self):
        with pytest.raises(ValidationError):
            ContiguityMatrix(np.array([[0.0, -1.0], [1.0, 0.0]]))

    def test_rejects_nonzero_diagonal(self):
        with pytest.raises(ValidationError):
            ContiguityMatrix(np.array([[0.5, 1.0], [1.0, 0.0]]))


class TestMoransI:
    def test_checkerboard_is_negative(self):
        w = np.zeros((4, 4))
        for i in range(3):
            w[i, i + 1] = w[i + 1, i] = 1.0
        a = [1, 0, 1, 0]
        value = morans_i(a, ContiguityMatrix(w))
        assert value < 0
        assert value == pytest.approx(dense_morans_i(a, w), abs=1e-10)

    def test_matches_dense_evaluation(self):
        rng = np.random.default_rng(11)
        for trial in range(300):
            n = int(rng.integers(3, 9))
            w = random_weight_matrix(rng, n)
            a = np.zeros(n)
            a[rng.choice(n, size=int(rng.integers(1, n)), replace=False)] = 1
            got = morans_i(a, ContiguityMatrix(w))
            assert got == pytest.approx(dense_morans_i(a, w), abs=1e-10)

    def test_relabeling_invariance(self):
        rng = np.random.default_rng(5)
        n = 7
        w = random_weight_matrix(rng, n)
        a = np.array([1, 0, 0, 1, 0, 1, 0], dtype=float)
        base = morans_i(a, ContiguityMatrix(w))
        for _ in range(10):
            perm = rng.permutation(n)
            got = morans_i(a[perm], ContiguityMatrix(w[np.ix_(perm, perm)]))
            assert got == pytest.approx(base, abs=1e-10)

    @pytest.mark.parametrize("a", [[0, 0, 0], [1, 1, 1]])
    def test_constant_sample_is_degenerate(self, a):
        w = random_weight_matrix(np.random.default_rng(0), 3)
        with pytest.raises(DegenerateVarianceError):
            morans_i(a, ContiguityMatrix(w))

    def test_spread_sample_more_negative_than_clustered(self, square_population):
        cm = build_contiguity_matrix(square_population)
        corners = np.zeros(9)
        corners[[0, 4, 8]] = 1  # diagonal of the grid
        clump = np.zeros(9)
        clump[[0, 1, 3]] = 1  # one corner block
        assert morans_i(corners, cm) < morans_i(clump, cm)
