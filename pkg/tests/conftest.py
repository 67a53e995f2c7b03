import numpy as np
import pytest

from streambal.core import Unit, population_from_arrays


def make_units(pis, aux=None, coords=None, y=None):
    """Units built from parallel arrays; aux defaults to the pi column."""
    pis = np.asarray(pis, dtype=float)
    out = []
    for i in range(pis.size):
        a = np.array([pis[i]]) if aux is None else np.asarray(aux[i], dtype=float)
        out.append(
            Unit(
                id=i,
                pi=float(pis[i]),
                aux=np.atleast_1d(a),
                coords=None if coords is None else np.atleast_1d(coords[i]).astype(float),
                y=None if y is None else np.atleast_1d(y[i]).astype(float),
            )
        )
    return out


def unequal_population(n, total, seed=0, with_cov=True):
    """Unequal probabilities scaled to the target size, plus one covariate."""
    rng = np.random.default_rng(seed)
    pis = rng.uniform(0.1, 0.9, n)
    pis = pis / pis.sum() * total
    cov = rng.uniform(0.5, 2.0, n)
    aux = np.column_stack([pis, cov]) if with_cov else pis[:, None]
    return pis, aux


@pytest.fixture
def square_population():
    """Nine units on a 3x3 grid, equal probabilities summing to 3."""
    coords = np.array([[i, j] for i in range(3) for j in range(3)], dtype=float)
    pis = np.full(9, 1.0 / 3.0)
    return population_from_arrays(pis, coords=coords)
