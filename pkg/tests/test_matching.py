import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from rvos.errors import ContractError
from rvos.matching import assignment_cost, hungarian
from rvos.verify import brute_force_assignment


def test_two_by_two_prefers_anti_diagonal():
    assert hungarian([[4, 1], [2, 3]]) == [(0, 1), (1, 0)]


def test_three_by_three_known_optimum():
    cost = np.array([[4, 1, 3], [2, 0, 5], [3, 2, 2]])
    pairs = hungarian(cost)
    assert assignment_cost(cost, pairs) == 5


def test_single_column_picks_minimum():
    assert hungarian(np.array([[3.0], [1.0], [2.0]])) == [(1, 0)]


def test_wide_matrix_assigns_every_row():
    cost = np.array([[5.0, 1.0, 9.0, 2.0], [1.0, 7.0, 3.0, 0.5]])
    pairs = hungarian(cost)
    assert [r for r, _ in pairs] == [0, 1]
    assert assignment_cost(cost, pairs) == pytest.approx(1.5)


def test_nan_rejected():
    with pytest.raises(ContractError):
        hungarian([[1.0, np.nan]])


def test_empty_and_non_2d():
    assert hungarian(np.zeros((0, 3))) == []
    with pytest.raises(ContractError):
        hungarian(np.zeros(3))


def test_brute_force_agreement_small(rng):
    for _ in range(200):
        n, m = rng.integers(1, 6, size=2)
        cost = rng.integers(0, 6, size=(n, m)).astype(float)
        assert assignment_cost(cost, hungarian(cost)) == brute_force_assignment(cost)


@settings(max_examples=60, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(1, 5), st.integers(1, 5)), elements=st.floats(-100, 100)))
def test_assignment_is_one_to_one_and_optimal(cost):
    pairs = hungarian(cost)
    rows = [r for r, _ in pairs]
    cols = [c for _, c in pairs]
    assert len(pairs) == min(cost.shape)
    assert len(set(rows)) == len(rows) and len(set(cols)) == len(cols)
    assert assignment_cost(cost, pairs) <= brute_force_assignment(cost) + 1e-9


def test_row_permutation_equivariance(rng):
    cost = rng.normal(size=(6, 6))
    perm = rng.permutation(6)
    base = dict(hungarian(cost))
    moved = dict(hungarian(cost[perm]))
    for new_row, old_row in enumerate(perm):
        assert moved[new_row] == base[old_row]


def test_all_permutations_of_3x3_integer(rng):
    cost = rng.integers(0, 3, size=(3, 3)).astype(float)
    best = min(sum(cost[i, p[i]] for i in range(3)) for p in itertools.permutations(range(3)))
    assert assignment_cost(cost, hungarian(cost)) == best
