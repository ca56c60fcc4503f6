import numpy as np
import pytest
from hypothesis import given, strategies as st

from ismd import (ModeSet, Partition, ValidationError, coarsest_partition, finest_partition,
                  is_refinement, is_regular_sparse, local_dimension, patch_sparseness,
                  uniform_grid_partition, unidentifiable_groups)


def test_grid_partition_96():
    P = uniform_grid_partition((96, 96), (12, 12))
    assert P.M == 64
    assert all(p.size == 144 for p in P)
    assert P.label == "96x96/12x12"
    # first patch is the top-left 12x12 block, row-major
    np.testing.assert_array_equal(P[0][:13], list(range(12)) + [96])


def test_grid_partition_degenerate():
    assert uniform_grid_partition(8, 8).M == 1
    assert uniform_grid_partition(4, 1).M == 4


def test_grid_partition_must_divide():
    with pytest.raises(ValidationError):
        uniform_grid_partition((10, 10), (3, 3))


@pytest.mark.parametrize("patches", [
    [[0, 1], [1, 2]],          # overlap
    [[0, 1]],                  # not covering
    [[0, 1, 2], []],           # empty patch
    [[0, 1, 5], [2]],          # out of range
])
def test_partition_validation(patches):
    with pytest.raises(ValidationError):
        Partition(3, patches)


def test_refinement():
    assert is_refinement(finest_partition(6), coarsest_partition(6))
    assert is_refinement(uniform_grid_partition(8, 2), uniform_grid_partition(8, 4))
    thirds = Partition(6, [[0, 1], [2, 3], [4, 5]])
    halves = Partition(6, [[0, 1, 2], [3, 4, 5]])
    assert not is_refinement(thirds, halves)
    assert not is_refinement(halves, thirds)


def test_json_round_trip():
    P = uniform_grid_partition((4, 4), (2, 2))
    assert Partition.from_json(P.to_json()) == P
    with pytest.raises(ValidationError):
        Partition.from_json("{not json")


def _fig1_modes():
    # N = 100 split into 4 patches of 25; psi1 lives on patches 0-1, psi2 on 1-3
    x = np.arange(100)
    psi1 = np.where(x < 50, 1.0, 0.0)
    psi2 = np.where(x >= 25, np.sin(x / 7.0) + 2.0, 0.0)
    return np.column_stack([psi1, psi2]), uniform_grid_partition(100, 25)


def test_patch_sparseness_and_local_dimensions():
    G, P = _fig1_modes()
    assert patch_sparseness(G[:, 0], P) == 2
    assert patch_sparseness(G[:, 1], P) == 3
    ms = ModeSet(G)
    np.testing.assert_array_equal(ms.local_dimensions(P), [1, 2, 1, 1])
    assert local_dimension(ms, P, 1) == 2
    assert patch_sparseness(np.zeros(100), P) == 0


def test_support_tolerance():
    P = uniform_grid_partition(4, 2)
    v = np.array([1.0, 0.0, 1e-12, 0.0])
    assert patch_sparseness(v, P) == 1
    assert patch_sparseness(v, P, support_tol=0.0) == 2


def test_unidentifiable_groups():
    P = uniform_grid_partition(6, 3)
    G = np.array([[1, 1, 0], [1, -1, 0], [0, 0, 0], [1, 1, 1], [0, 1, 1], [0, 0, 1.0]])
    assert unidentifiable_groups(ModeSet(G), P) == [[0, 1], [2]]


def test_regular_sparse():
    P = uniform_grid_partition(8, 4)
    g1 = np.array([1, 1, 0, 0, 1, 1, 1, 1.0])
    g2 = np.array([0, 0, 1, 1, 2, 2, 2, 2.0])
    assert not is_regular_sparse(ModeSet(np.column_stack([g1, g2])), P)
    g2b = np.array([0, 0, 1, 1, 1, 2, 3, 4.0])
    assert is_regular_sparse(ModeSet(np.column_stack([g1, g2b])), P)


@given(n=st.integers(2, 40), data=st.data())
def test_finest_coarsest_sparseness(n, data):
    v = np.array(data.draw(st.lists(st.sampled_from([0.0, 1.0, -2.5]), min_size=n, max_size=n)))
    assert patch_sparseness(v, finest_partition(n)) == int(np.count_nonzero(v))
    assert patch_sparseness(v, coarsest_partition(n)) == int(np.any(v))


@given(k=st.integers(1, 5), seed=st.integers(0, 1000))
def test_sparseness_monotone_under_refinement(k, seed):
    rng = np.random.default_rng(seed)
    v = rng.standard_normal(24) * (rng.random(24) < 0.3)
    coarse = uniform_grid_partition(24, [2, 3, 4, 6, 12][k - 1] * 2)
    fine = uniform_grid_partition(24, 2)
    assert is_refinement(fine, coarse)
    assert patch_sparseness(v, coarse) <= patch_sparseness(v, fine)
