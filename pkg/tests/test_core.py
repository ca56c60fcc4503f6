import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ismd import (GapNotFoundError, InfeasibleTargetError, ISMDOptions, NotPSDError, Partition,
                  ValidationError, assemble_lambda, coarsest_partition, finest_partition,
                  gen_localized_field, integer_spectrum_test, ismd, ismd_lowrank, ismd_threshold,
                  learn_threshold, local_bases, local_rotations, match_modes, pivoted_cholesky,
                  reconstruction_error, sigma_family, sparse_orthogonal_factorize,
                  uniform_grid_partition)
from ismd.core import apply_threshold, assemble_omega, identifiable_pattern

from conftest import random_psd

VARIED = {"n_channels": 3, "n_inclusions": 3, "face": False, "amplitude": (0.5, 2.0),
          "certify": [(6, 6), (3, 3)], "identifiable": [(3, 3)]}


@pytest.fixture(scope="module")
def varied():
    return gen_localized_field((24, 24), VARIED, seed=1)


def test_lambda_single_patch_is_identity():
    A = random_psd(8, 3, seed=0)
    P = coarsest_partition(8)
    bases = local_bases(A, P)
    lam = assemble_lambda(A, P, bases)
    np.testing.assert_allclose(lam.matrix, np.eye(3), atol=1e-12)


def test_lambda_rank_one_two_patches():
    g = np.array([1.0, 2.0, -1.0, 0.5])
    A = np.outer(g, g)
    P = uniform_grid_partition(4, 2)
    lam = assemble_lambda(A, P, local_bases(A, P))
    assert lam.matrix.shape == (2, 2)
    np.testing.assert_allclose(np.abs(lam.matrix), np.ones((2, 2)), atol=1e-14)


def test_sigma_family_spectrum_and_rotated_diagonal(small_field):
    P = small_field.partition((6, 6))
    A = small_field.A
    bases = local_bases(A, P)
    lam = assemble_lambda(A, P, bases)
    rots, _ = local_rotations(lam, eps=1e-24)
    for m in range(P.M):
        fam = sigma_family(lam, m)
        for S in fam:
            w = np.linalg.eigvalsh(S)
            assert np.all(np.minimum(np.abs(w), np.abs(w - 1)) < 1e-10)
            B = rots[m].T @ S @ rots[m]
            np.testing.assert_allclose(B, np.diag(np.diag(B)), atol=1e-10)
            d = np.diag(B)
            assert np.all(np.minimum(np.abs(d), np.abs(d - 1)) < 1e-10)


def test_sigma_family_excludes_own_and_zero_blocks():
    A = np.zeros((4, 4))
    A[:2, :2] = [[2.0, 1.0], [1.0, 2.0]]
    A[2:, 2:] = np.eye(2)
    P = uniform_grid_partition(4, 2)
    lam = assemble_lambda(A, P, local_bases(A, P))
    assert sigma_family(lam, 0).shape == (0, 2, 2)


def test_exact_recovery(small_field):
    P = small_field.partition((6, 6))
    res = ismd(small_field.A, P)
    assert res.rank == small_field.K
    assert match_modes(res.modes, small_field.modes).err_inf <= 1e-8
    assert int(res.sparseness.sum()) == int(np.sum(res.bases.ranks))
    assert res.residual <= 1e-12
    assert integer_spectrum_test(res.lam)[0]


def test_single_patch_is_eigendecomposition(small_field):
    A = small_field.A
    res = ismd(A, coarsest_partition(A.shape[0]))
    w, V = np.linalg.eigh(A)
    keep = w > 1e-10 * w[-1]
    ref = V[:, keep] * np.sqrt(w[keep])
    assert match_modes(res.modes, ref).err_inf <= 1e-8


def test_finest_partition_is_pivoted_cholesky():
    A = random_psd(12, 4, seed=5)
    res = ismd(A, finest_partition(12), normalize=True)
    L = pivoted_cholesky(A).lower
    assert res.rank == L.shape[1]
    assert match_modes(res.modes, L).err_inf <= 1e-8


def test_zero_rows_get_empty_patches():
    A = random_psd(6, 2, seed=1)
    A[2, :] = A[:, 2] = 0.0
    res = ismd(A, finest_partition(6))
    assert res.bases.ranks[2] == 0
    assert np.all(res.G[2] == 0)
    assert res.residual <= 1e-12


def test_threshold_clean_equals_ismd(varied):
    P = varied.partition((6, 6))
    a = ismd(varied.A, P)
    b = ismd_threshold(varied.A, P)
    assert b.rank == a.rank
    assert match_modes(b.modes, a.modes).err_inf <= 1e-8


def test_lowrank_distinct_norms_equals_ismd(varied):
    P = varied.partition((6, 6))
    a = ismd(varied.A, P)
    for kw in ({"rank": varied.K}, {"error_target": 1e-6}):
        b = ismd_lowrank(varied.A, P, **kw)
        assert b.rank == varied.K
        assert match_modes(b.modes, a.modes).err_inf <= 1e-8


def test_lowrank_errors():
    A = random_psd(8, 2, seed=0)
    P = uniform_grid_partition(8, 4)
    with pytest.raises(ValidationError):
        ismd_lowrank(A, P)
    with pytest.raises(InfeasibleTargetError):
        ismd_lowrank(A, P, rank=5)


def test_lowrank_rank_cap_residual_decreases():
    from ismd import gen_exponential_kernel
    A = gen_exponential_kernel(128, 1 / 8)
    P = uniform_grid_partition(128, 32)
    prev = np.inf
    for k in (4, 8, 16):
        r = ismd_lowrank(A, P, rank=k)
        assert r.rank == k
        assert r.residual <= prev
        prev = r.residual


def test_learn_threshold_bimodal():
    rng = np.random.default_rng(0)
    W = np.diag(rng.uniform(0.5, 2.0, 20))
    W[np.triu_indices(20, 1)] = 1e-7 * rng.uniform(0.5, 2.0, 190)
    W = np.triu(W) + np.triu(W, 1).T
    eps = learn_threshold(W)
    assert 1e-5 < eps < 1e-1


def test_learn_threshold_single_cluster():
    with pytest.raises(GapNotFoundError):
        learn_threshold(np.full((4, 4), 1.0))
    rng = np.random.default_rng(0)
    W = rng.uniform(1.0, 3.0, (10, 10))
    with pytest.raises(GapNotFoundError) as ei:
        learn_threshold(W + W.T)
    assert ei.value.code == "gap-not-found"


def test_apply_threshold_and_snap():
    W = np.array([[1.0, -0.9, 1e-9], [-0.9, 1.1, 0.0], [1e-9, 0.0, 2.0]])
    from ismd.core import CorrelationMatrix
    om = CorrelationMatrix(W, np.array([0, 1, 2, 3]), "omega")
    out, snapped = apply_threshold(om, 1e-3, snap=True)
    assert snapped
    np.testing.assert_array_equal(out.matrix, [[1, -1, 0], [-1, 1, 0], [0, 0, 1]])
    assert not identifiable_pattern(np.array([[1.0, 1.0], [1.0, -1.0]]))


def test_worker_count_does_not_change_result(small_field):
    P = small_field.partition((6, 6))
    a = ismd(small_field.A, P, workers=1)
    b = ismd(small_field.A, P, workers=3)
    np.testing.assert_array_equal(a.G, b.G)


def test_input_validation():
    P = uniform_grid_partition(4, 2)
    with pytest.raises(ValidationError):
        ismd(np.eye(3), P)
    with pytest.raises(ValidationError):
        ismd(np.array([[1.0, 2.0], [3.0, 1.0]]), uniform_grid_partition(2, 1))
    with pytest.raises(NotPSDError):
        ismd(np.diag([1.0, -1.0, 1.0, 1.0]), P)
    with pytest.raises(ValidationError):
        ISMDOptions(threshold="sometimes")
    with pytest.raises(ValidationError):
        ISMDOptions.from_dict({"bogus": 1})


def test_provenance_records_stages(small_field):
    res = ismd(small_field.A, small_field.partition((6, 6)))
    s = res.summary()
    assert s["algorithm"] == "ismd"
    assert {"local_eig", "joint_diag", "patchup", "total"} <= set(s["timings"])
    assert s["rank"] == small_field.K


def test_sparse_orthogonal_factorize():
    from scipy.stats import ortho_group
    rng = np.random.default_rng(0)
    P = uniform_grid_partition(12, 4)
    G = np.zeros((12, 3))
    G[0:4, 0] = rng.standard_normal(4)
    G[4:12, 1] = rng.standard_normal(8)
    G[8:12, 2] = rng.standard_normal(4)
    U = ortho_group.rvs(5, random_state=1)[:, :3]
    ms, Uh, _ = sparse_orthogonal_factorize(G @ U.T, P)
    np.testing.assert_allclose(Uh.T @ Uh, np.eye(3), atol=1e-8)
    np.testing.assert_allclose(ms.G @ Uh.T, G @ U.T, atol=1e-10)
    rep = match_modes(ms, G)
    assert rep.err_inf <= 1e-8


@settings(max_examples=15)
@given(patch=st.sampled_from([1, 2, 3, 4, 6, 8, 12, 24]), seed=st.integers(0, 50))
def test_reconstruction_any_partition(small_field, patch, seed):
    # regular-sparse or not, the decomposition reproduces A
    P = small_field.partition((patch, patch))
    res = ismd(small_field.A, P)
    assert res.residual <= 1e-8


@settings(max_examples=30)
@given(n=st.integers(2, 16), r=st.integers(1, 6), seed=st.integers(0, 10_000),
       data=st.data())
def test_random_psd_any_partition(n, r, seed, data):
    A = random_psd(n, min(r, n), seed)
    labels = data.draw(st.lists(st.integers(0, 3), min_size=n, max_size=n))
    groups = [np.flatnonzero(np.array(labels) == g) for g in range(4)]
    P = Partition(n, [g for g in groups if g.size])
    res = ismd(A, P)
    assert res.residual <= 1e-8
    assert res.rank >= np.linalg.matrix_rank(A)
