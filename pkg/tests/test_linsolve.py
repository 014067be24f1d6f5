import numpy as np
import pytest

from dojo.linsolve import BlockLDU, BlockStructure, DenseQR, RowScaled, SingularMatrixError, factorize


def tree_system(rng, parents, size=3):
    """Random matrix whose off-diagonal blocks only couple a node with its parent."""
    n = len(parents)
    idx = [np.arange(i * size, (i + 1) * size) for i in range(n)]
    A = np.zeros((n * size, n * size))
    for i, p in enumerate(parents):
        A[np.ix_(idx[i], idx[i])] = rng.normal(size=(size, size)) + 5 * np.eye(size)
        if p >= 0:
            A[np.ix_(idx[i], idx[p])] = rng.normal(size=(size, size))
            A[np.ix_(idx[p], idx[i])] = rng.normal(size=(size, size))
    order = sorted(range(n), key=lambda i: -depth(parents, i))
    return A, BlockStructure(tuple(idx), tuple(idx), tuple(parents), tuple(order))


def depth(parents, i):
    d = 0
    while parents[i] >= 0:
        i, d = parents[i], d + 1
    return d


@pytest.mark.parametrize("parents", [[-1], [-1, 0, 1, 2], [-1, 0, 0, 1, 1, 2], [1, -1, 1, 2]])
def test_block_ldu_matches_dense(rng, parents):
    A, s = tree_system(rng, parents)
    b = rng.normal(size=A.shape[0])
    assert np.allclose(BlockLDU(A, s).solve(b), np.linalg.solve(A, b), atol=1e-12)
    B = rng.normal(size=(A.shape[0], 4))
    assert np.allclose(BlockLDU(A, s).solve(B), np.linalg.solve(A, B), atol=1e-12)


def test_block_ldu_ignores_entries_outside_the_tree(rng):
    # entries between unrelated nodes are never read, so the elimination creates no fill-in
    A, s = tree_system(rng, [-1, 0, 0])
    polluted = A.copy()
    polluted[3:6, 6:9] = 1e3
    b = rng.normal(size=9)
    assert np.array_equal(BlockLDU(A, s).solve(b), BlockLDU(polluted, s).solve(b))


def test_block_ldu_rejects_small_pivot(rng):
    A, s = tree_system(rng, [-1, 0])
    A[3:6, 3:6] = 0.0
    with pytest.raises(SingularMatrixError):
        BlockLDU(A, s)


def test_dense_qr_solves_and_detects_rank_loss(rng):
    A = rng.normal(size=(5, 5))
    b = rng.normal(size=5)
    assert np.allclose(DenseQR(A).solve(b), np.linalg.solve(A, b))
    A[4] = A[3]
    with pytest.raises(SingularMatrixError):
        DenseQR(A)
    with pytest.raises(SingularMatrixError):
        DenseQR(np.full((2, 2), np.nan))


def test_row_scaling_handles_badly_scaled_rows(rng):
    A = rng.normal(size=(4, 4)) + 4 * np.eye(4)
    A[0] *= 1e12
    A[2] *= 1e-12
    b = rng.normal(size=4)
    x = RowScaled(A, DenseQR).solve(b)
    assert np.allclose(x, np.linalg.solve(A, b), rtol=1e-8)
    with pytest.raises(SingularMatrixError):
        RowScaled(np.zeros((2, 2)), DenseQR)


def test_factorize_falls_back_to_qr(rng):
    A, s = tree_system(rng, [-1, 0])
    A[3:6, 3:6] = 0.0  # structured pivot fails but the full matrix is still regular
    A[3:6, 0:3] = np.eye(3)
    A[0:3, 3:6] = np.eye(3)
    b = rng.normal(size=6)
    fact = factorize(A, s)
    assert isinstance(fact.inner, DenseQR)
    assert np.allclose(fact.solve(b), np.linalg.solve(A, b))
    assert isinstance(factorize(A, s, method="dense").inner, DenseQR)
