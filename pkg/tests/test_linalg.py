import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bnnlatent.errors import EmptyInput, NonSymmetric, NotPositiveDefinite
from bnnlatent.linalg import cholesky, cholesky_solve, jacobi_eigh, kmeans, lloyd, sym_eig, _kmeanspp


def random_spd(n, rng):
    A = rng.normal(size=(n, n))
    return A @ A.T + n * np.eye(n)


def random_orthogonal(n, rng):
    Q, R = np.linalg.qr(rng.normal(size=(n, n)))
    return Q * np.sign(np.diag(R))


class TestCholeskySolve:
    def test_identity(self):
        b = np.array([[1.0], [-2.0], [3.0]])
        np.testing.assert_array_equal(cholesky_solve(np.eye(3), b), b)

    def test_two_by_two(self):
        # inverse of [[4,2],[2,3]] is [[3,-2],[-2,4]]/8, applied to (2,1) gives (0.5, 0)
        X = cholesky_solve(np.array([[4.0, 2.0], [2.0, 3.0]]), np.array([[2.0], [1.0]]))
        np.testing.assert_allclose(X, [[0.5], [0.0]], atol=1e-15)

    def test_diagonal_scaling(self):
        np.testing.assert_allclose(cholesky_solve(2.0 * np.eye(2), np.eye(2)), 0.5 * np.eye(2))

    def test_vector_rhs_keeps_shape(self):
        x = cholesky_solve(np.array([[4.0, 2.0], [2.0, 3.0]]), np.array([2.0, 1.0]))
        assert x.shape == (2,)

    def test_not_positive_definite(self):
        with pytest.raises(NotPositiveDefinite):
            cholesky_solve(np.array([[1.0, 2.0], [2.0, 1.0]]), np.ones(2))

    def test_zero_pivot(self):
        with pytest.raises(NotPositiveDefinite):
            cholesky(np.zeros((2, 2)))

    def test_non_symmetric(self):
        with pytest.raises(NonSymmetric):
            cholesky_solve(np.array([[2.0, 1.0], [0.0, 2.0]]), np.ones(2))

    def test_factor_matches_lapack(self):
        A = random_spd(6, np.random.default_rng(3))
        np.testing.assert_allclose(cholesky(A), np.linalg.cholesky(A), rtol=1e-12, atol=1e-12)

    @settings(max_examples=30, deadline=None)
    @given(n=st.integers(1, 50), seed=st.integers(0, 2**31 - 1), k=st.integers(1, 4))
    def test_round_trip(self, n, seed, k):
        rng = np.random.default_rng(seed)
        A = random_spd(n, rng)
        B = rng.normal(size=(n, k))
        X = cholesky_solve(A, B)
        assert np.max(np.abs(A @ X - B)) <= 1e-8 * max(np.max(np.abs(B)), 1.0)


class TestSymEig:
    def test_diagonal(self):
        res = sym_eig(np.diag([3.0, 1.0, 2.0]))
        np.testing.assert_allclose(res.eigenvalues, [1.0, 2.0, 3.0])
        np.testing.assert_allclose(np.abs(res.eigenvectors), np.eye(3)[:, [1, 2, 0]])

    def test_two_by_two(self):
        # characteristic polynomial (2-l)^2 - 1 = 0 -> l = 1, 3
        res = sym_eig(np.array([[2.0, 1.0], [1.0, 2.0]]))
        np.testing.assert_allclose(res.eigenvalues, [1.0, 3.0], atol=1e-14)
        v = res.eigenvectors[:, 0]
        np.testing.assert_allclose(np.abs(v), [2**-0.5, 2**-0.5], atol=1e-14)

    def test_non_symmetric(self):
        with pytest.raises(NonSymmetric):
            sym_eig(np.array([[1.0, 2.0], [0.0, 1.0]]))

    @pytest.mark.parametrize("method", ["jacobi", "lapack"])
    @pytest.mark.parametrize("n", [1, 2, 5, 12, 30])
    def test_construct_then_decompose(self, method, n):
        rng = np.random.default_rng(n)
        Q = random_orthogonal(n, rng)
        lam = np.sort(rng.uniform(-5, 5, size=n))
        A = Q @ np.diag(lam) @ Q.T
        A = 0.5 * (A + A.T)
        res = sym_eig(A, method=method)
        np.testing.assert_allclose(res.eigenvalues, lam, atol=1e-8)
        V = res.eigenvectors
        assert np.max(np.abs(V.T @ V - np.eye(n))) <= 1e-10
        assert np.max(np.abs(V @ np.diag(res.eigenvalues) @ V.T - A)) <= 1e-8 * np.max(np.abs(A))
        np.testing.assert_allclose(A @ V, V * res.eigenvalues, atol=1e-8 * np.max(np.abs(lam)))

    def test_jacobi_matches_lapack_on_repeated_eigenvalues(self):
        rng = np.random.default_rng(5)
        Q = random_orthogonal(8, rng)
        A = Q @ np.diag([1.0, 1.0, 1.0, 2.0, 2.0, 5.0, 5.0, 5.0]) @ Q.T
        A = 0.5 * (A + A.T)
        np.testing.assert_allclose(jacobi_eigh(A).eigenvalues, np.linalg.eigvalsh(A), atol=1e-10)

    def test_n_lowest(self):
        rng = np.random.default_rng(0)
        A = random_spd(80, rng)
        full = sym_eig(A)
        low = sym_eig(A, n_lowest=3)
        np.testing.assert_allclose(low.eigenvalues, full.eigenvalues[:3], rtol=1e-10)
        assert low.eigenvectors.shape == (80, 3)
        small = sym_eig(A[:10, :10], n_lowest=2)
        assert small.eigenvectors.shape == (10, 2)

    @settings(max_examples=25, deadline=None)
    @given(n=st.integers(1, 20), seed=st.integers(0, 2**31 - 1))
    def test_reconstruction_property(self, n, seed):
        rng = np.random.default_rng(seed)
        A = rng.normal(size=(n, n))
        A = A + A.T
        res = jacobi_eigh(A)
        assert np.all(np.diff(res.eigenvalues) >= 0)
        V = res.eigenvectors
        assert np.max(np.abs(V @ np.diag(res.eigenvalues) @ V.T - A)) <= 1e-8 * max(np.max(np.abs(A)), 1e-300)


class TestKmeans:
    def test_two_far_points(self):
        labels = kmeans(np.array([[0.0, 0.0], [100.0, 100.0]]), 2, seed=0)
        assert labels[0] != labels[1]

    def test_identical_points(self):
        labels, inertia = kmeans(np.ones((6, 2)), 2, seed=0, return_inertia=True)
        assert inertia == 0.0
        assert labels.shape == (6,)

    @pytest.mark.parametrize("seed", range(5))
    def test_separated_blobs(self, seed):
        rng = np.random.default_rng(100 + seed)
        a = rng.normal(size=(40, 2))
        b = rng.normal(size=(40, 2)) + np.array([10.0, 0.0])
        truth = np.r_[np.zeros(40, int), np.ones(40, int)]
        labels = kmeans(np.vstack([a, b]), 2, seed=seed)
        assert np.array_equal(labels, truth) or np.array_equal(labels, 1 - truth)

    def test_deterministic(self):
        X = np.random.default_rng(1).normal(size=(50, 3))
        np.testing.assert_array_equal(kmeans(X, 4, seed=7), kmeans(X, 4, seed=7))

    def test_objective_non_increasing(self):
        rng = np.random.default_rng(2)
        X = rng.normal(size=(200, 2))
        _, _, history = lloyd(X, _kmeanspp(X, 5, rng))
        assert all(b <= a + 1e-9 for a, b in zip(history, history[1:]))

    def test_empty(self):
        with pytest.raises(EmptyInput):
            kmeans(np.zeros((0, 2)), 1)

    def test_bad_k(self):
        with pytest.raises(ValueError):
            kmeans(np.zeros((3, 2)), 4)
