import numpy as np
import pytest

from margin_lab import numerics as num


def triple_loop_matmul(a, b):
    out = np.zeros((a.shape[0], b.shape[1]))
    for i in range(a.shape[0]):
        for j in range(b.shape[1]):
            acc = 0.0
            for k in range(a.shape[1]):
                acc += a[i, k] * b[k, j]
            out[i, j] = acc
    return out


class TestMatmul:
    def test_identity(self):
        a = np.array([[1.0, 2.0], [3.0, 4.0]])
        assert np.array_equal(num.matmul(np.eye(2), a), a)

    def test_hand_computed(self):
        a = np.array([[1.0, 2.0], [3.0, 4.0]])
        b = np.array([[1.0], [1.0]])
        assert np.array_equal(num.matmul(a, b), np.array([[3.0], [7.0]]))

    def test_against_triple_loop(self):
        rng = num.make_rng(42)
        a, b = rng.standard_normal((7, 5)), rng.standard_normal((5, 3))
        assert np.max(np.abs(num.matmul(a, b) - triple_loop_matmul(a, b))) < 1e-12

    def test_transposed_variants(self):
        rng = num.make_rng(43)
        a, b = rng.standard_normal((5, 7)), rng.standard_normal((5, 3))
        c = rng.standard_normal((3, 7))
        assert np.allclose(num.matmul(a, b, transpose_a=True), a.T @ b)
        assert np.allclose(num.matmul(a, c, transpose_b=True), a @ c.T)

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError, match="mismatch"):
            num.matmul(np.ones((2, 3)), np.ones((2, 3)))

    def test_associativity(self):
        rng = num.make_rng(44)
        for _ in range(5):
            a = rng.standard_normal((4, 6))
            b = rng.standard_normal((6, 3))
            c = rng.standard_normal((3, 5))
            left = num.matmul(num.matmul(a, b), c)
            right = num.matmul(a, num.matmul(b, c))
            scale = np.max(np.abs(left))
            assert np.max(np.abs(left - right)) < 1e-9 * max(scale, 1.0)


class TestFrobeniusNorm:
    def test_zero(self):
        assert num.frobenius_norm(np.zeros((3, 4))) == 0.0

    def test_identity(self):
        assert num.frobenius_norm(np.eye(3)) == pytest.approx(np.sqrt(3), rel=1e-15)

    def test_three_four_five(self):
        assert num.frobenius_norm(np.array([[3.0, 4.0]])) == pytest.approx(5.0)


class TestSpectralNorm:
    def test_identity(self):
        result = num.spectral_norm(np.eye(4))
        assert result.converged
        assert result.value == pytest.approx(1.0, rel=1e-12)

    def test_diagonal(self):
        result = num.spectral_norm(np.diag([5.0, 2.0, 1.0]))
        assert result.value == pytest.approx(5.0, rel=1e-9)

    def test_against_eigendecomposition_oracle(self):
        rng = num.make_rng(7)
        a = rng.standard_normal((20, 30))
        oracle = float(np.sqrt(np.linalg.eigvalsh(a.T @ a).max()))
        result = num.spectral_norm(a, rng=num.make_rng(1))
        assert result.converged
        assert result.value == pytest.approx(oracle, rel=1e-6)

    def test_homogeneity(self):
        rng = num.make_rng(8)
        a = rng.standard_normal((9, 6))
        base = num.spectral_norm(a, rng=num.make_rng(2)).value
        for c in (-3.0, 0.5, 7.25):
            scaled = num.spectral_norm(c * a, rng=num.make_rng(2)).value
            assert scaled == pytest.approx(abs(c) * base, rel=1e-8)

    def test_norm_inequality_chain(self):
        rng = num.make_rng(9)
        for _ in range(10):
            rows, cols = rng.integers(2, 25, size=2)
            a = rng.standard_normal((rows, cols))
            frob = num.frobenius_norm(a)
            sigma = num.spectral_norm(a, rng=num.make_rng(3)).value
            d = min(rows, cols)
            assert frob / np.sqrt(d) <= sigma * (1 + 1e-6)
            assert sigma <= frob * (1 + 1e-6)

    def test_non_convergence_flag(self):
        rng = num.make_rng(10)
        a = rng.standard_normal((12, 12))
        result = num.spectral_norm(a, tol=1e-18, max_iter=2, rng=num.make_rng(4))
        assert not result.converged
        assert result.iterations == 2

    def test_zero_matrix(self):
        result = num.spectral_norm(np.zeros((5, 5)))
        assert result.value == 0.0 and result.converged


class TestTwoOneNorm:
    def test_identity(self):
        for d in (2, 5, 11):
            assert num.two_one_norm(np.eye(d)) == pytest.approx(float(d))

    def test_single_column(self):
        assert num.two_one_norm(np.array([[3.0], [4.0]])) == pytest.approx(5.0)

    def test_against_brute_force(self):
        rng = num.make_rng(11)
        a = rng.standard_normal((6, 4))
        brute = sum(np.sqrt((a[:, j] ** 2).sum()) for j in range(4))
        assert num.two_one_norm(a) == pytest.approx(brute, abs=1e-12)


class TestCholesky:
    def test_identity_zero_jitter(self):
        assert np.allclose(num.cholesky(np.eye(3), jitter=0.0), np.eye(3))

    def test_hand_factorization(self):
        a = np.array([[4.0, 2.0], [2.0, 3.0]])
        expected = np.array([[2.0, 0.0], [1.0, np.sqrt(2.0)]])
        assert np.allclose(num.cholesky(a, jitter=0.0), expected, atol=1e-12)

    def test_reconstruction(self):
        rng = num.make_rng(12)
        a = rng.standard_normal((10, 10))
        psd = a.T @ a
        L = num.cholesky(psd, jitter=0.0)
        assert num.frobenius_norm(L @ L.T - psd) < 1e-9
        assert np.allclose(np.triu(L, 1), 0.0)

    def test_jitter_identity(self):
        # L L^T reproduces a + jitter*mean(diag)*I, not a itself
        rng = num.make_rng(14)
        a = rng.standard_normal((8, 8))
        psd = a.T @ a
        level = 1e-6
        L = num.cholesky(psd, jitter=level)
        shifted = psd + level * np.mean(np.diag(psd)) * np.eye(8)
        assert num.frobenius_norm(L @ L.T - shifted) < 1e-10

    def test_jitter_escalation_on_singular(self):
        rng = num.make_rng(13)
        v = rng.standard_normal((1, 6))
        rank_one = v.T @ v  # singular PSD
        L = num.cholesky(rank_one)
        assert np.all(np.isfinite(L))

    def test_not_positive_definite_names_pivot(self):
        a = np.diag([1.0, -5.0, 2.0])
        with pytest.raises(num.NotPositiveDefiniteError, match="pivot"):
            num.cholesky(a)

    def test_rejects_asymmetric(self):
        a = np.array([[1.0, 0.5], [0.0, 1.0]])
        with pytest.raises(ValueError, match="symmetric"):
            num.cholesky(a)


class TestGaussianSample:
    def test_deterministic(self):
        a = num.gaussian_sample(num.make_rng(99), 1000)
        b = num.gaussian_sample(num.make_rng(99), 1000)
        assert np.array_equal(a, b)

    def test_moments(self):
        draws = num.gaussian_sample(num.make_rng(100), 10**6)
        assert abs(draws.mean()) < 0.01
        assert abs(draws.var() - 1.0) < 0.01

    def test_rejects_nonpositive_n(self):
        with pytest.raises(ValueError):
            num.gaussian_sample(num.make_rng(0), 0)


class TestRngSplitting:
    def test_split_is_stable(self):
        a = num.split_rng(5, 3).standard_normal(4)
        b = num.split_rng(5, 3).standard_normal(4)
        assert np.array_equal(a, b)

    def test_split_streams_differ(self):
        a = num.split_rng(5, 0).standard_normal(4)
        b = num.split_rng(5, 1).standard_normal(4)
        assert not np.array_equal(a, b)
