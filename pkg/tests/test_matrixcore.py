import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nmfattack.matrixcore import (
    SingularMatrixError,
    as_matrix,
    frobenius_norm,
    make_rng,
    matmul,
    solve_linear,
    uniform_matrix,
)


def naive_matmul(a, b):
    """Triple-loop oracle."""
    out = np.zeros((a.shape[0], b.shape[1]))
    for i in range(a.shape[0]):
        for j in range(b.shape[1]):
            s = 0.0
            for k in range(a.shape[1]):
                s += a[i, k] * b[k, j]
            out[i, j] = s
    return out


class TestMatmul:
    def test_identity(self, rng):
        m = rng.random((3, 3))
        assert np.array_equal(matmul(np.eye(3), m), m)

    def test_hand_checked_2x2(self):
        a = np.array([[1.0, 2.0], [3.0, 4.0]])
        b = np.array([[0.0], [1.0]])
        assert np.array_equal(matmul(a, b), np.array([[2.0], [4.0]]))

    def test_against_triple_loop(self, rng):
        a = rng.random((7, 5))
        b = rng.random((5, 3))
        assert np.abs(matmul(a, b) - naive_matmul(a, b)).max() < 1e-12

    def test_shape_mismatch(self, rng):
        with pytest.raises(ValueError, match="shape"):
            matmul(rng.random((3, 4)), rng.random((3, 4)))

    @given(st.integers(0, 2**32 - 1))
    @settings(max_examples=25, deadline=None)
    def test_associativity(self, seed):
        r = make_rng(seed)
        a, b, c = r.random((4, 6)), r.random((6, 3)), r.random((3, 5))
        lhs = matmul(matmul(a, b), c)
        rhs = matmul(a, matmul(b, c))
        assert np.abs(lhs - rhs).max() <= 1e-10 * max(1.0, np.abs(lhs).max())


class TestFrobeniusNorm:
    def test_zero_matrix(self):
        assert frobenius_norm(np.zeros((4, 5))) == 0.0

    def test_three_four_five(self):
        assert frobenius_norm(np.array([[3.0, 4.0]])) == pytest.approx(5.0)

    def test_against_elementwise_sum(self, rng):
        a = rng.standard_normal((6, 6))
        expected = np.sqrt(sum(v * v for v in a.ravel()))
        assert frobenius_norm(a) == pytest.approx(expected, rel=1e-13)


class TestSolveLinear:
    def test_identity_system(self, rng):
        b = rng.random((4, 2))
        assert np.allclose(solve_linear(np.eye(4), b), b)

    def test_diagonal_system(self):
        a = np.array([[2.0, 0.0], [0.0, 4.0]])
        b = np.array([[2.0], [8.0]])
        assert np.allclose(solve_linear(a, b), [[1.0], [2.0]])

    def test_residual_random_20x20(self, rng):
        a = rng.standard_normal((20, 20)) + 20.0 * np.eye(20)
        b = rng.standard_normal((20, 3))
        s = solve_linear(a, b)
        assert frobenius_norm(a @ s - b) < 1e-10 * frobenius_norm(b)

    def test_residual_over_100_systems(self):
        r = make_rng(77)
        for _ in range(100):
            n = int(r.integers(2, 25))
            a = r.standard_normal((n, n)) + n * np.eye(n)
            b = r.standard_normal((n, 2))
            s = solve_linear(a, b)
            assert frobenius_norm(a @ s - b) <= 1e-10 * max(1.0, frobenius_norm(b))

    def test_singular_error_carries_pivot(self):
        a = np.array([[1.0, 2.0], [2.0, 4.0]])
        with pytest.raises(SingularMatrixError) as exc:
            solve_linear(a, np.ones((2, 1)))
        assert exc.value.pivot < 1e-12

    def test_non_square_rejected(self, rng):
        with pytest.raises(ValueError, match="square"):
            solve_linear(rng.random((3, 4)), rng.random((3, 1)))

    def test_rhs_rows_mismatch(self, rng):
        with pytest.raises(ValueError, match="rows"):
            solve_linear(np.eye(3), rng.random((4, 1)))


class TestUniformMatrix:
    def test_range(self):
        m = uniform_matrix(make_rng(5), 50, 40, 0.0, 1.0)
        assert m.min() >= 0.0 and m.max() < 1.0

    def test_same_seed_identical(self):
        a = uniform_matrix(make_rng(9), 8, 8, 0.0, 1.0)
        b = uniform_matrix(make_rng(9), 8, 8, 0.0, 1.0)
        assert a.tobytes() == b.tobytes()

    def test_mean_of_million(self):
        m = uniform_matrix(make_rng(13), 1000, 1000, 0.0, 1.0)
        assert abs(m.mean() - 0.5) < 0.01

    def test_invalid_bounds(self):
        with pytest.raises(ValueError, match="lo < hi"):
            uniform_matrix(make_rng(1), 2, 2, 1.0, 1.0)


class TestAsMatrix:
    def test_rejects_non_finite(self):
        with pytest.raises(ValueError, match="finite"):
            as_matrix([[1.0, np.nan]])

    def test_rejects_wrong_ndim(self):
        with pytest.raises(ValueError, match="2-D"):
            as_matrix([1.0, 2.0])


def test_sampling_deterministic_bytes():
    # same seed, two independent generator instances, identical streams
    r1, r2 = make_rng(2024), make_rng(2024)
    a = r1.random((16, 16))
    b = r2.random((16, 16))
    assert a.tobytes() == b.tobytes()
