import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from whitenopt import linalg
from whitenopt.linalg import (
    ConvergenceError,
    eig_sym,
    frobenius_norm,
    kron,
    mat_power_sym,
    matmul,
    sample_spd,
    trace,
    transpose,
    unvec,
    vec,
)

seeds = st.integers(0, 2**32 - 1)
dims = st.integers(1, 8)


def triple_loop(a, b):
    out = np.zeros((len(a), len(b[0])))
    for i in range(len(a)):
        for j in range(len(b[0])):
            for k in range(len(b)):
                out[i, j] += a[i][k] * b[k][j]
    return out


def random_symmetric(seed, n):
    x = np.random.default_rng(seed).standard_normal((n, n))
    return x + x.T


# ---------------------------------------------------------------- matmul / kron / vec


def test_matmul_small_example():
    assert np.array_equal(matmul([[1, 2], [3, 4]], [[5], [6]]), [[17], [39]])


def test_matmul_identity():
    a = np.arange(6.0).reshape(2, 3)
    assert np.array_equal(matmul(np.eye(2), a), a)


@given(seeds, st.integers(1, 6), st.integers(1, 6), st.integers(1, 6))
def test_matmul_matches_triple_loop(seed, r, k, c):
    rng = np.random.default_rng(seed)
    a, b = rng.standard_normal((r, k)), rng.standard_normal((k, c))
    np.testing.assert_allclose(matmul(a, b), triple_loop(a.tolist(), b.tolist()), rtol=1e-12, atol=1e-12)


def test_matmul_shape_mismatch_names_shapes():
    with pytest.raises(ValueError, match="2x3 by 2x2"):
        matmul(np.ones((2, 3)), np.ones((2, 2)))


def test_kron_hand_example():
    a = [[1, 2], [3, 4]]
    b = [[0, 5], [6, 7]]
    expected = [
        [0, 5, 0, 10],
        [6, 7, 12, 14],
        [0, 15, 0, 20],
        [18, 21, 24, 28],
    ]
    assert np.array_equal(kron(a, b), expected)


def test_kron_of_identities():
    assert np.array_equal(kron(np.eye(2), np.eye(3)), np.eye(6))


@given(seeds, st.integers(1, 4), st.integers(1, 4), st.integers(1, 4), st.integers(1, 4))
def test_kron_block_structure(seed, ra, ca, rb, cb):
    rng = np.random.default_rng(seed)
    a, b = rng.standard_normal((ra, ca)), rng.standard_normal((rb, cb))
    k = kron(a, b)
    assert k.shape == (ra * rb, ca * cb)
    for i in range(ra):
        for j in range(ca):
            assert np.array_equal(k[i * rb : (i + 1) * rb, j * cb : (j + 1) * cb], a[i, j] * b)


def test_vec_is_column_stacking():
    assert np.array_equal(vec([[1, 2], [3, 4]]), [1, 3, 2, 4])


@given(seeds, st.integers(1, 6), st.integers(1, 6))
def test_unvec_inverts_vec(seed, r, c):
    g = np.random.default_rng(seed).standard_normal((r, c))
    assert np.array_equal(unvec(vec(g), r, c), g)


@given(seeds, st.integers(1, 5), st.integers(1, 5))
def test_kron_vec_identity(seed, m, n):
    rng = np.random.default_rng(seed)
    a, b, g = rng.standard_normal((n, n)), rng.standard_normal((m, m)), rng.standard_normal((m, n))
    lhs = kron(a, b) @ vec(g)
    rhs = vec(b @ g @ a.T)
    assert np.linalg.norm(lhs - rhs) <= 1e-12 * max(1.0, np.linalg.norm(rhs))


def test_kron_vec_with_identity_factor():
    g = np.array([[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]])
    b = np.diag([1.0, 2.0, 3.0])
    assert np.allclose(kron(np.eye(2), b) @ vec(g), vec(b @ g))


def test_unvec_length_mismatch():
    with pytest.raises(ValueError, match="length 5 into 2x3"):
        unvec(np.ones(5), 2, 3)


def test_non_finite_input_rejected():
    with pytest.raises(ValueError, match="non-finite"):
        kron([[np.nan]], [[1.0]])


def test_trace_transpose_norm():
    assert trace(np.eye(3)) == 3.0
    assert frobenius_norm(np.eye(2)) == pytest.approx(np.sqrt(2.0))
    assert np.array_equal(transpose([[1, 2, 3]]), [[1], [2], [3]])
    with pytest.raises(ValueError, match="square"):
        trace(np.ones((2, 3)))


# ---------------------------------------------------------------- eig_sym


def test_eig_identity():
    lam, q = eig_sym(np.eye(3))
    assert np.array_equal(lam, np.ones(3))
    assert np.allclose(q.T @ q, np.eye(3), atol=1e-14)


def test_eig_two_by_two():
    lam, q = eig_sym([[2.0, 1.0], [1.0, 2.0]])
    np.testing.assert_allclose(lam, [3.0, 1.0], atol=1e-14)
    np.testing.assert_allclose(np.abs(q), np.full((2, 2), np.sqrt(0.5)), atol=1e-14)


def test_eig_sign_convention():
    _, q = eig_sym(random_symmetric(3, 6))
    pivots = np.argmax(np.abs(q), axis=0)
    assert np.all(q[pivots, np.arange(6)] > 0)


@given(seeds, dims)
def test_eig_orthogonal_and_reconstructs(seed, n):
    a = random_symmetric(seed, n)
    lam, q = eig_sym(a)
    assert np.max(np.abs(q.T @ q - np.eye(n))) <= 1e-10
    assert np.max(np.abs(q @ np.diag(lam) @ q.T - a)) <= 1e-9 * max(1.0, np.abs(a).max())
    assert np.all(np.diff(lam) <= 0)


@given(seeds, st.integers(2, 6), st.sampled_from([1e2, 1e4, 1e6, 1e8]))
def test_eig_spd_matches_known_spectrum(seed, n, cond):
    a = sample_spd(n, seed, cond)
    lam, _ = eig_sym(a)
    np.testing.assert_allclose(lam[0], cond, rtol=1e-10)
    np.testing.assert_allclose(lam[-1], 1.0, rtol=1e-6)


@given(seeds, st.integers(2, 6))
def test_eig_warm_start_agrees(seed, n):
    a = random_symmetric(seed, n)
    cold = eig_sym(a)
    nearby = a + 1e-6 * random_symmetric(seed + 1, n)
    warm = eig_sym(nearby, guess=cold.eigenvectors)
    reference = eig_sym(nearby)
    np.testing.assert_allclose(warm.eigenvalues, reference.eigenvalues, atol=1e-9)


def test_eig_deterministic():
    a = random_symmetric(7, 5)
    r1, r2 = eig_sym(a), eig_sym(a)
    assert np.array_equal(r1.eigenvalues, r2.eigenvalues)
    assert np.array_equal(r1.eigenvectors, r2.eigenvectors)


def test_eig_rejects_bad_input():
    with pytest.raises(ValueError, match="square"):
        eig_sym(np.ones((2, 3)))
    with pytest.raises(ValueError, match="not symmetric"):
        eig_sym([[1.0, 2.0], [0.0, 1.0]])
    with pytest.raises(ValueError, match="non-finite"):
        eig_sym([[np.inf, 0.0], [0.0, 1.0]])


def test_eig_reports_non_convergence(monkeypatch):
    monkeypatch.setattr(linalg, "JACOBI_MAX_SWEEPS", 1)
    with pytest.raises(ConvergenceError, match="residual"):
        eig_sym(random_symmetric(0, 8))


# ---------------------------------------------------------------- mat_power_sym


def test_power_identity():
    assert np.allclose(mat_power_sym(np.eye(3), -0.5), np.eye(3))


def test_power_diagonal_inverse_root():
    np.testing.assert_allclose(mat_power_sym(np.diag([4.0, 9.0]), -0.5, ridge=0.0), np.diag([0.5, 1 / 3]), rtol=1e-14)


def test_power_zero_is_identity():
    assert np.allclose(mat_power_sym(random_symmetric(1, 4), 0), np.eye(4))


def test_integer_power_of_indefinite_matrix():
    a = random_symmetric(2, 4)
    np.testing.assert_allclose(mat_power_sym(a, 2), a @ a, atol=1e-10)


@given(seeds, st.integers(1, 6), st.sampled_from([1.0, 1e2, 1e4]))
def test_sqrt_then_square(seed, n, cond):
    a = sample_spd(n, seed, cond)
    s = mat_power_sym(a, 0.5)
    assert np.linalg.norm(s @ s - a) <= 1e-8 * np.linalg.norm(a)


@given(seeds, st.integers(1, 6), st.sampled_from([1.0, 1e2, 1e4]))
def test_inverse_root_whitens(seed, n, cond):
    a = sample_spd(n, seed, cond)
    r = mat_power_sym(a, -0.5, ridge=0.0)
    assert np.max(np.abs(r @ a @ r - np.eye(n))) <= 1e-9


@given(seeds, st.integers(1, 3), st.integers(1, 3), st.sampled_from([0.5, -0.5, 2.0]))
def test_power_distributes_over_kron(seed, m, n, p):
    a, b = sample_spd(m, seed, 50.0), sample_spd(n, seed + 1, 50.0)
    lhs = mat_power_sym(kron(a, b), p, ridge=0.0)
    rhs = kron(mat_power_sym(a, p, ridge=0.0), mat_power_sym(b, p, ridge=0.0))
    assert np.linalg.norm(lhs - rhs) <= 1e-9 * np.linalg.norm(rhs)


def test_fractional_power_of_indefinite_rejected():
    with pytest.raises(ValueError, match="not positive semidefinite"):
        mat_power_sym([[1.0, 0.0], [0.0, -1.0]], 0.5)


def test_negative_power_of_singular_is_floored():
    r = mat_power_sym(np.diag([1.0, 0.0]), -0.5, ridge=0.0)
    assert np.all(np.isfinite(r))
    assert r[1, 1] == pytest.approx(1e6)


def test_default_ridge_tracks_trace():
    a = np.diag([2.0, 2.0])
    expected = (2.0 + 1e-10 * 2.0) ** -0.5
    assert mat_power_sym(a, -0.5)[0, 0] == pytest.approx(expected, rel=1e-15)


def test_negative_ridge_rejected():
    with pytest.raises(ValueError, match="ridge"):
        mat_power_sym(np.eye(2), -0.5, ridge=-1.0)


@given(seeds, st.integers(1, 6), st.floats(1.0, 1e6))
def test_sample_spd_condition(seed, n, cond):
    lam = np.linalg.eigvalsh(sample_spd(n, seed, cond))
    assert lam.min() > 0
    assert lam.max() / lam.min() <= cond * (1 + 1e-8)


def test_sample_spd_rejects_small_condition():
    with pytest.raises(ValueError):
        sample_spd(3, 0, 0.5)
