import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from sdmcl import numerics
from sdmcl.errors import DimensionMismatch, IndexOutOfRange, ZeroVector

finite = st.floats(-1e3, 1e3, allow_nan=False)


def test_l2_normalize_examples():
    np.testing.assert_allclose(numerics.l2_normalize([3.0, 4.0]), [0.6, 0.8], atol=1e-15)
    np.testing.assert_array_equal(numerics.l2_normalize([1.0, 0.0, 0.0]), [1.0, 0.0, 0.0])
    with pytest.raises(ZeroVector):
        numerics.l2_normalize([0.0, 0.0])


@given(arrays(np.float64, st.integers(1, 12), elements=finite).filter(lambda v: np.linalg.norm(v) > 1e-6))
def test_l2_normalize_unit_and_idempotent(v):
    u = numerics.l2_normalize(v)
    assert abs(np.linalg.norm(u) - 1) < 1e-12
    np.testing.assert_allclose(numerics.l2_normalize(u), u, atol=1e-15)
    # direction preserved
    assert np.dot(u, v) > 0


def test_normalize_rows_and_columns(rng):
    X = rng.uniform(0.1, 1, size=(5, 3))
    np.testing.assert_allclose(np.linalg.norm(numerics.normalize_rows(X), axis=1), 1, atol=1e-12)
    np.testing.assert_allclose(np.linalg.norm(numerics.normalize_columns(X), axis=0), 1, atol=1e-12)
    X[2] = 0
    with pytest.raises(ZeroVector):
        numerics.normalize_rows(X)


def test_softmax_beta_examples():
    np.testing.assert_allclose(numerics.softmax_beta([10.0, 0.0], 1e-9), [0.5, 0.5], atol=1e-8)
    sig = 1 / (1 + math.exp(-0.05))
    np.testing.assert_allclose(numerics.softmax_beta([10.0, 0.0], 0.005), [sig, 1 - sig], atol=1e-12)
    np.testing.assert_allclose(numerics.softmax_beta([10.0, 0.0], 0.005), [0.5125, 0.4875], atol=1e-4)
    top = 1 / (1 + math.exp(-10))
    np.testing.assert_allclose(numerics.softmax_beta([10.0, 0.0], 1.0), [top, 1 - top], atol=1e-12)


def test_softmax_beta_rejects_bad_input():
    with pytest.raises(ValueError):
        numerics.softmax_beta([1.0, 2.0], 0.0)
    with pytest.raises(ValueError):
        numerics.softmax_beta([np.inf, 0.0], 1.0)


@given(arrays(np.float64, st.integers(1, 10), elements=finite), st.floats(0.001, 5), st.floats(-500, 500))
def test_softmax_beta_simplex_and_shift_invariance(logits, beta, shift):
    p = numerics.softmax_beta(logits, beta)
    assert np.all(p >= 0)
    assert abs(p.sum() - 1) < 1e-12
    np.testing.assert_allclose(numerics.softmax_beta(logits + shift, beta), p, atol=1e-12)


def test_cross_entropy_examples():
    assert numerics.cross_entropy([0.0, 1.0, 0.0], 1) == 0.0
    assert abs(numerics.cross_entropy(np.full(10, 0.1), 7) - 2.302585092994046) < 1e-12
    assert numerics.cross_entropy([1 - 1e-20, 1e-20], 1) == pytest.approx(-math.log(1e-12))
    with pytest.raises(IndexOutOfRange):
        numerics.cross_entropy([0.5, 0.5], 2)


def test_matvec_examples():
    v = np.array([1.0, -2.0, 3.0])
    np.testing.assert_array_equal(numerics.matvec(np.eye(3), v), v)
    np.testing.assert_array_equal(numerics.matvec(np.zeros((2, 3)), v), [0.0, 0.0])
    np.testing.assert_array_equal(numerics.matvec([[1.0, 2.0], [3.0, 4.0]], [1.0, 1.0]), [3.0, 7.0])
    with pytest.raises(DimensionMismatch):
        numerics.matvec(np.eye(3), [1.0, 2.0])
    with pytest.raises(DimensionMismatch):
        numerics.transpose_matvec(np.eye(3), [1.0, 2.0])


@given(st.integers(1, 6), st.integers(1, 6), st.integers(0, 2**32 - 1))
def test_transpose_matvec_matches_explicit_transpose(rows, cols, seed):
    r = np.random.default_rng(seed)
    M = r.standard_normal((rows, cols))
    u = r.standard_normal(rows)
    np.testing.assert_allclose(numerics.transpose_matvec(M, u), numerics.matvec(M.T, u), atol=1e-12)


def test_rng_reproducible():
    a = numerics.make_rng(7).random(5)
    b = numerics.make_rng(7).random(5)
    np.testing.assert_array_equal(a, b)
    assert not np.array_equal(a, numerics.make_rng(8).random(5))


@pytest.mark.parametrize("density", [0.01, 0.5])
def test_outer_sum_dense_and_sparse_agree(rng, density):
    left = rng.standard_normal((40, 6))
    right = rng.standard_normal((40, 9)) * (rng.random((40, 9)) < density)
    np.testing.assert_allclose(numerics.outer_sum(left, right), left.T @ right, atol=1e-12)


def test_logit_gradient_matches_finite_difference(rng):
    logits = rng.standard_normal((3, 4))
    target = np.array([0, 3, 1])
    beta = 0.3

    def loss(z):
        return sum(-np.log(numerics.softmax_beta(z[i], beta)[target[i]]) for i in range(3)) / 3

    grad = numerics.logit_gradient(logits, target, beta)
    num = np.zeros_like(logits)
    h = 1e-6
    for idx in np.ndindex(logits.shape):
        up, dn = logits.copy(), logits.copy()
        up[idx] += h
        dn[idx] -= h
        num[idx] = (loss(up) - loss(dn)) / (2 * h)
    np.testing.assert_allclose(grad, num, atol=1e-8)


def test_resolve_dtype():
    assert numerics.resolve_dtype("float32") is np.float32
    assert numerics.resolve_dtype(64) is np.float64
    with pytest.raises(ValueError):
        numerics.resolve_dtype("float16")


def test_deterministic_env(monkeypatch):
    monkeypatch.setenv("SDMCL_DETERMINISTIC", "1")
    assert numerics.deterministic_mode()
    monkeypatch.setenv("SDMCL_DETERMINISTIC", "0")
    assert not numerics.deterministic_mode()
    with numerics.blas_threads(True):
        pass
