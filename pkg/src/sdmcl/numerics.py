"""Shared linear algebra, normalization and loss helpers.

Matrices and vectors are plain numpy arrays. Oracle and test arithmetic runs in
float64; training runs may use float32 via :func:`resolve_dtype`.
"""

import contextlib
import os

import numpy as np

from .errors import DimensionMismatch, IndexOutOfRange, ZeroVector

ZERO_NORM = 1e-30
PROB_FLOOR = 1e-12


def resolve_dtype(precision):
    """Map ``"float32"``/``"float64"`` (or 32/64) to a numpy dtype."""
    if precision in (32, "32", "float32", np.float32):
        return np.float32
    if precision in (64, "64", "float64", np.float64, None):
        return np.float64
    raise ValueError(f"unknown precision {precision!r}")


def make_rng(seed):
    """Seeded PCG64 generator; the same seed always yields the same stream."""
    return np.random.Generator(np.random.PCG64(seed))


def deterministic_mode():
    return os.environ.get("SDMCL_DETERMINISTIC", "") not in ("", "0")


@contextlib.contextmanager
def blas_threads(deterministic=None):
    """Pin BLAS to one thread when deterministic mode is on."""
    if deterministic is None:
        deterministic = deterministic_mode()
    if not deterministic:
        yield
        return
    from threadpoolctl import threadpool_limits

    with threadpool_limits(limits=1):
        yield


def _check_finite(x, what):
    if not np.all(np.isfinite(x)):
        raise ValueError(f"{what} contains non-finite values")


def l2_normalize(v):
    v = np.asarray(v, dtype=float)
    norm = np.sqrt(np.dot(v, v))
    if norm < ZERO_NORM:
        raise ZeroVector("cannot normalize a zero vector")
    return v / norm


def normalize_rows(X):
    """Unit-normalize each row of ``X``; rows with zero norm raise ZeroVector."""
    X = np.asarray(X)
    norms = np.linalg.norm(X, axis=-1, keepdims=True)
    if np.any(norms < ZERO_NORM):
        raise ZeroVector("cannot normalize a zero row")
    return X / norms


def normalize_columns(M):
    M = np.asarray(M)
    norms = np.linalg.norm(M, axis=0, keepdims=True)
    if np.any(norms < ZERO_NORM):
        raise ZeroVector("cannot normalize a zero column")
    return M / norms


def softmax_beta(logits, beta=1.0):
    """Softmax of ``beta * logits`` along the last axis.

    Max-subtracted, so adding a constant to every logit leaves the result
    unchanged. ``beta < 1`` flattens the distribution.
    """
    if beta <= 0:
        raise ValueError("beta must be positive")
    z = beta * np.asarray(logits, dtype=float)
    _check_finite(z, "logits")
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def softmax(logits):
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def cross_entropy(probs, target):
    probs = np.asarray(probs)
    if not 0 <= target < probs.shape[-1]:
        raise IndexOutOfRange(f"target {target} outside [0, {probs.shape[-1]})")
    return float(-np.log(max(probs[target], PROB_FLOOR)))


def batch_cross_entropy(probs, targets):
    """Mean cross entropy of a (batch, classes) probability matrix."""
    picked = probs[np.arange(len(targets)), targets]
    return float(-np.log(np.maximum(picked, PROB_FLOOR)).mean())


def matvec(M, v):
    M = np.asarray(M)
    v = np.asarray(v)
    if M.ndim != 2 or v.ndim != 1 or M.shape[1] != v.shape[0]:
        raise DimensionMismatch(f"cannot multiply {M.shape} by {v.shape}")
    return M @ v


def transpose_matvec(M, u):
    """Compute ``M.T @ u`` without materializing the transpose."""
    M = np.asarray(M)
    u = np.asarray(u)
    if M.ndim != 2 or u.ndim != 1 or M.shape[0] != u.shape[0]:
        raise DimensionMismatch(f"cannot multiply {M.shape}^T by {u.shape}")
    return u @ M


def one_hot(labels, num_classes, dtype=np.float64):
    out = np.zeros((len(labels), num_classes), dtype=dtype)
    out[np.arange(len(labels)), labels] = 1
    return out


def outer_sum(left, right, sparse_threshold=0.05):
    """Sum over the batch of ``outer(left[b], right[b])``, i.e. ``left.T @ right``.

    When ``right`` is mostly zeros (Top-K backward passes), the product is
    formed from its nonzero entries only.
    """
    if right.size and sparse_threshold > 0:
        nnz = np.count_nonzero(right)
        if nnz < sparse_threshold * right.size:
            from scipy import sparse

            csr = sparse.csr_matrix(right)
            return np.asarray((csr.T @ left).T)
    return left.T @ right


def logit_gradient(logits, target, beta=1.0, mean=True):
    """Gradient of the cross entropy of ``softmax(beta * logits)`` w.r.t. the logits."""
    logits = np.atleast_2d(logits).astype(np.float64)
    target = np.atleast_1d(target)
    dY = beta * (softmax_beta(logits, beta) - one_hot(target, logits.shape[1]))
    return dY / len(target) if mean else dY
