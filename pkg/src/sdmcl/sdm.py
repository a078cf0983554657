"""Classic Sparse Distributed Memory, circle-intersection counts and E/I dynamics.

Addresses and queries are real unit vectors; a neuron fires for a pattern when
the cosine similarity reaches the threshold ``c`` (ties count as active) or,
under the Top-K rule, when it is among the k closest neurons.
"""

import logging
from dataclasses import dataclass, field
from math import comb, exp, floor

import numpy as np

from . import numerics
from .errors import DimensionMismatch, NotNormalized

log = logging.getLogger(__name__)

NORM_TOL = 1e-9


@dataclass(frozen=True)
class CosineThreshold:
    c: float

    def __post_init__(self):
        if not -1 <= self.c <= 1:
            raise ValueError("cosine threshold must lie in [-1, 1]")


@dataclass(frozen=True)
class TopK:
    k: int

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("k must be at least 1")


class NoActiveNeurons:
    """Read result when no neuron is within the activation threshold."""

    def __repr__(self):
        return "NoActiveNeurons"

    def __bool__(self):
        return False


NO_ACTIVE = NoActiveNeurons()


def _check_unit_columns(M, what):
    norms = np.linalg.norm(M, axis=0)
    if not np.allclose(norms, 1.0, atol=NORM_TOL, rtol=0):
        raise NotNormalized(f"{what} columns must have unit norm")


@dataclass
class SdmMemory:
    Xa: np.ndarray  # n x r neuron addresses, unit-norm columns
    Xv: np.ndarray  # o x r neuron storage
    rule: object = field(default_factory=lambda: CosineThreshold(0.5))

    def __post_init__(self):
        self.Xa = np.asarray(self.Xa, dtype=float)
        self.Xv = np.asarray(self.Xv, dtype=float)
        if self.Xa.ndim != 2 or self.Xv.ndim != 2 or self.Xa.shape[1] != self.Xv.shape[1]:
            raise DimensionMismatch("Xa (n x r) and Xv (o x r) must share r")
        _check_unit_columns(self.Xa, "address")
        if isinstance(self.rule, TopK) and self.rule.k > self.r:
            raise ValueError("k cannot exceed the number of neurons")

    @property
    def n(self):
        return self.Xa.shape[0]

    @property
    def r(self):
        return self.Xa.shape[1]

    @property
    def o(self):
        return self.Xv.shape[0]

    @classmethod
    def random(cls, n, r, o, rule, seed=0):
        rng = numerics.make_rng(seed)
        Xa = numerics.normalize_columns(rng.standard_normal((n, r)))
        return cls(Xa, np.zeros((o, r)), rule)

    def copy(self):
        return SdmMemory(self.Xa.copy(), self.Xv.copy(), self.rule)


def activation(rule, sims):
    """{0,1} activation matrix from a (patterns x neurons) cosine matrix."""
    sims = np.atleast_2d(sims)
    if isinstance(rule, CosineThreshold):
        return (sims >= rule.c).astype(float)
    k = min(rule.k, sims.shape[1])
    # stable sort keeps the lowest index on ties
    top = np.argsort(-sims, axis=1, kind="stable")[:, :k]
    out = np.zeros_like(sims, dtype=float)
    np.put_along_axis(out, top, 1.0, axis=1)
    return out


def sdm_write(mem, Pa, Pv):
    """Store patterns (columns of ``Pa`` n x m, ``Pv`` o x m); returns a new memory."""
    Pa = np.asarray(Pa, dtype=float)
    Pv = np.asarray(Pv, dtype=float)
    if Pa.ndim == 1:
        Pa = Pa[:, None]
    if Pv.ndim == 1:
        Pv = Pv[:, None]
    if Pa.shape[0] != mem.n or Pv.shape[0] != mem.o or Pa.shape[1] != Pv.shape[1]:
        raise DimensionMismatch("patterns must be n x m and o x m")
    _check_unit_columns(Pa, "pattern address")
    act = activation(mem.rule, Pa.T @ mem.Xa)  # m x r
    out = mem.copy()
    out.Xv += Pv @ act
    return out


def sdm_read(mem, query, renormalize=False):
    """Sum of the storage of every activated neuron, or ``NO_ACTIVE``."""
    query = np.asarray(query, dtype=float)
    if query.shape != (mem.n,):
        raise DimensionMismatch(f"query must have shape ({mem.n},)")
    if abs(np.linalg.norm(query) - 1) > NORM_TOL:
        raise NotNormalized("query must have unit norm")
    act = activation(mem.rule, query @ mem.Xa)[0]
    if not act.any():
        return NO_ACTIVE
    y = mem.Xv @ act
    if renormalize:
        y = numerics.l2_normalize(y)
    return y


# -- circle intersection ------------------------------------------------------

WEIGHT_TYPES = ("binary", "linear", "exp")

# Decay rate of the exponential weight. For n=64 the normalized curve stays
# within ~3% of the binary one at this value; the gap grows roughly linearly
# in beta.
DEFAULT_EXP_BETA = 0.05


@dataclass(frozen=True)
class IntersectionQuery:
    n: int
    d: int
    d_v: int
    weight_type: str = "binary"
    beta: float = DEFAULT_EXP_BETA

    def __post_init__(self):
        if not 0 <= self.d_v <= self.n or not 0 <= self.d <= self.n:
            raise ValueError("need 0 <= d, d_v <= n")
        if self.weight_type not in WEIGHT_TYPES:
            raise ValueError(f"weight type must be one of {WEIGHT_TYPES}")
        if self.weight_type == "exp" and self.beta <= 0:
            raise ValueError("beta must be positive")


def _binom(n, k):
    return comb(n, k) if 0 <= k <= n else 0


def intersection_weight(weight_type, a, c, d_v, n, beta=DEFAULT_EXP_BETA):
    """Per-neuron weight for a neuron agreeing with both vectors on ``a`` bits
    and with only the pattern on ``c`` of the ``d_v`` disagreeing bits."""
    if weight_type == "binary":
        return 1.0
    to_pattern = n - (a + c)
    to_query = n - (a + (d_v - c))
    if weight_type == "linear":
        return (n - to_pattern) / n * (n - to_query) / n
    return exp(-beta * to_pattern) * exp(-beta * to_query)


def intersection_terms(n, d, d_v):
    """Yield ``(a, c, count)`` for every nonempty neuron group in the intersection."""
    lo_a = max(0, n - d - floor(d_v / 2))
    for a in range(lo_a, n - d_v + 1):
        need = n - d - a
        for c in range(max(0, need), min(d_v, d_v - need) + 1):
            count = _binom(n - d_v, a) * _binom(d_v, c)
            if count:
                yield a, c, count


def intersection_weighted_sum(q):
    """Weighted number of binary addresses within Hamming ``d`` of both vectors."""
    if q.weight_type == "binary":
        return float(sum(count for _, _, count in intersection_terms(q.n, q.d, q.d_v)))
    total = 0.0
    for a, c, count in intersection_terms(q.n, q.d, q.d_v):
        total += count * intersection_weight(q.weight_type, a, c, q.d_v, q.n, q.beta)
    return total


def intersection_curve(n, d, weight_type="binary", beta=DEFAULT_EXP_BETA):
    """``[(d_v, value / value at d_v = 0)]`` for ``d_v = 0..n``."""
    if n > 512:
        raise ValueError("intersection curves are limited to n <= 512")
    raw = [intersection_weighted_sum(IntersectionQuery(n, d, dv, weight_type, beta)) for dv in range(n + 1)]
    base = raw[0]
    return [(dv, value / base if base else 0.0) for dv, value in enumerate(raw)]


def enumerate_intersection(n, d, d_v):
    """Brute-force count over all 2^n binary addresses (small n only)."""
    if n > 20:
        raise ValueError("enumeration is limited to n <= 20")
    codes = np.arange(2**n, dtype=np.int64)
    bits = (codes[:, None] >> np.arange(n)) & 1
    query = np.zeros(n, dtype=np.int64)
    pattern = np.zeros(n, dtype=np.int64)
    pattern[:d_v] = 1
    to_query = np.count_nonzero(bits != query, axis=1)
    to_pattern = np.count_nonzero(bits != pattern, axis=1)
    return int(np.count_nonzero((to_query <= d) & (to_pattern <= d)))


# -- excitatory / inhibitory dynamics -------------------------------------------


@dataclass
class EiDynamicsConfig:
    """Rate dynamics of excitatory units coupled through inhibitory interneurons.

    ``W_EI`` (r_I x r_E) drives the interneurons from the excitatory units and
    ``W_IE`` (r_E x r_I) feeds them back. ``ie_sign`` is the sign of that
    feedback in the excitatory drive: -1 (default) makes the interneurons
    inhibit, +1 makes them excite, as GABA does before the developmental switch.
    """

    W_inp: np.ndarray  # n x r_E
    W_EI: np.ndarray
    W_IE: np.ndarray
    b: np.ndarray  # per-unit excitatory threshold
    b_i: float = 0.0
    # slow excitatory and fast inhibitory units keep the explicit Euler
    # scheme stable despite the ~r_E loop gain of the homogeneous wiring
    tau_a: float = 50.0
    tau_i: float = 0.1
    L: float = 1.0
    ie_sign: float = -1.0
    delta: float = 0.1
    max_steps: int = 10_000
    tol: float = 1e-6

    def __post_init__(self):
        if min(self.tau_a, self.tau_i, self.L, self.delta) <= 0:
            raise ValueError("time constants, L and the step size must be positive")
        r_e = self.W_inp.shape[1]
        if self.W_EI.shape[1] != r_e or self.W_IE.shape != (r_e, self.W_EI.shape[0]):
            raise DimensionMismatch("W_EI must be r_I x r_E and W_IE r_E x r_I")
        self.b = np.broadcast_to(np.asarray(self.b, dtype=float), (r_e,)).copy()

    @property
    def r_E(self):
        return self.W_inp.shape[1]

    @property
    def r_I(self):
        return self.W_EI.shape[0]


def make_ei_config(n, r_E=1000, r_I=10, p_connect=0.9, seed=0, **kwargs):
    """Random homogeneous E/I wiring: each E-I link exists with ``p_connect``.

    E->I links have strength 1 and I->E links ``1 / (p_connect * r_I)`` so the
    feedback onto every excitatory unit sums to one in expectation.
    Input weights are uniform nonnegative with unit-norm columns.
    """
    rng = numerics.make_rng(seed)
    W_inp = numerics.normalize_columns(rng.uniform(0, 1, size=(n, r_E)))
    W_EI = (rng.random((r_I, r_E)) < p_connect).astype(float)
    W_IE = (rng.random((r_E, r_I)) < p_connect) / (p_connect * r_I)
    kwargs.setdefault("b", 0.0)
    return EiDynamicsConfig(W_inp=W_inp, W_EI=W_EI, W_IE=W_IE, **kwargs)


@dataclass
class EiResult:
    e: np.ndarray
    i: np.ndarray
    steps: int
    converged: bool

    @property
    def active_count(self):
        return int(np.count_nonzero(self.e > ACTIVE_LEVEL))


ACTIVE_LEVEL = 1e-3


def simulate_ei_dynamics(cfg, x):
    """Euler-integrate the E/I rate equations from ``e = W_inp^T x``, ``i = 0``.

    Stops once the largest change in one step drops below ``cfg.tol``; a run
    that hits ``max_steps`` is returned with ``converged=False``.
    """
    x = np.asarray(x, dtype=float)
    if x.shape != (cfg.W_inp.shape[0],):
        raise DimensionMismatch("input dimension does not match W_inp")
    e0 = cfg.W_inp.T @ x
    e = e0.copy()
    i = np.zeros(cfg.r_I)
    for step in range(1, cfg.max_steps + 1):
        p_a = e0 + cfg.ie_sign * (cfg.W_IE @ i)
        p_i = cfg.W_EI @ e
        g_a = (-e + np.tanh(np.maximum((p_a - cfg.b) / cfg.L, 0))) / cfg.tau_a
        g_i = (-i + np.maximum(p_i - cfg.b_i, 0)) / cfg.tau_i
        e = e + cfg.delta * g_a
        i = i + cfg.delta * g_i
        change = max(np.abs(g_a).max(), np.abs(g_i).max()) * cfg.delta
        if change < cfg.tol:
            return EiResult(e, i, step, True)
    log.warning("E/I dynamics did not converge in %d steps", cfg.max_steps)
    return EiResult(e, i, cfg.max_steps, False)


def active_counts(cfg, inputs):
    return np.array([simulate_ei_dynamics(cfg, x).active_count for x in inputs])


def tune_inhibitory_threshold(cfg, inputs, target_fraction, lo, hi, iters=30):
    """Bisect ``b_i`` in ``[lo, hi]`` so the mean active fraction hits the target.

    Assumes the active fraction is monotone in ``b_i`` over the bracket.
    Returns the tuned value; ``cfg`` is left unchanged.
    """
    import dataclasses

    def frac(b_i):
        trial = dataclasses.replace(cfg, b_i=b_i)
        return active_counts(trial, inputs).mean() / cfg.r_E

    f_lo = frac(lo) - target_fraction
    increasing = frac(hi) - target_fraction > f_lo
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        above = frac(mid) > target_fraction
        if above == increasing:
            hi = mid
        else:
            lo = mid
    return 0.5 * (lo + hi)
