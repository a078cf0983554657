"""Single-hidden-layer MLP constrained to behave like Sparse Distributed Memory.

Neuron addresses ``Xa`` (n x r) and values ``Xv`` (o x r) map an L2-normalized
input ``x`` to logits ``y = Xv a*`` where ``a* = [Xa^T x - I]_+`` keeps roughly
the k most excited neurons. During early training ``k`` is annealed down from
``k_max`` (or each neuron is individually switched from excitation to
inhibition, the "GABA" mode) so every neuron gets a chance to reach the data
manifold before competition starts.
"""

import logging
import struct
from dataclasses import dataclass

import numpy as np

from . import numerics
from .errors import BadMagic, DimensionMismatch, EmptyData, FormatError, StaleTrace, Truncated

log = logging.getLogger(__name__)

MODES = ("anneal_subtract", "anneal_mask", "gaba", "fixed_subtract", "fixed_mask")


@dataclass
class TopKConfig:
    k_target: int = 10
    k_max: int = 1000
    # anneal span in epochs, or activations-per-neuron in GABA mode
    s: float = 10.0
    mode: str = "anneal_subtract"
    detach_inhibition: bool = False

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"unknown Top-K mode {self.mode!r}; expected one of {MODES}")
        if not 1 <= self.k_target <= self.k_max:
            raise ValueError("need 1 <= k_target <= k_max")
        if self.s <= 0:
            raise ValueError("s must be positive")

    @property
    def subtracts(self):
        return self.mode in ("anneal_subtract", "gaba", "fixed_subtract")


@dataclass
class Ablations:
    allow_negative_weights: bool = False
    disable_l2_norm: bool = False
    hidden_bias: bool = False
    output_bias: bool = False


@dataclass
class ForwardTrace:
    """Everything backward needs from one forward pass.

    Arrays carry a leading batch axis; ``inhibition`` and ``jstar`` hold one
    entry per sample, with ``jstar == -1`` where no unit set the inhibition.
    """

    x: np.ndarray
    pre: np.ndarray
    inhibition: np.ndarray
    jstar: np.ndarray
    post: np.ndarray
    logits: np.ndarray
    k: int
    lam: np.ndarray = None
    version: int = 0
    dropout: np.ndarray = None

    @property
    def active(self):
        return self.post > 0


def anneal_k(epoch, cfg):
    """Linear k schedule: ``max(k_target, floor(k_max - E(k_max - k_target)/s))``."""
    if epoch < 0:
        raise ValueError("epoch must be nonnegative")
    k = int(np.floor(cfg.k_max - epoch * (cfg.k_max - cfg.k_target) / cfg.s))
    return max(cfg.k_target, min(cfg.k_max, k))


def kth_largest_positive(a, k):
    """Per-row value and index of the k-th largest entry of ReLU(a) (1-based k).

    Rows with fewer than ``k`` strictly positive entries get value 0 and
    index -1.
    """
    a = np.atleast_2d(a)
    rows, width = a.shape
    if k > width:
        return np.zeros(rows, dtype=a.dtype), np.full(rows, -1)
    relu = np.maximum(a, 0)
    idx = np.argpartition(-relu, k - 1, axis=1)[:, k - 1]
    val = relu[np.arange(rows), idx]
    idx = np.where(val > 0, idx, -1)
    return val, idx


def topk_subtract(a, k, detach=False):
    """Subtract the (k+1)-th largest positive activation and rectify.

    Returns ``(a*, I, j*, A)`` for a single activation vector: the inhibited
    activations, the inhibition value, the index of the unit that set it
    (``None`` when ``I == 0``) and the sorted active index set. ``detach`` only
    matters for gradients and is accepted for signature symmetry.
    """
    a = np.asarray(a, dtype=float)
    val, idx = kth_largest_positive(a[None, :], k + 1)
    inhibition = float(val[0])
    post = np.maximum(a - inhibition, 0)
    jstar = int(idx[0]) if idx[0] >= 0 else None
    return post, inhibition, jstar, np.flatnonzero(post > 0)


def _mask_rows(a, k):
    relu = np.maximum(a, 0)
    rows, width = relu.shape
    if k >= width:
        return relu
    keep = np.argpartition(-relu, k - 1, axis=1)[:, :k]
    out = np.zeros_like(relu)
    r = np.arange(rows)[:, None]
    out[r, keep] = relu[r, keep]
    return out


def topk_mask(a, k):
    """Keep the k largest positive entries untouched and zero the rest."""
    return _mask_rows(np.atleast_2d(np.asarray(a, dtype=float)), k)[0]


def gaba_lambda(counters, s):
    """Per-neuron inhibition sign: -1 (excited) rising linearly to +1 after ``s`` activations."""
    return np.clip(-1.0 + 2.0 * np.asarray(counters, dtype=float) / s, -1.0, 1.0)


def gaba_forward(a, cfg, counters):
    """GABA-switch inhibition for one sample; returns ``(a*, updated counters)``."""
    a = np.asarray(a, dtype=float)
    lam = gaba_lambda(counters, cfg.s)
    val, _ = kth_largest_positive(a[None, :], cfg.k_target + 1)
    post = np.maximum(a - lam * val[0], 0)
    return post, np.asarray(counters) + (post > 0)


class SdmlpModel:
    """The SDMLP: no biases, nonnegative weights and unit-norm neuron addresses.

    Parameters live in :attr:`params` (``Xa``, ``Xv`` and optionally ``ba``,
    ``bv`` when the bias ablations are on) and are updated in place.
    """

    kind = "sdmlp"

    def __init__(self, n, r, o, topk=None, ablations=None, seed=0, dtype=np.float64):
        self.n, self.r, self.o = int(n), int(r), int(o)
        self.topk = topk or TopKConfig(k_target=min(10, r), k_max=r)
        if self.topk.k_max > self.r:
            raise ValueError("k_max cannot exceed the number of neurons")
        self.ablations = ablations or Ablations()
        self.dtype = np.dtype(dtype)
        self.rng = numerics.make_rng(seed)
        self.epoch = 0
        self.counters = np.zeros(self.r, dtype=np.int64)
        self.version = 0
        self.dead_column_resets = 0
        self.params = {
            "Xa": self._init_addresses(self.n, self.r),
            "Xv": self._init_values(),
        }
        if self.ablations.hidden_bias:
            self.params["ba"] = np.zeros(self.r, dtype=self.dtype)
        if self.ablations.output_bias:
            self.params["bv"] = np.zeros(self.o, dtype=self.dtype)

    # -- initialisation -------------------------------------------------

    def _init_addresses(self, n, count):
        X = self.rng.uniform(0.0, 1.0, size=(n, count))
        return numerics.normalize_columns(X).astype(self.dtype)

    def _init_values(self):
        return self.rng.uniform(0.0, 0.01, size=(self.o, self.r)).astype(self.dtype)

    def reset_output(self):
        """Fresh output weights, used at the pretraining -> continual boundary."""
        self.params["Xv"][...] = self._init_values()
        if "bv" in self.params:
            self.params["bv"][...] = 0
        self.touch()

    @property
    def Xa(self):
        return self.params["Xa"]

    @property
    def Xv(self):
        return self.params["Xv"]

    def touch(self):
        self.version += 1

    # -- forward ----------------------------------------------------------

    @property
    def k_t(self):
        mode = self.topk.mode
        if mode in ("fixed_subtract", "fixed_mask", "gaba"):
            return self.topk.k_target
        return anneal_k(self.epoch, self.topk)

    def preprocess(self, X):
        """Inputs as the model consumes them: row-normalized unless ablated."""
        X = np.asarray(X, dtype=self.dtype)
        if self.ablations.disable_l2_norm:
            return X
        return numerics.normalize_rows(X)

    def forward(self, x, train=False, normalized=False):
        """Run one input (n,) or a batch (B, n) through the model.

        ``train`` advances the GABA counters; ``normalized`` skips the input
        normalization for data that is already unit-norm.
        """
        x = np.asarray(x, dtype=self.dtype)
        single = x.ndim == 1
        X = np.atleast_2d(x)
        if X.shape[1] != self.n:
            raise DimensionMismatch(f"expected inputs of dim {self.n}, got {X.shape[1]}")
        if not normalized:
            X = self.preprocess(X)
        pre = X @ self.params["Xa"]
        if "ba" in self.params:
            pre = pre + self.params["ba"]
        post, inhibition, jstar, lam, k = self._inhibit(pre)
        if train and self.topk.mode == "gaba":
            self.counters += np.count_nonzero(post > 0, axis=0)
        logits = post @ self.params["Xv"].T
        if "bv" in self.params:
            logits = logits + self.params["bv"]
        trace = ForwardTrace(X, pre, inhibition, jstar, post, logits, k, lam, self.version)
        return _squeeze(trace) if single else trace

    def _inhibit(self, pre):
        mode = self.topk.mode
        if mode == "gaba":
            k = self.topk.k_target
            inhibition, jstar = kth_largest_positive(pre, k + 1)
            lam = gaba_lambda(self.counters, self.topk.s).astype(self.dtype)
            post = np.maximum(pre - inhibition[:, None] * lam, 0)
            return post, inhibition, jstar, lam, k
        k = self.k_t
        if mode in ("anneal_mask", "fixed_mask"):
            post = _mask_rows(pre, k)
            zeros = np.zeros(len(pre), dtype=pre.dtype)
            return post, zeros, np.full(len(pre), -1), None, k
        inhibition, jstar = kth_largest_positive(pre, k + 1)
        post = np.maximum(pre - inhibition[:, None], 0)
        return post, inhibition, jstar, None, k

    def logits(self, X, normalized=False, chunk=2048):
        out = []
        for start in range(0, len(X), chunk):
            out.append(self.forward(X[start : start + chunk], normalized=normalized).logits)
        return np.concatenate(out) if out else np.zeros((0, self.o))

    # -- backward ---------------------------------------------------------

    def backward_terms(self, trace, dlogits):
        """Per-sample gradient factors for an upstream gradient on the logits.

        Returns ``{name: (left, right)}`` such that the gradient of parameter
        ``name`` for sample b is ``outer(left[b], right[b])``; bias entries use
        ``left=None`` and ``right[b]`` as the per-sample gradient.
        """
        if trace.version != self.version:
            raise StaleTrace("model parameters changed since this forward pass")
        X = np.atleast_2d(trace.x)
        post = np.atleast_2d(trace.post)
        dY = np.atleast_2d(dlogits).astype(self.dtype, copy=False)
        active = post > 0
        dpost = dY @ self.params["Xv"]
        dpre = np.where(active, dpost, 0)
        jstar = np.atleast_1d(-1 if trace.jstar is None else trace.jstar)
        if self.topk.subtracts and not self.topk.detach_inhibition:
            lam = 1.0 if trace.lam is None else trace.lam
            # a*_i = [a_i - lam_i I]_+ with I read off unit j*: dI = -sum lam_i da*_i
            dI = -(dpre * lam).sum(axis=1)
            rows = np.flatnonzero(jstar >= 0)
            np.add.at(dpre, (rows, jstar[rows]), dI[rows])
        terms = {"Xa": (X, dpre), "Xv": (dY, post)}
        if "ba" in self.params:
            terms["ba"] = (None, dpre)
        if "bv" in self.params:
            terms["bv"] = (None, dY)
        return terms

    @staticmethod
    def grads_from_terms(terms):
        grads = {}
        for name, (left, right) in terms.items():
            grads[name] = right.sum(axis=0) if left is None else numerics.outer_sum(left, right)
        return grads

    def backward(self, trace, target, beta=1.0):
        """Mean cross-entropy gradients for the batch in ``trace``."""
        dY = numerics.logit_gradient(trace.logits, target, beta)
        return self.grads_from_terms(self.backward_terms(trace, dY))

    # -- constraints -----------------------------------------------------

    def project(self):
        """Clamp weights nonnegative and renormalize address columns."""
        Xa, Xv = self.params["Xa"], self.params["Xv"]
        if not self.ablations.allow_negative_weights:
            np.maximum(Xa, 0, out=Xa)
            np.maximum(Xv, 0, out=Xv)
        if not self.ablations.disable_l2_norm:
            # float64 norms keep float32 columns within ~1e-7 of unit length
            wide = Xa.astype(np.float64)
            norms = np.linalg.norm(wide, axis=0)
            dead = norms < numerics.ZERO_NORM
            if np.any(dead):
                cols = np.flatnonzero(dead)
                Xa[:, cols] = self._init_addresses(self.n, len(cols))
                norms[cols] = 1.0
                self.dead_column_resets += len(cols)
                log.warning("re-randomized %d all-zero address columns", len(cols))
                wide[:, cols] = Xa[:, cols]
            Xa[...] = wide / norms
        self.touch()

    def active_mask(self, X, normalized=False):
        return self.forward(X, normalized=normalized).post > 0

    def state_dict(self):
        return {"epoch": self.epoch, "counters": self.counters.copy()}


def _squeeze(trace):
    return ForwardTrace(
        trace.x[0],
        trace.pre[0],
        float(trace.inhibition[0]),
        int(trace.jstar[0]) if trace.jstar[0] >= 0 else None,
        trace.post[0],
        trace.logits[0],
        trace.k,
        trace.lam,
        trace.version,
        trace.dropout,
    )


@dataclass
class EpochStats:
    loss: float
    accuracy: float
    steps: int


def _arrays(data):
    if hasattr(data, "features"):
        return data.features, data.labels
    return data


def train_epoch(model, data, opt_cfg, opt_state, batch_size=128, rng=None, regularizer=None,
                class_counts=None, normalized=False):
    """One shuffled pass of minibatch training; works for any model in the package.

    ``regularizer`` is an importance state whose penalty gradient is added to
    every step. ``class_counts`` (r x classes) accumulates how often each
    neuron was active for each class. The model's epoch counter advances.
    """
    from . import optimizers

    X, y = _arrays(data)
    if len(y) == 0:
        raise EmptyData("cannot train on an empty dataset")
    if not normalized:
        X = model.preprocess(X)
    rng = rng if rng is not None else model.rng
    order = rng.permutation(len(y))
    total_loss = 0.0
    correct = 0
    steps = 0
    track_si = regularizer is not None and regularizer.method == "si"
    for start in range(0, len(y), batch_size):
        idx = order[start : start + batch_size]
        xb, yb = X[idx], y[idx]
        trace = model.forward(xb, train=True, normalized=True)
        grads = model.backward(trace, yb)
        probs = numerics.softmax(trace.logits.astype(np.float64))
        total_loss += numerics.batch_cross_entropy(probs, yb) * len(yb)
        correct += int(np.count_nonzero(probs.argmax(axis=1) == yb))
        if class_counts is not None:
            np.add.at(class_counts.T, yb, (trace.post > 0).astype(class_counts.dtype))
        if track_si:
            loss_grads = {k: g.astype(np.float64) for k, g in grads.items()}
            before = {k: v.astype(np.float64) for k, v in model.params.items()}
        if regularizer is not None and regularizer.active:
            regularizer.add_penalty_grads(model.params, grads)
        optimizers.step(opt_cfg, opt_state, model.params, grads)
        model.project()
        if track_si:
            regularizer.track_step(before, model.params, loss_grads)
        steps += 1
    model.epoch += 1
    return EpochStats(total_loss / len(y), correct / len(y), steps)


def evaluate(model, data, normalized=False):
    """Accuracy of ``model`` on ``data``."""
    X, y = _arrays(data)
    if len(y) == 0:
        raise EmptyData("cannot evaluate on an empty dataset")
    if not normalized:
        X = model.preprocess(X)
    return float(np.mean(model.logits(X, normalized=True).argmax(axis=1) == y))


def forward(model, x, train=False):
    return model.forward(x, train=train)


def backward(model, trace, target):
    return model.backward(trace, target)


def project_weights(model):
    model.project()
    return model


# -- checkpoint format -----------------------------------------------------

MAGIC = b"SDMLP1\n"
_HEADER = struct.Struct("<8I d")
_FLAG_BITS = ("allow_negative_weights", "disable_l2_norm", "hidden_bias", "output_bias")
_DETACH_BIT = 1 << 4


def save_checkpoint(model, path):
    """Write ``model`` in the little-endian SDMLP1 layout (see docs/formats.md)."""
    flags = sum(1 << i for i, name in enumerate(_FLAG_BITS) if getattr(model.ablations, name))
    if model.topk.detach_inhibition:
        flags |= _DETACH_BIT
    header = _HEADER.pack(
        model.n,
        model.r,
        model.o,
        MODES.index(model.topk.mode),
        model.topk.k_target,
        model.topk.k_max,
        model.epoch,
        flags,
        float(model.topk.s),
    )
    parts = [MAGIC, header]
    parts.append(np.ascontiguousarray(model.params["Xa"], dtype="<f8").tobytes())
    parts.append(np.ascontiguousarray(model.params["Xv"], dtype="<f8").tobytes())
    parts.append(np.ascontiguousarray(model.counters, dtype="<u8").tobytes())
    for name in ("ba", "bv"):
        if name in model.params:
            parts.append(np.ascontiguousarray(model.params[name], dtype="<f8").tobytes())
    with open(path, "wb") as fh:
        fh.write(b"".join(parts))


def load_checkpoint(path, dtype=np.float64, seed=0):
    with open(path, "rb") as fh:
        blob = fh.read()
    if not blob.startswith(MAGIC):
        raise BadMagic("not an SDMLP1 checkpoint")
    offset = len(MAGIC)
    if len(blob) < offset + _HEADER.size:
        raise Truncated("checkpoint header is truncated")
    n, r, o, mode, k_target, k_max, epoch, flags, s = _HEADER.unpack_from(blob, offset)
    offset += _HEADER.size
    if mode >= len(MODES):
        raise FormatError(f"unknown mode tag {mode}")
    ablations = Ablations(**{name: bool(flags & (1 << i)) for i, name in enumerate(_FLAG_BITS)})
    topk = TopKConfig(k_target, k_max, s, MODES[mode], bool(flags & _DETACH_BIT))
    model = SdmlpModel(n, r, o, topk, ablations, seed=seed, dtype=dtype)

    def take(count, fmt):
        nonlocal offset
        size = count * 8
        if len(blob) < offset + size:
            raise Truncated("checkpoint arrays are truncated")
        arr = np.frombuffer(blob, dtype=fmt, count=count, offset=offset)
        offset += size
        return arr

    model.params["Xa"][...] = take(n * r, "<f8").reshape(n, r)
    model.params["Xv"][...] = take(o * r, "<f8").reshape(o, r)
    model.counters[...] = take(r, "<u8")
    if ablations.hidden_bias:
        model.params["ba"][...] = take(r, "<f8")
    if ablations.output_bias:
        model.params["bv"][...] = take(o, "<f8")
    if offset != len(blob):
        raise FormatError("trailing bytes after checkpoint payload")
    model.epoch = epoch
    return model
