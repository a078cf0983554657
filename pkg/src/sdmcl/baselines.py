"""Comparison models: a plain MLP (ReLU / Top-K), importance regularizers and the FlyModel."""

from dataclasses import dataclass, field

import numpy as np

from . import numerics
from .errors import EmptyData, ShapeMismatch, StaleTrace
from .sdmlp import ForwardTrace, SdmlpModel, _mask_rows, _squeeze, kth_largest_positive

ACTIVATIONS = ("relu", "topk_mask", "topk_subtract")


class MlpBaseline:
    """One hidden layer MLP with biases: ``y = W2 f(W1^T x + b1) + b2``.

    Weights use the usual uniform(+-1/sqrt(fan_in)) initialisation. No weight
    projection is applied, so ``project`` only bumps the version counter.
    """

    kind = "mlp"

    def __init__(self, n, r, o, activation="relu", k=None, dropout=0.0, seed=0, dtype=np.float64,
                 normalize_inputs=True):
        if activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {activation!r}")
        if activation != "relu" and not k:
            raise ValueError("Top-K activations need k")
        if not 0 <= dropout < 1:
            raise ValueError("dropout must lie in [0, 1)")
        self.n, self.r, self.o = int(n), int(r), int(o)
        self.activation = activation
        self.k = k
        self.dropout = dropout
        self.normalize_inputs = normalize_inputs
        self.dtype = np.dtype(dtype)
        self.rng = numerics.make_rng(seed)
        self.epoch = 0
        self.version = 0
        lim1 = 1 / np.sqrt(n)
        lim2 = 1 / np.sqrt(r)
        u = self.rng.uniform
        self.params = {
            "W1": u(-lim1, lim1, size=(self.n, self.r)).astype(self.dtype),
            "b1": u(-lim1, lim1, size=self.r).astype(self.dtype),
            "W2": u(-lim2, lim2, size=(self.o, self.r)).astype(self.dtype),
            "b2": u(-lim2, lim2, size=self.o).astype(self.dtype),
        }

    @property
    def k_t(self):
        return self.k if self.activation != "relu" else self.r

    def touch(self):
        self.version += 1

    def project(self):
        self.touch()

    def reset_output(self):
        lim2 = 1 / np.sqrt(self.r)
        self.params["W2"][...] = self.rng.uniform(-lim2, lim2, size=(self.o, self.r))
        self.params["b2"][...] = self.rng.uniform(-lim2, lim2, size=self.o)
        self.touch()

    def preprocess(self, X):
        X = np.asarray(X, dtype=self.dtype)
        return numerics.normalize_rows(X) if self.normalize_inputs else X

    def forward(self, x, train=False, normalized=False):
        x = np.asarray(x, dtype=self.dtype)
        single = x.ndim == 1
        X = np.atleast_2d(x)
        if X.shape[1] != self.n:
            raise ShapeMismatch(f"expected inputs of dim {self.n}, got {X.shape[1]}")
        if not normalized:
            X = self.preprocess(X)
        pre = X @ self.params["W1"] + self.params["b1"]
        rows = len(pre)
        inhibition = np.zeros(rows, dtype=pre.dtype)
        jstar = np.full(rows, -1)
        if self.activation == "relu":
            post = np.maximum(pre, 0)
        elif self.activation == "topk_mask":
            post = _mask_rows(pre, self.k)
        else:
            inhibition, jstar = kth_largest_positive(pre, self.k + 1)
            post = np.maximum(pre - inhibition[:, None], 0)
        mask = None
        if train and self.dropout > 0:
            mask = (self.rng.random(post.shape) >= self.dropout) / (1 - self.dropout)
            post = post * mask
        logits = post @ self.params["W2"].T + self.params["b2"]
        trace = ForwardTrace(X, pre, inhibition, jstar, post, logits, self.k_t, None, self.version, mask)
        return _squeeze(trace) if single else trace

    def logits(self, X, normalized=False, chunk=2048):
        out = [self.forward(X[s : s + chunk], normalized=normalized).logits for s in range(0, len(X), chunk)]
        return np.concatenate(out) if out else np.zeros((0, self.o))

    def backward_terms(self, trace, dlogits):
        if trace.version != self.version:
            raise StaleTrace("model parameters changed since this forward pass")
        X = np.atleast_2d(trace.x)
        post = np.atleast_2d(trace.post)
        dY = np.atleast_2d(dlogits).astype(self.dtype, copy=False)
        dpost = dY @ self.params["W2"]
        if trace.dropout is not None:
            dpost = dpost * np.atleast_2d(trace.dropout)
        dpre = np.where(post > 0, dpost, 0)
        if self.activation == "topk_subtract":
            jstar = np.atleast_1d(-1 if trace.jstar is None else trace.jstar)
            dI = -dpre.sum(axis=1)
            rows = np.flatnonzero(jstar >= 0)
            np.add.at(dpre, (rows, jstar[rows]), dI[rows])
        return {"W1": (X, dpre), "b1": (None, dpre), "W2": (dY, post), "b2": (None, dY)}

    grads_from_terms = staticmethod(SdmlpModel.grads_from_terms)

    def backward(self, trace, target, beta=1.0):
        dY = numerics.logit_gradient(trace.logits, target, beta)
        return self.grads_from_terms(self.backward_terms(trace, dY))

    def active_mask(self, X, normalized=False):
        return self.forward(X, normalized=normalized).post > 0




def mlp_forward(model, x, train=False):
    return model.forward(x, train=train)


def mlp_backward(model, trace, target):
    return model.backward(trace, target)


# -- importance regularizers ---------------------------------------------

REG_METHODS = ("ewc", "mas", "si", "l2")


@dataclass
class ImportanceState:
    """Running importance ``omega`` and anchor ``theta*`` shared across tasks."""

    method: str
    lambda_reg: float
    beta: float = 1.0
    xi_si: float = 1e-3
    omega: dict = field(default_factory=dict)
    anchor: dict = field(default_factory=dict)
    # SI bookkeeping: path integral and parameters at the start of the task
    path: dict = field(default_factory=dict)
    task_start: dict = field(default_factory=dict)

    def __post_init__(self):
        self.method = self.method.lower()
        if self.method not in REG_METHODS:
            raise ValueError(f"unknown regularizer {self.method!r}")

    @property
    def active(self):
        return bool(self.anchor)

    def penalty(self, params):
        total = 0.0
        for name, theta in params.items():
            if name in self.anchor:
                diff = theta.astype(np.float64) - self.anchor[name]
                total += float((self.omega[name] * diff * diff).sum())
        return self.lambda_reg * total

    def add_penalty_grads(self, params, grads):
        """Add the gradient of ``lambda * sum omega (theta - theta*)^2`` to ``grads``."""
        for name, theta in params.items():
            if name in self.anchor:
                g = 2 * self.lambda_reg * self.omega[name] * (theta - self.anchor[name])
                grads[name] = grads[name] + g.astype(grads[name].dtype)
        return grads

    # SI hooks, called by the training loop around every optimizer step
    def begin_task(self, params):
        if self.method == "si":
            self.task_start = {k: v.astype(np.float64) for k, v in params.items()}
            self.path = {k: np.zeros(v.shape) for k, v in params.items()}

    def track_step(self, before, after, loss_grads):
        if self.method != "si" or not self.path:
            return
        for name in self.path:
            self.path[name] -= loss_grads[name] * (after[name] - before[name])


def regularized_loss(base_loss, params, imp):
    """``base_loss + lambda * sum_i omega_i (theta_i - theta*_i)^2``.

    No factor of one half: ``lambda`` absorbs it.
    """
    if imp is None or not imp.active:
        return base_loss
    return base_loss + imp.penalty(params)


def _per_sample_factors(model, X, y, beta, chunk=2048):
    """Yield (terms, batch size) with per-sample (unaveraged) gradient factors."""
    for start in range(0, len(X), chunk):
        Xb, yb = X[start : start + chunk], y[start : start + chunk]
        trace = model.forward(Xb, normalized=True)
        dY = numerics.logit_gradient(trace.logits, yb, beta, mean=False)
        yield model.backward_terms(trace, dY), len(yb)


def _mas_factors(model, X, chunk=2048):
    for start in range(0, len(X), chunk):
        trace = model.forward(X[start : start + chunk], normalized=True)
        dY = 2 * trace.logits.astype(np.float64)
        yield model.backward_terms(trace, dY), len(dY)


def task_importance(method, model, X, y, beta=1.0):
    """Importance of every parameter for the task given by ``(X, y)``.

    ``X`` must already be preprocessed for ``model``. EWC uses the empirical
    Fisher (squared per-sample gradients of ``-ln p_beta(y|x)``); MAS the mean
    absolute gradient of the squared L2 norm of the logits; L2 uses unit
    importance.
    """
    if len(y) == 0:
        raise EmptyData("importance estimation needs at least one sample")
    method = method.lower()
    params = model.params
    if method == "l2":
        return {k: np.ones(v.shape) for k, v in params.items()}
    if method == "ewc":
        source, transform = _per_sample_factors(model, X, y, beta), np.square
    elif method == "mas":
        source, transform = _mas_factors(model, X), np.abs
    else:
        raise ValueError(f"{method} importance is accumulated during training")
    total = {k: np.zeros(v.shape) for k, v in params.items()}
    count = 0
    for terms, size in source:
        count += size
        for name, (left, right) in terms.items():
            right = transform(right.astype(np.float64))
            if left is None:
                total[name] += right.sum(axis=0)
            else:
                # every per-sample gradient is an outer product, so its
                # elementwise square (or abs) is the outer product of squares
                total[name] += numerics.outer_sum(transform(left.astype(np.float64)), right)
    return {k: v / count for k, v in total.items()}


def estimate_importance(imp, model, X, y):
    """Fold the finished task's importance into ``imp`` and refresh the anchor."""
    params = model.params
    if imp.method == "si":
        if not imp.path:
            raise EmptyData("SI needs begin_task/track_step calls during training")
        task = {}
        for name, theta in params.items():
            moved = theta.astype(np.float64) - imp.task_start[name]
            task[name] = np.maximum(imp.path[name], 0) / (moved * moved + imp.xi_si)
    else:
        task = task_importance(imp.method, model, X, y, imp.beta)
    for name, value in task.items():
        if name in imp.omega:
            imp.omega[name] = imp.omega[name] + value
        else:
            imp.omega[name] = value
    imp.anchor = {k: v.astype(np.float64).copy() for k, v in params.items()}
    return imp


# -- FlyModel --------------------------------------------------------------


class FlyModel:
    """Mushroom-body style classifier trained with one Hebbian pass.

    A fixed binary projection (each Kenyon cell samples ``q`` inputs) feeds a
    binary top-k code; the output weights from active cells to the true label
    grow by ``lr`` per sample. ``decay`` additionally shrinks active-cell
    weights onto the other classes by ``(1 - lr)``.
    """

    kind = "flymodel"

    def __init__(self, n, o, r_kc=1000, k=None, q=32, lr=0.005, decay=False, seed=0, dtype=np.float64):
        if q > n:
            raise ValueError("projection fan-in q cannot exceed the input dimension")
        self.n, self.o, self.r = int(n), int(o), int(r_kc)
        self.k = int(k if k is not None else (64 if r_kc <= 1000 else 32))
        self.q = int(q)
        self.lr = float(lr)
        self.decay = decay
        self.dtype = np.dtype(dtype)
        self.rng = numerics.make_rng(seed)
        self.epoch = 0
        self.version = 0
        proj = np.zeros((self.r, self.n), dtype=self.dtype)
        for row in proj:
            row[self.rng.choice(self.n, size=self.q, replace=False)] = 1
        self.W_p = proj
        self.params = {"V": np.zeros((self.o, self.r), dtype=self.dtype)}

    @property
    def V(self):
        return self.params["V"]

    @property
    def k_t(self):
        return self.k

    def preprocess(self, X):
        return numerics.normalize_rows(np.asarray(X, dtype=self.dtype))

    def code(self, X):
        """Binary top-k Kenyon cell code for each (normalized) input row."""
        X = np.atleast_2d(np.asarray(X, dtype=self.dtype))
        h_raw = X @ self.W_p.T
        k = min(self.k, self.r)
        top = np.argpartition(-h_raw, k - 1, axis=1)[:, :k]
        h = np.zeros_like(h_raw)
        h[np.arange(len(h))[:, None], top] = 1
        return h

    def train(self, X, y):
        """One pass over the samples in order."""
        X = np.atleast_2d(X)
        y = np.atleast_1d(y)
        V = self.params["V"]
        for start in range(0, len(y), 1024):
            H = self.code(X[start : start + 1024])
            for h, label in zip(H, y[start : start + 1024]):
                on = h > 0
                if self.decay:
                    others = np.arange(self.o) != label
                    V[np.ix_(others, on)] *= 1 - self.lr
                V[label, on] += self.lr
        self.epoch += 1
        self.version += 1
        return self

    def logits(self, X, normalized=False, chunk=4096):
        out = [self.code(X[s : s + chunk]) @ self.params["V"].T for s in range(0, len(X), chunk)]
        return np.concatenate(out) if out else np.zeros((0, self.o))

    def predict(self, X):
        # argmax already returns the lowest index on ties
        return np.argmax(self.logits(X), axis=1)

    def active_mask(self, X, normalized=False):
        return self.code(X) > 0


def flymodel_train(fly, tasks):
    """Train on each ``(X, y)`` task in order, one epoch each."""
    for X, y in tasks:
        fly.train(X, y)
    return fly


def flymodel_predict(fly, x):
    return int(fly.predict(np.atleast_2d(x))[0])
