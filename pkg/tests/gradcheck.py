"""Central finite-difference oracle for the models' analytic gradients."""

import numpy as np

from sdmcl import numerics


def mean_loss(model, X, y, frozen=None):
    if frozen is None:
        logits = model.forward(X, normalized=True).logits
    else:
        logits = _logits_with_fixed_inhibition(model, X, *frozen)
    return numerics.batch_cross_entropy(numerics.softmax(logits), y)


def _logits_with_fixed_inhibition(model, X, inhibition, lam, jstar, was_active):
    """SDMLP logits with the subtracted value held constant (detached oracle).

    The unit that set the inhibition sits exactly on the ReLU kink; it is held
    inactive, as it is in the forward pass.
    """
    pre = X @ model.params["Xa"]
    if "ba" in model.params:
        pre = pre + model.params["ba"]
    post = np.maximum(pre - inhibition[:, None] * (1.0 if lam is None else lam), 0)
    rows = np.flatnonzero(jstar >= 0)
    rows = rows[~was_active[rows, jstar[rows]]]
    post[rows, jstar[rows]] = 0
    logits = post @ model.params["Xv"].T
    if "bv" in model.params:
        logits = logits + model.params["bv"]
    return logits


def numeric_grads(model, X, y, h=1e-6, frozen=None):
    out = {}
    for name, theta in model.params.items():
        g = np.zeros_like(theta)
        for idx in np.ndindex(theta.shape):
            keep = theta[idx]
            theta[idx] = keep + h
            up = mean_loss(model, X, y, frozen)
            theta[idx] = keep - h
            down = mean_loss(model, X, y, frozen)
            theta[idx] = keep
            g[idx] = (up - down) / (2 * h)
        out[name] = g
    return out


def max_relative_error(analytic, numeric, floor=1e-6):
    worst = 0.0
    for name in analytic:
        a, n = analytic[name], numeric[name]
        denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
        worst = max(worst, float(np.max(np.abs(a - n) / denom)))
    return worst


def check(model, X, y, h=1e-6):
    """Max relative error of ``model.backward`` against central differences.

    With detached inhibition the oracle differentiates the loss with the
    subtracted value frozen at its forward-pass value.
    """
    trace = model.forward(X, normalized=True)
    analytic = model.backward(trace, y)
    frozen = None
    topk = getattr(model, "topk", None)
    if topk is not None and topk.detach_inhibition and topk.subtracts:
        frozen = (trace.inhibition.copy(), trace.lam, trace.jstar.copy(), trace.post > 0)
    return max_relative_error(analytic, numeric_grads(model, X, y, h, frozen))
