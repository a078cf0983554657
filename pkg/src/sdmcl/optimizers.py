"""Hand-written SGD, SGDM, Adam and RMSProp plus the stale-momentum probe.

Every optimizer reports its update direction ``delta`` so that
``theta <- theta - lr * delta``. Buffers keep moving even for parameters whose
gradient is zero; that is exactly the behaviour the probe exposes. Setting
``sparse_mode`` skips both the buffer and parameter update wherever the
gradient is exactly zero (lazy updates, experimental).
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import ShapeMismatch

KINDS = ("sgd", "sgdm", "adam", "rmsprop")


@dataclass
class OptimizerConfig:
    kind: str = "sgd"
    lr: float = 0.1
    gamma: float = 0.9
    beta1: float = 0.9
    beta2: float = 0.999
    alpha: float = 0.99
    eps: float = 1e-8
    sparse_mode: bool = False
    # textbook 1 - beta**t bias correction instead of the constant form
    standard_adam: bool = False

    def __post_init__(self):
        self.kind = self.kind.lower()
        if self.kind not in KINDS:
            raise ValueError(f"unknown optimizer {self.kind!r}; expected one of {KINDS}")
        # zero is allowed: buffers still advance while parameters stay put
        if not self.lr >= 0:
            raise ValueError("learning rate must be nonnegative")
        for name in ("gamma", "beta1", "beta2", "alpha"):
            value = getattr(self, name)
            if not 0 < value < 1:
                raise ValueError(f"{name} must lie in (0, 1), got {value}")


@dataclass
class OptimizerState:
    t: int = 0
    # per-parameter buffers: "b" for SGDM, "m"/"v" for Adam, "v" for RMSProp
    buffers: dict = field(default_factory=dict)

    def buffer(self, slot, name, like):
        per_param = self.buffers.setdefault(slot, {})
        if name not in per_param:
            per_param[name] = np.zeros_like(like)
        return per_param[name]


def _delta(cfg, state, name, grad, t):
    """Update buffers for one parameter and return its delta."""
    if cfg.kind == "sgd":
        return grad
    if cfg.kind == "sgdm":
        b = state.buffer("b", name, grad)
        b *= cfg.gamma
        b += grad
        return b.copy()
    if cfg.kind == "adam":
        m = state.buffer("m", name, grad)
        v = state.buffer("v", name, grad)
        m *= cfg.beta1
        m += (1 - cfg.beta1) * grad
        v *= cfg.beta2
        v += (1 - cfg.beta2) * grad * grad
        if cfg.standard_adam:
            m_hat = m / (1 - cfg.beta1**t)
            v_hat = v / (1 - cfg.beta2**t)
        else:
            m_hat = m / (1 - cfg.beta1)
            v_hat = v / (1 - cfg.beta2)
        return m_hat / (np.sqrt(v_hat) + cfg.eps)
    # rmsprop
    v = state.buffer("v", name, grad)
    v *= cfg.alpha
    v += (1 - cfg.alpha) * grad * grad
    return grad / (np.sqrt(v) + cfg.eps)


def _sparse_delta(cfg, state, name, grad, t):
    live = grad != 0
    delta = np.zeros_like(grad)
    if cfg.kind == "sgd":
        return grad
    slots = {"sgdm": ("b",), "adam": ("m", "v"), "rmsprop": ("v",)}[cfg.kind]
    bufs = [state.buffer(slot, name, grad) for slot in slots]
    # run the dense rule on the live entries only, then write buffers back
    sub = OptimizerState(t=t, buffers={slot: {name: buf[live]} for slot, buf in zip(slots, bufs)})
    delta[live] = _delta(cfg, sub, name, grad[live], t)
    for slot, buf in zip(slots, bufs):
        buf[live] = sub.buffers[slot][name]
    return delta


def compute_deltas(cfg, state, grads):
    """Advance the state by one step and return the per-parameter deltas."""
    state.t += 1
    rule = _sparse_delta if cfg.sparse_mode else _delta
    return {name: rule(cfg, state, name, g, state.t) for name, g in grads.items()}


def step(cfg, state, params, grads):
    """Apply one optimizer step in place and return ``(params, state)``."""
    for name, g in grads.items():
        if name not in params:
            raise ShapeMismatch(f"gradient for unknown parameter {name!r}")
        if params[name].shape != g.shape:
            raise ShapeMismatch(f"{name}: parameter {params[name].shape} vs gradient {g.shape}")
    deltas = compute_deltas(cfg, state, grads)
    if cfg.lr != 0:
        for name, d in deltas.items():
            params[name] -= (cfg.lr * d).astype(params[name].dtype, copy=False)
    return params, state


@dataclass
class InjectionSchedule:
    injections: list  # (step index, gradient value) pairs
    total_steps: int

    def __post_init__(self):
        self.injections = [(int(s), float(g)) for s, g in self.injections]
        steps = [s for s, _ in self.injections]
        if any(b <= a for a, b in zip(steps, steps[1:])):
            raise ValueError("injection steps must be strictly increasing")
        if steps and (steps[0] < 0 or steps[-1] >= self.total_steps):
            raise ValueError("injection steps must lie in [0, total_steps)")

    def gradients(self):
        g = np.zeros(self.total_steps)
        for s, value in self.injections:
            g[s] = value
        return g

    @classmethod
    def from_dict(cls, doc):
        return cls(injections=[tuple(p) for p in doc["injections"]], total_steps=doc["total_steps"])


def sparse_injection_schedule(grad=0.2, total_steps=200):
    """Two injections, then four, then one and one, separated by quiet gaps."""
    steps = [0, 1, 50, 51, 52, 53, 110, 160]
    return InjectionSchedule([(s, grad) for s in steps], total_steps)


def stale_momentum_probe(cfg, schedule):
    """Drive a single scalar weight through ``schedule`` and record each delta.

    Returns a list of dicts with keys ``step``, ``grad``, ``delta``, ``m`` and
    ``v``. ``m`` is the first-moment/momentum buffer (0 for SGD and RMSProp)
    and ``v`` the second-moment buffer (0 for SGD and SGDM).
    """
    state = OptimizerState()
    name = "w"
    trace = []
    for i, g in enumerate(schedule.gradients()):
        d = compute_deltas(cfg, state, {name: np.array([g])})[name]
        bufs = {slot: float(state.buffers.get(slot, {}).get(name, [0.0])[0]) for slot in ("b", "m", "v")}
        trace.append(
            {
                "step": i,
                "grad": float(g),
                "delta": float(d[0]),
                "m": bufs["b"] if cfg.kind == "sgdm" else bufs["m"],
                "v": bufs["v"],
            }
        )
    return trace
