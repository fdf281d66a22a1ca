"""In-place optimizers over a ``name -> array`` parameter mapping."""

import numpy as np


class NonFiniteGradient(FloatingPointError):
    pass


def _check_finite(grads):
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise NonFiniteGradient(f"non-finite gradient in parameter {name}")


def inv_sqrt_schedule(eta0, t):
    """Step size ``eta0 / sqrt(t)`` for step ``t >= 1``."""
    return eta0 / np.sqrt(t)


def sgd_step(params, grads, eta_t):
    """``p <- p - eta_t * grad`` for every named array in ``params``."""
    _check_finite(grads)
    for name, p in params.items():
        if name in grads:
            p -= eta_t * grads[name]


class SGD:
    """Plain SGD; ``schedule='inv_sqrt'`` uses ``lr/sqrt(t)``."""

    kind = "sgd"

    def __init__(self, lr=0.01, schedule="inv_sqrt"):
        if schedule not in ("inv_sqrt", "constant"):
            raise ValueError(f"unknown schedule {schedule!r}")
        self.lr, self.schedule, self.t = lr, schedule, 0

    def step(self, params, grads):
        self.t += 1
        eta = inv_sqrt_schedule(self.lr, self.t) if self.schedule == "inv_sqrt" else self.lr
        sgd_step(params, grads, eta)

    def state_arrays(self):
        return {}

    def load_state(self, t, arrays):
        self.t = t


class Adam:
    """Adam with bias-corrected moments and optional L2 weight decay."""

    kind = "adam"

    def __init__(self, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8, weight_decay=0.0):
        self.lr, self.beta1, self.beta2, self.eps, self.weight_decay = lr, beta1, beta2, eps, weight_decay
        self.t = 0
        self.m, self.v = {}, {}

    def step(self, params, grads):
        _check_finite(grads)
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1 ** self.t
        c2 = 1.0 - b2 ** self.t
        for name, p in params.items():
            g = grads.get(name)
            if g is None:
                continue
            if self.weight_decay:
                g = g + self.weight_decay * p
            m = self.m.setdefault(name, np.zeros_like(p))
            v = self.v.setdefault(name, np.zeros_like(p))
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)

    def state_arrays(self):
        out = {f"m:{k}": v for k, v in self.m.items()}
        out.update({f"v:{k}": v for k, v in self.v.items()})
        return out

    def load_state(self, t, arrays):
        self.t = t
        self.m = {k[2:]: v.copy() for k, v in arrays.items() if k.startswith("m:")}
        self.v = {k[2:]: v.copy() for k, v in arrays.items() if k.startswith("v:")}


def make_optimizer(kind, lr, schedule="inv_sqrt", weight_decay=0.0):
    if kind == "adam":
        return Adam(lr=lr, weight_decay=weight_decay)
    if kind == "sgd":
        return SGD(lr=lr, schedule=schedule)
    raise ValueError(f"unknown optimizer {kind!r}")
