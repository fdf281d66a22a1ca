"""Base model f, output head g, the sampled loss and reverse-mode gradients.

Both f and g are 3-layer MLPs.  The two hidden layers apply ReLU and, when the
layer keeps its width, an additive residual skip; the last layer is affine.
Inverted dropout is applied to the input of every affine layer in train mode.
"""

from dataclasses import dataclass, field

import numpy as np

from .graph import GraphError
from .rng import stream
from .unfold import descent_operator, forward_unfold, system_apply


class MLP:
    """Three affine layers with ReLU and residual skips on the hidden layers."""

    def __init__(self, weights, biases):
        self.weights = weights
        self.biases = biases
        self.skips = [W.shape[0] == W.shape[1] for W in weights[:-1]] + [False]

    @classmethod
    def init(cls, widths, rng):
        weights, biases = [], []
        for fan_in, fan_out in zip(widths[:-1], widths[1:]):
            bound = 1.0 / np.sqrt(fan_in)
            weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
            biases.append(rng.uniform(-bound, bound, size=fan_out))
        return cls(weights, biases)

    @property
    def widths(self):
        return [self.weights[0].shape[0]] + [W.shape[1] for W in self.weights]

    def forward(self, x, dropout=0.0, rng=None):
        """Return ``(out, cache)``; dropout is active only when ``rng`` is given."""
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 2 or x.shape[1] != self.weights[0].shape[0]:
            raise GraphError(f"MLP expects {self.weights[0].shape[0]} input columns, got shape {x.shape}")
        h, cache = x, []
        last = len(self.weights) - 1
        for l, (W, b) in enumerate(zip(self.weights, self.biases)):
            keep = None
            hin = h
            if rng is not None and dropout > 0.0:
                keep = (rng.random(h.shape) >= dropout) / (1.0 - dropout)
                hin = h * keep
            z = hin @ W + b
            if l < last:
                a = np.maximum(z, 0.0)
                if self.skips[l]:
                    a = a + h
            else:
                a = z
            cache.append((h, keep, hin, z))
            h = a
        return h, cache

    def backward(self, dout, cache):
        """Return ``(grads, dx)`` where grads is a list of ``(dW, db)``."""
        grads = [None] * len(self.weights)
        dh = dout
        last = len(self.weights) - 1
        for l in range(last, -1, -1):
            h, keep, hin, z = cache[l]
            dz = dh * (z > 0) if l < last else dh
            W = self.weights[l]
            grads[l] = (hin.T @ dz, dz.sum(axis=0))
            dprev = dz @ W.T
            if keep is not None:
                dprev = dprev * keep
            if l < last and self.skips[l]:
                dprev = dprev + dh
            dh = dprev
        return grads, dh


@dataclass
class ModelParams:
    f: MLP
    g: MLP
    dropout: float = 0.2

    @classmethod
    def init(cls, d_in, hidden, n_classes, seed, dropout=0.2):
        rng = stream(seed, "init")
        f = MLP.init([d_in, hidden, hidden, hidden], rng)
        g = MLP.init([hidden, hidden, hidden, n_classes], rng)
        return cls(f, g, dropout)

    def arrays(self):
        """Ordered name -> array mapping; arrays are the live parameters."""
        out = {}
        for prefix, net in (("f", self.f), ("g", self.g)):
            for i, (W, b) in enumerate(zip(net.weights, net.biases)):
                out[f"{prefix}.W{i}"] = W
                out[f"{prefix}.b{i}"] = b
        return out

    def copy(self):
        return ModelParams(MLP([W.copy() for W in self.f.weights], [b.copy() for b in self.f.biases]),
                           MLP([W.copy() for W in self.g.weights], [b.copy() for b in self.g.biases]),
                           self.dropout)


@dataclass
class GradientBundle:
    grads: dict = field(default_factory=dict)
    loss: float = 0.0

    def add(self, other):
        for k, v in other.grads.items():
            self.grads[k] = self.grads[k] + v if k in self.grads else v.copy()
        self.loss += other.loss


def _named(prefix, layer_grads):
    out = {}
    for i, (dW, db) in enumerate(layer_grads):
        out[f"{prefix}.W{i}"] = dW
        out[f"{prefix}.b{i}"] = db
    return out


def softmax_cross_entropy(logits, labels):
    """Summed cross-entropy and its gradient with respect to the logits."""
    labels = np.asarray(labels, dtype=np.int64)
    if len(labels) and (labels.min() < 0 or labels.max() >= logits.shape[1]):
        raise GraphError(f"labels must lie in [0, {logits.shape[1]})")
    z = logits - logits.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    rows = np.arange(len(labels))
    loss = -float(logp[rows, labels].sum())
    dlogits = np.exp(logp)
    dlogits[rows, labels] -= 1.0
    return loss, dlogits


@dataclass
class SubgraphPass:
    """Everything the backward pass needs from one subgraph forward."""

    s: object
    fX: np.ndarray
    f_cache: list
    trace: object
    logits: np.ndarray
    g_cache: list


def forward_subgraph(params, X, s, state, cfg, rng=None, record_energy=False):
    """``g(unfold(f(X_s)))`` on subgraph ``s``; logits cover the target rows only.

    ``X`` is the full feature matrix; ``rng`` enables dropout.
    """
    Xs = np.asarray(X)[s.global_ids]
    fX, f_cache = params.f.forward(Xs, params.dropout, rng)
    trace = forward_unfold(s, fX, state, cfg, record_energy=record_energy)
    logits, g_cache = params.g.forward(trace.Y[:s.n_targets], params.dropout, rng)
    return SubgraphPass(s, fX, f_cache, trace, logits, g_cache)


def loss_muse(bundle, Ys_final, labels, params_g):
    """Summed cross-entropy of ``g`` over every subgraph's target rows."""
    total = 0.0
    for s, Y in zip(getattr(bundle, "subgraphs", bundle), Ys_final):
        logits, _ = params_g.forward(np.asarray(Y)[:s.n_targets])
        total += softmax_cross_entropy(logits, np.asarray(labels)[s.global_ids[:s.n_targets]])[0]
    return total


def unfold_backward(s, trace, dY, cfg):
    """Pull ``dL/dY^(K)`` back to ``dL/dfX`` through the unfolded layers.

    ``mu`` is a constant: no gradient flows into the summary state.
    """
    if cfg.penalty == "nonneg" and len(trace.masks) != cfg.K:
        raise ValueError("trace is missing ReLU masks needed for the backward pass")
    alpha = trace.alpha
    apply, pinv = descent_operator(s, cfg, alpha)
    dsrc = np.zeros_like(dY)
    for k in range(cfg.K - 1, -1, -1):
        dU = dY * trace.masks[k] if cfg.penalty == "nonneg" else dY
        dsrc += dU
        if pinv is None:
            dY = apply(dU)
        else:
            # transpose of V - alpha P A V
            dY = dU - alpha * system_apply(s, cfg, pinv * dU)
    if pinv is not None:
        dsrc = dsrc * pinv
    return dY + alpha * dsrc


def backward(passes, params, labels, cfg):
    """Exact gradient of the summed loss over ``passes`` w.r.t. every parameter."""
    out = GradientBundle()
    labels = np.asarray(labels)
    for p in passes:
        if cfg.K and cfg.penalty == "nonneg" and not p.trace.masks:
            raise ValueError("trace is missing ReLU masks needed for the backward pass")
        y = labels[p.s.global_ids[:p.s.n_targets]]
        loss, dlogits = softmax_cross_entropy(p.logits, y)
        g_grads, dYt = params.g.backward(dlogits, p.g_cache)
        dY = np.zeros_like(p.trace.Y)
        dY[:p.s.n_targets] = dYt
        dfX = unfold_backward(p.s, p.trace, dY, cfg)
        f_grads, _ = params.f.backward(dfX, p.f_cache)
        grads = _named("f", f_grads)
        grads.update(_named("g", g_grads))
        out.add(GradientBundle(grads, loss))
    return out


def predict(params, X, s, state, cfg):
    """Eval-mode logits for the target rows of ``s``."""
    return forward_subgraph(params, X, s, state, cfg).logits
