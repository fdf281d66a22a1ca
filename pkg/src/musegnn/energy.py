"""Graph-regularized energies, the proximal operator and dense minimizer oracles.

All energies share one building block, ``energy_terms``, which evaluates for a
single (sub)graph

    fit    = ||Y - fX||_F^2
    smooth = lam * tr(Y^T L Y)
    anchor = gamma * ||Y - mu||_F^2
    penalty= sum_i zeta(Y_i)         (0, or INFEASIBLE for the nonnegativity indicator)

and the public functions sum those terms over the appropriate set of graphs.
"""

import csv
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
import scipy.linalg as sla

from .graph import GraphError, laplacian_quadratic

INFEASIBLE = math.inf
PENALTIES = ("none", "nonneg")
DENSE_GUARD = 4096


@dataclass(frozen=True)
class EnergyConfig:
    """Hyperparameters of the lower-level energy and its unfolded descent.

    ``alpha=None`` selects the safe step size from :func:`musegnn.unfold.step_bound`.
    ``precondition`` rescales each node's step by ``1/((1+gamma) + lam*deg)``.
    """

    lam: float = 20.0
    gamma: float = 1.0
    alpha: Optional[float] = None
    rho: float = 0.9
    K: int = 8
    penalty: str = "nonneg"
    precondition: bool = False

    def __post_init__(self):
        if not self.lam >= 0:
            raise ValueError(f"lam must be >= 0, got {self.lam}")
        if not self.gamma >= 0:
            raise ValueError(f"gamma must be >= 0, got {self.gamma}")
        if self.alpha is not None and not self.alpha > 0:
            raise ValueError(f"alpha must be > 0, got {self.alpha}")
        if not 0.0 <= self.rho <= 1.0:
            raise ValueError(f"rho must lie in [0, 1], got {self.rho}")
        if int(self.K) != self.K or self.K < 0:
            raise ValueError(f"K must be a nonnegative integer, got {self.K}")
        if self.penalty not in PENALTIES:
            raise ValueError(f"penalty must be one of {PENALTIES}, got {self.penalty!r}")

    def replace(self, **kw):
        from dataclasses import replace
        return replace(self, **kw)


def _check(Y, n, what="Y"):
    Y = np.asarray(Y, dtype=np.float64)
    if Y.ndim != 2 or Y.shape[0] != n:
        raise GraphError(f"{what} must have {n} rows, got shape {Y.shape}")
    return Y


def _sqnorm(A):
    return float(np.einsum("ij,ij->", A, A))


def energy_terms(Y, g, fX, cfg, mu=None):
    """Per-term breakdown of the energy of one (sub)graph; see module docstring."""
    Y = _check(Y, g.n)
    fX = _check(fX, g.n, "fX")
    if fX.shape != Y.shape:
        raise GraphError(f"fX shape {fX.shape} does not match Y shape {Y.shape}")
    fit = _sqnorm(Y - fX)
    smooth = cfg.lam * laplacian_quadratic(g, Y) if cfg.lam else 0.0
    anchor = 0.0
    if mu is not None and cfg.gamma:
        mu = _check(mu, g.n, "mu")
        anchor = cfg.gamma * _sqnorm(Y - mu)
    penalty = 0.0
    if cfg.penalty == "nonneg" and Y.size and Y.min() < 0:
        penalty = INFEASIBLE
    return {"fit": fit, "smooth": smooth, "anchor": anchor, "penalty": penalty}


def total(terms):
    return math.fsum(terms.values()) if math.isfinite(terms["penalty"]) else INFEASIBLE


def full_energy(Y, g, fX, cfg):
    """``||Y - fX||^2 + lam tr(Y^T L Y) + sum_i zeta(Y_i)`` on the full graph."""
    return total(energy_terms(Y, g, fX, cfg))


def _subgraphs(bundle):
    return list(bundle.subgraphs if hasattr(bundle, "subgraphs") else bundle)


def gather(M, s):
    """Rows of the summary matrix aligned with subgraph ``s``."""
    return np.asarray(M)[s.global_ids]


def muse_energy(Ys, M, bundle, fXs, cfg):
    """Sampling-based energy summed over subgraphs, anchored to gathered rows of ``M``."""
    subs = _subgraphs(bundle)
    if not len(Ys) == len(fXs) == len(subs):
        raise GraphError("Ys, fXs and bundle must have the same number of subgraphs")
    M = np.asarray(M, dtype=np.float64)
    parts = [total(energy_terms(Y, s, fX, cfg, gather(M, s))) for Y, s, fX in zip(Ys, subs, fXs)]
    return INFEASIBLE if any(math.isinf(p) for p in parts) else math.fsum(parts)


def reformulated_energy(Ys, M, bundle, fXs, cfg):
    """The fixed-``M`` energy rewritten with target ``(fX + gamma mu)/(1+gamma)``.

    Uses ``lam' = lam/(1+gamma)`` and no anchor term.  Equal to the original
    energy up to the factor ``1+gamma`` and an additive constant.
    """
    subs = _subgraphs(bundle)
    scale = 1.0 + cfg.gamma
    inner = cfg.replace(lam=cfg.lam / scale, gamma=0.0)
    M = np.asarray(M, dtype=np.float64)
    parts = []
    for Y, s, fX in zip(Ys, subs, fXs):
        target = (np.asarray(fX) + cfg.gamma * gather(M, s)) / scale
        terms = energy_terms(Y, s, target, inner)
        # zeta' = zeta/(1+gamma); the indicator is scale invariant
        parts.append(total(terms))
    return INFEASIBLE if any(math.isinf(p) for p in parts) else math.fsum(parts)


def gamma_inf_energy(M, bundle, fXs, cfg):
    """Energy of the summary embeddings alone, every copy pinned to its row of ``M``."""
    M = np.asarray(M, dtype=np.float64)
    subs = _subgraphs(bundle)
    parts = [total(energy_terms(gather(M, s), s, fX, cfg)) for s, fX in zip(subs, fXs)]
    return INFEASIBLE if any(math.isinf(p) for p in parts) else math.fsum(parts)


def prox_zeta(U, penalty):
    if penalty == "none":
        return U
    if penalty == "nonneg":
        return np.maximum(U, 0.0)
    raise ValueError(f"unknown penalty {penalty!r}")


def system_matrix(s, cfg):
    """Dense ``(1+gamma) I + lam L_s``; verification use only."""
    if s.n > DENSE_GUARD:
        raise GraphError(f"dense oracle limited to {DENSE_GUARD} nodes, subgraph has {s.n}")
    return (1.0 + cfg.gamma) * np.eye(s.n) + cfg.lam * s.dense_laplacian()


def closed_form_minimizer(s, fX, mu, cfg):
    """Exact minimizer of one subgraph's energy for ``penalty='none'``.

    Solves ``[(1+gamma) I + lam L_s] Y = fX + gamma mu`` by Cholesky.
    """
    if cfg.penalty != "none":
        raise ValueError("closed-form minimizer requires penalty='none'")
    fX = _check(fX, s.n, "fX")
    rhs = fX if mu is None or not cfg.gamma else fX + cfg.gamma * _check(mu, s.n, "mu")
    A = system_matrix(s, cfg)
    return sla.cho_solve(sla.cho_factor(A, lower=True), rhs)


def smoothness_constants(s, cfg):
    """Largest and smallest eigenvalue of ``(1+gamma) I + lam L_s``."""
    ev = np.linalg.eigvalsh(system_matrix(s, cfg))
    return float(ev[-1]), float(ev[0])


TRACE_HEADER = ("step", "subgraph", "energy_total", "term_fit", "term_smooth", "term_anchor")


def write_energy_trace(path, traces):
    """Write ``(subgraph_index, UnfoldTrace)`` pairs as one row per layer."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TRACE_HEADER)
        for idx, tr in traces:
            for k, t in enumerate(tr.terms):
                w.writerow([k, idx, repr(total(t)), repr(t["fit"]), repr(t["smooth"]), repr(t["anchor"])])
