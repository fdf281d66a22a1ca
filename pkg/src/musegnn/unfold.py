"""Unfolded proximal descent per subgraph, the online summary update, and the
exact alternating minimization used to check lower-level convergence."""

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .energy import (DENSE_GUARD, energy_terms, gather, muse_energy, prox_zeta,
                     smoothness_constants, system_matrix, total, _subgraphs)
from .graph import GraphError, laplacian_apply

JOINT_GUARD = 200_000


class StepSizeError(ValueError):
    """Raised when the unfolding step size exceeds the safe bound."""


@dataclass
class SummaryState:
    """Per-node summary embeddings ``M`` and visit counters ``c``."""

    M: np.ndarray
    c: np.ndarray

    @classmethod
    def zeros(cls, n, d):
        return cls(np.zeros((n, d)), np.zeros(n, dtype=np.int64))

    def copy(self):
        return SummaryState(self.M.copy(), self.c.copy())


@dataclass
class UnfoldTrace:
    Y: np.ndarray
    alpha: float
    terms: list = field(default_factory=list)
    masks: list = field(default_factory=list)

    @property
    def energies(self):
        return np.array([total(t) for t in self.terms])


def _precond_diag(s, cfg):
    return (1.0 + cfg.gamma) + cfg.lam * s.degrees.astype(np.float64)


def step_bound(s, cfg):
    """Safe unfolding step size for subgraph ``s``.

    Plain descent: ``1/((1+gamma) + 2 lam d_max)``, a Gershgorin bound on the
    inverse operator norm.  Degree-preconditioned descent: the same argument
    applied to ``D~^{-1}[(1+gamma)I + lam L]`` gives ``1/(1 + max_i lam d_i/D~_i)``.
    """
    if cfg.precondition:
        if s.n == 0:
            return 1.0
        ratio = cfg.lam * s.degrees / _precond_diag(s, cfg)
        return 1.0 / (1.0 + float(ratio.max()))
    return 1.0 / ((1.0 + cfg.gamma) + 2.0 * cfg.lam * s.max_degree)


def spectral_step(s, cfg):
    """Exact ``1/sigma_max`` of the (preconditioned) descent operator; dense."""
    if cfg.precondition:
        A = system_matrix(s, cfg)
        d = 1.0 / np.sqrt(_precond_diag(s, cfg))
        return 1.0 / float(np.linalg.eigvalsh(d[:, None] * A * d[None, :])[-1])
    return 1.0 / smoothness_constants(s, cfg)[0]


def resolve_alpha(s, cfg, check=True):
    bound = step_bound(s, cfg)
    alpha = bound if cfg.alpha is None else float(cfg.alpha)
    if check and alpha > bound * (1 + 1e-12):
        exact = spectral_step(s, cfg) if s.n <= DENSE_GUARD else bound
        if alpha > exact * (1 + 1e-12):
            raise StepSizeError(f"alpha={alpha:g} exceeds the safe step bound {max(bound, exact):.6g} "
                                f"for a subgraph with {s.n} nodes")
    return alpha


def system_apply(s, cfg, V):
    """``[(1+gamma) I + lam L_s] V`` without forming the matrix."""
    G = (1.0 + cfg.gamma) * V
    if cfg.lam:
        G = G + cfg.lam * laplacian_apply(s, V)
    return G


def descent_operator(s, cfg, alpha):
    """Return ``apply(V) = V - alpha P [(1+gamma)I + lam L] V`` and the diagonal ``P`` (or None)."""
    pinv = 1.0 / _precond_diag(s, cfg)[:, None] if cfg.precondition else None

    def apply(V):
        G = system_apply(s, cfg, V)
        return V - alpha * (G if pinv is None else G * pinv)

    return apply, pinv


def forward_unfold(s, fX, state=None, cfg=None, *, mu=None, record_energy=True, check_step=True):
    """Run ``cfg.K`` proximal descent layers on subgraph ``s`` starting from ``fX``.

    Each layer is ``Y <- prox(Y - alpha([(1+gamma)I + lam L_s] Y - [fX + gamma mu]))``.
    ``mu`` is gathered from ``state.M`` once, before the first layer.
    """
    fX = np.asarray(fX, dtype=np.float64)
    if fX.ndim != 2 or fX.shape[0] != s.n:
        raise GraphError(f"fX must have {s.n} rows, got shape {fX.shape}")
    if mu is None:
        mu = gather(state.M, s) if state is not None else np.zeros_like(fX)
    alpha = resolve_alpha(s, cfg, check=check_step)
    apply, pinv = descent_operator(s, cfg, alpha)
    b = fX + cfg.gamma * mu if cfg.gamma else fX
    src = alpha * b if pinv is None else alpha * b * pinv
    Y = fX
    trace = UnfoldTrace(Y=Y, alpha=alpha)
    if record_energy:
        trace.terms.append(energy_terms(Y, s, fX, cfg, mu))
    for _ in range(cfg.K):
        U = apply(Y) + src
        if cfg.penalty == "nonneg":
            mask = U > 0
            Y = np.where(mask, U, 0.0)
            trace.masks.append(mask)
        else:
            Y = prox_zeta(U, cfg.penalty)
        if record_energy:
            trace.terms.append(energy_terms(Y, s, fX, cfg, mu))
    trace.Y = Y
    return trace


def online_mean_update(state, s, Y, rho):
    """Fold ``Y`` (the final embeddings of subgraph ``s``) into the running means.

    ``M_v <- rho c/(c+1) M_v + ((1-rho) c + 1)/(c+1) Y_i`` then ``c_v += 1``,
    for every local node ``i`` with global id ``v``.
    """
    Y = np.asarray(Y, dtype=np.float64)
    if Y.shape[0] != s.n:
        raise GraphError(f"Y must have {s.n} rows, got {Y.shape[0]}")
    ids = s.global_ids
    c = state.c[ids].astype(np.float64)[:, None]
    state.M[ids] = (rho * c / (c + 1.0)) * state.M[ids] + (((1.0 - rho) * c + 1.0) / (c + 1.0)) * Y
    state.c[ids] += 1


def alt_min_factors(bundle, cfg):
    """Cholesky factors of every subgraph's system matrix, for reuse across steps."""
    return [sla.cho_factor(system_matrix(s, cfg), lower=True) for s in _subgraphs(bundle)]


def alt_min_step(Ys, M, bundle, fXs, cfg, factors=None):
    """One exact alternation: minimize over all ``Y_s`` with ``M`` fixed, then over ``M``.

    The ``M`` update sets every visited node to the average of its copies;
    nodes that appear in no subgraph keep their current row.
    """
    if cfg.penalty != "none":
        raise ValueError("alternating minimization requires penalty='none'")
    subs = _subgraphs(bundle)
    if factors is None:
        factors = alt_min_factors(subs, cfg)
    M = np.asarray(M, dtype=np.float64)
    new_Ys = []
    for s, fX, fac in zip(subs, fXs, factors):
        rhs = np.asarray(fX, dtype=np.float64)
        if cfg.gamma:
            rhs = rhs + cfg.gamma * gather(M, s)
        new_Ys.append(sla.cho_solve(fac, rhs))
    return new_Ys, _average_copies(new_Ys, subs, M)


def _average_copies(Ys, subs, M):
    sums = np.zeros_like(M)
    counts = np.zeros(M.shape[0])
    for Y, s in zip(Ys, subs):
        np.add.at(sums, s.global_ids, Y)
        np.add.at(counts, s.global_ids, 1.0)
    out = M.copy()
    seen = counts > 0
    out[seen] = sums[seen] / counts[seen, None]
    return out


def joint_optimum_oracle(bundle, fXs, cfg, M=None):
    """Jointly minimize the sampling-based energy over all ``Y_s`` and ``M``.

    Assembles the stationarity system
    ``[(1+gamma)I + lam L_blk, -gamma P; -gamma P^T, gamma diag(r)] [Y; M] = [fX; 0]``
    over visited nodes and solves it with a sparse LU.  Returns ``(Ys, M, energy)``.
    """
    if cfg.penalty != "none":
        raise ValueError("joint optimum oracle requires penalty='none'")
    subs = _subgraphs(bundle)
    d = np.asarray(fXs[0]).shape[1]
    n = max((int(s.global_ids.max()) + 1 for s in subs if s.n), default=0)
    if M is not None:
        n = max(n, np.asarray(M).shape[0])
    M = np.zeros((n, d)) if M is None else np.asarray(M, dtype=np.float64).copy()
    total_rows = sum(s.n for s in subs)
    if (total_rows + n) * d > JOINT_GUARD:
        raise GraphError(f"joint oracle limited to {JOINT_GUARD} scalars, instance has {(total_rows + n) * d}")
    blocks = [(1.0 + cfg.gamma) * sp.identity(s.n) + cfg.lam * sp.csr_matrix(s.dense_laplacian())
              for s in subs]
    H = sp.block_diag(blocks, format="csr") if blocks else sp.csr_matrix((0, 0))
    rhs_y = np.vstack([np.asarray(f, dtype=np.float64) for f in fXs])
    if cfg.gamma == 0:
        Ys = [closed_form_rows(b, f) for b, f in zip(blocks, fXs)]
        M = _average_copies(Ys, subs, M)
        return Ys, M, muse_energy(Ys, M, subs, fXs, cfg)
    visited = np.unique(np.concatenate([s.global_ids for s in subs]))
    col = np.full(n, -1, dtype=np.int64)
    col[visited] = np.arange(len(visited))
    rows = np.arange(total_rows)
    cols = col[np.concatenate([s.global_ids for s in subs])]
    P = sp.csr_matrix((np.ones(total_rows), (rows, cols)), shape=(total_rows, len(visited)))
    r = np.asarray(P.sum(axis=0)).ravel()
    K = sp.bmat([[H, -cfg.gamma * P], [-cfg.gamma * P.T, sp.diags(cfg.gamma * r)]], format="csc")
    rhs = np.vstack([rhs_y, np.zeros((len(visited), d))])
    sol = spla.splu(K).solve(rhs)
    Ys, start = [], 0
    for s in subs:
        Ys.append(sol[start:start + s.n])
        start += s.n
    M[visited] = sol[total_rows:]
    return Ys, M, muse_energy(Ys, M, subs, fXs, cfg)


def closed_form_rows(block, fX):
    return spla.spsolve(sp.csc_matrix(block), np.asarray(fX, dtype=np.float64)).reshape(np.shape(fX))
