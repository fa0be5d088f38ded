"""Cross-graph optimal transport: node (Wasserstein) and adjacency-restricted
edge (Gromov-Wasserstein) costs solved with log-domain Sinkhorn."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, NumericalError, ShapeError
from .tsv import write_matrix


@dataclass(frozen=True)
class TransportPlan:
    values: np.ndarray  # (k, n)
    mu: np.ndarray
    nu: np.ndarray
    iterations: int = 0
    residual: float = 0.0

    @property
    def shape(self):
        return self.values.shape


@dataclass(frozen=True)
class AlignmentResult:
    plan: TransportPlan
    wd_cost: float
    gwd_cost: float
    loss_graph: float
    iterations_run: int
    alpha: float
    node_cost: np.ndarray = field(repr=False)
    fused_cost: np.ndarray = field(repr=False)


def cosine_cost(A, B, names=("left", "right")) -> np.ndarray:
    """``1 - cos(a_i, b_j)`` for every row pair, clipped to [0, 2]."""
    A = np.asarray(A, dtype=np.float64)
    B = np.asarray(B, dtype=np.float64)
    if A.ndim != 2 or B.ndim != 2 or A.shape[1] != B.shape[1]:
        raise ShapeError(f"cosine_cost needs matrices of equal width, got {A.shape} and {B.shape}")
    na = np.linalg.norm(A, axis=1)
    nb = np.linalg.norm(B, axis=1)
    for label, norms in zip(names, (na, nb)):
        bad = np.flatnonzero(norms == 0)
        if bad.size:
            raise NumericalError(f"zero-norm row {int(bad[0])} in {label} input; cosine undefined")
    sim = (A / na[:, None]) @ (B / nb[:, None]).T
    return np.clip(1.0 - sim, 0.0, 2.0)


def _logsumexp(x: np.ndarray, axis: int) -> np.ndarray:
    m = x.max(axis=axis, keepdims=True)
    return (m + np.log(np.exp(x - m).sum(axis=axis, keepdims=True))).squeeze(axis)


def uniform(m: int) -> np.ndarray:
    return np.full(m, 1.0 / m)


def _check_marginal(w, name, size):
    w = np.asarray(w, dtype=np.float64)
    if w.shape != (size,):
        raise ShapeError(f"{name} has shape {w.shape}, expected ({size},)")
    if np.any(w <= 0) or not np.all(np.isfinite(w)):
        raise ConfigError(f"{name} must be strictly positive")
    if abs(w.sum() - 1.0) > 1e-9:
        raise ConfigError(f"{name} must sum to 1 (got {w.sum():.12g})")
    return w


def entropic_objective(P: np.ndarray, C: np.ndarray, epsilon: float) -> float:
    """``<P, C> - epsilon * H(P)`` with ``H(P) = -sum P (log P - 1)``."""
    with np.errstate(divide="ignore", invalid="ignore"):
        plogp = np.where(P > 0, P * np.log(P), 0.0)
    return float(np.sum(P * C) + epsilon * np.sum(plogp - P))


def dual_objective(f, g, C, mu, nu, epsilon: float) -> float:
    """Dual value of the entropic problem; equals the primal optimum at convergence."""
    return float(f @ mu + g @ nu - epsilon * np.exp((f[:, None] + g[None, :] - C) / epsilon).sum())


def sinkhorn(C, mu, nu, epsilon: float = 0.1, iters: int = 20, tol: float | None = None,
             history: list | None = None) -> TransportPlan:
    """Entropy-regularised OT plan via alternating scaling of the dual potentials.

    Runs exactly ``iters`` row/column updates unless ``tol`` is given, in which
    case it stops as soon as the marginal residual drops to ``tol``. If
    ``history`` is a list, the dual objective after every column update is
    appended to it; each update is an exact block maximisation, so the
    sequence never decreases.
    """
    C = np.asarray(C, dtype=np.float64)
    if C.ndim != 2:
        raise ShapeError(f"cost must be a matrix, got shape {C.shape}")
    k, n = C.shape
    if not epsilon > 0:
        raise ConfigError(f"epsilon must be > 0 (got {epsilon})")
    if iters < 1:
        raise ConfigError(f"iters must be >= 1 (got {iters})")
    mu = _check_marginal(mu, "mu", k)
    nu = _check_marginal(nu, "nu", n)
    if not np.all(np.isfinite(C)):
        raise NumericalError("non-finite entries in cost matrix")

    log_mu, log_nu = np.log(mu), np.log(nu)
    f = np.zeros(k)
    g = np.zeros(n)
    t = 0
    residual = np.inf
    P = None
    for t in range(1, iters + 1):
        f = epsilon * (log_mu - _logsumexp((g[None, :] - C) / epsilon, axis=1))
        g = epsilon * (log_nu - _logsumexp((f[:, None] - C) / epsilon, axis=0))
        if tol is not None or history is not None or t == iters:
            P = np.exp((f[:, None] + g[None, :] - C) / epsilon)
            residual = max(np.abs(P.sum(axis=1) - mu).max(), np.abs(P.sum(axis=0) - nu).max())
            if history is not None:
                history.append(dual_objective(f, g, C, mu, nu, epsilon))
            if tol is not None and residual <= tol:
                break
    if not np.all(np.isfinite(P)):
        raise NumericalError("sinkhorn produced non-finite plan entries")
    return TransportPlan(P, mu, nu, iterations=t, residual=float(residual))


def edge_cost_tensor(C_I, C_T, A_I, A_T) -> np.ndarray:
    """``L[i, i', j, j'] = |C_I[i, i'] - C_T[j, j']|`` on adjacent pairs, else 0."""
    C_I = np.asarray(C_I, dtype=np.float64)
    C_T = np.asarray(C_T, dtype=np.float64)
    A_I = np.asarray(A_I, dtype=np.float64)
    A_T = np.asarray(A_T, dtype=np.float64)
    k, n = C_I.shape[0], C_T.shape[0]
    if C_I.shape != (k, k) or A_I.shape != (k, k):
        raise ShapeError(f"visual intra-cost/adjacency must be ({k}, {k})")
    if C_T.shape != (n, n) or A_T.shape != (n, n):
        raise ShapeError(f"textual intra-cost/adjacency must be ({n}, {n})")
    L = np.abs(C_I[:, :, None, None] - C_T[None, None, :, :])
    L *= A_I[:, :, None, None]
    L *= A_T[None, None, :, :]
    return L


def _plan_values(plan) -> np.ndarray:
    return plan.values if isinstance(plan, TransportPlan) else np.asarray(plan, dtype=np.float64)


def _pseudo_from_tensor(L: np.ndarray, P: np.ndarray) -> np.ndarray:
    k, _, n, _ = L.shape
    if P.shape != (k, n):
        raise ShapeError(f"plan shape {P.shape} != ({k}, {n})")
    # sum over i', j' of L[i, i', j, j'] * P[i', j']
    return np.einsum("abcd,bd->ac", L, P, optimize=True)


def gw_pseudo_cost(plan, C_I, C_T, A_I, A_T) -> np.ndarray:
    """Edge-matching cost of each (object, token) pair given a current plan."""
    return _pseudo_from_tensor(edge_cost_tensor(C_I, C_T, A_I, A_T), _plan_values(plan))


def gw_objective(plan, C_I, C_T, A_I, A_T) -> float:
    P = _plan_values(plan)
    return float(np.sum(P * gw_pseudo_cost(P, C_I, C_T, A_I, A_T)))


def fused_align(H_I, H_T, A_I, A_T, alpha: float = 0.4, epsilon: float = 0.1,
                outer_iters: int = 5, inner_iters: int = 20,
                init: str = "node") -> AlignmentResult:
    """Align object nodes to token nodes using node and edge costs jointly.

    Each outer round rebuilds ``alpha * C_node + (1 - alpha) * C_gw(plan)``
    from the previous plan and re-solves Sinkhorn from scratch.

    ``init="node"`` seeds the first edge cost with the Sinkhorn plan of the
    node cost alone; ``init="product"`` uses ``outer(mu, nu)``, which is a
    stationary point of the edge term whenever the graphs are symmetric
    (e.g. any pair of two-node graphs), so ``alpha=0`` can stall there.
    """
    if not 0.0 <= alpha <= 1.0:
        raise ConfigError(f"alpha must lie in [0, 1] (got {alpha})")
    if outer_iters < 1:
        raise ConfigError(f"outer_iters must be >= 1 (got {outer_iters})")
    C_node = cosine_cost(H_I, H_T, names=("H_I", "H_T"))
    C_I = cosine_cost(H_I, H_I, names=("H_I", "H_I"))
    C_T = cosine_cost(H_T, H_T, names=("H_T", "H_T"))
    L = edge_cost_tensor(C_I, C_T, A_I, A_T)
    k, n = C_node.shape
    mu, nu = uniform(k), uniform(n)

    if init == "product":
        P = np.outer(mu, nu)
    elif init == "node":
        P = sinkhorn(C_node, mu, nu, epsilon, inner_iters).values
    else:
        raise ConfigError(f"unknown init {init!r}; expected 'node' or 'product'")
    plan = None
    fused = C_node
    for _ in range(outer_iters):
        fused = alpha * C_node + (1.0 - alpha) * _pseudo_from_tensor(L, P)
        plan = sinkhorn(fused, mu, nu, epsilon, inner_iters)
        P = plan.values

    wd = float(np.sum(P * C_node))
    gwd = float(np.sum(P * _pseudo_from_tensor(L, P)))
    loss = alpha * wd + (1.0 - alpha) * gwd
    return AlignmentResult(
        plan=plan,
        wd_cost=wd,
        gwd_cost=gwd,
        loss_graph=loss,
        iterations_run=outer_iters * plan.iterations,
        alpha=alpha,
        node_cost=C_node,
        fused_cost=fused,
    )


def dump_alignment(result: AlignmentResult, out_dir, object_labels, tokens) -> list[Path]:
    """Write node cost, fused cost and plan as labelled TSV files."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for name, mat in (("node_cost", result.node_cost),
                      ("fused_cost", result.fused_cost),
                      ("plan", result.plan.values)):
        path = out_dir / f"{name}.tsv"
        write_matrix(path, mat, object_labels, tokens)
        paths.append(path)
    return paths
