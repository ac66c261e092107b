"""Convergence-condition checker and experiment metrics.

The sufficient condition for R-ADMM convergence is a pair of matrix
inequalities ``LHS > RHS`` over N x N matrices built from the graph. The
products involved are not symmetric in general, so ``X > Y`` is read as
positive definiteness of the symmetric part of ``X - Y``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .dataset import Dataset
from .objective import logistic_loss
from .topology import Graph, laplacian, laplacian_pseudoinverse, signless_laplacian

__all__ = [
    "ConditionReport",
    "MetricsRecord",
    "condition_matrices",
    "reduced_condition_matrices",
    "check_sufficient_condition",
    "find_gamma_threshold",
    "average_loss",
    "consensus_error",
    "aggregate_runs",
    "oscillation_amplitude",
]

MARGIN_TOL = 1e-10


@dataclass(frozen=True)
class ConditionReport:
    condition_16_margin: float
    condition_17_margin: float
    satisfied: bool
    L: float
    mu: float
    sigma_min_Dtilde: float
    eta: float
    gamma: float

    def format(self) -> str:
        rows = [
            ("eta", self.eta),
            ("gamma", self.gamma),
            ("L", self.L),
            ("mu", self.mu),
            ("sigma_min(D~)", self.sigma_min_Dtilde),
            ("condition 1 margin", self.condition_16_margin),
            ("condition 2 margin", self.condition_17_margin),
        ]
        lines = [f"{name:<22}{value:.17g}" for name, value in rows]
        lines.append(f"{'satisfied':<22}{'yes' if self.satisfied else 'no'}")
        lines.append("(margins: min eigenvalue of the symmetric part of LHS - RHS; valid for fixed eta, gamma only)")
        return "\n".join(lines)


@dataclass(frozen=True)
class MetricsRecord:
    t: int
    avg_loss: float
    consensus_error: float
    privacy_bound_running: float
    eta_t: float
    gamma_t: float
    dual_sum_norm: float = 0.0


def _validate(eta, gamma, L, mu):
    if not eta > 0:
        raise ValueError(f"eta must be positive, got {eta}")
    if not gamma >= 0:
        raise ValueError(f"gamma must be nonnegative, got {gamma}")
    if not L > 0:
        raise ValueError(f"L must be positive, got {L}")
    if not mu > 1:
        raise ValueError(f"mu must exceed 1, got {mu}")


def condition_matrices(
    graph: Graph, eta: float, gamma: float, lipschitz: Sequence[float] | float, L: float = 2.0, mu: float = 2.0
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """``(lhs1, rhs1, lhs2, rhs2)`` of the two sufficient-condition inequalities.

    ``lipschitz`` holds the gradient Lipschitz constants ``M_i`` (a scalar is
    broadcast); the conditions use their squares.
    """
    _validate(eta, gamma, L, mu)
    n = graph.n_nodes
    m = np.broadcast_to(np.asarray(lipschitz, dtype=float), (n,))
    lap = laplacian(graph)
    slap = signless_laplacian(graph)
    dtilde = 2.0 * eta * graph.degrees + gamma
    dtilde_inv = np.diag(1.0 / dtilde)
    sigma = dtilde.min()
    d_m = np.diag(m**2)

    lhs1 = np.eye(n) + eta * slap @ dtilde_inv
    rhs1 = L * mu / (2.0 * sigma) / eta * d_m @ laplacian_pseudoinverse(graph)
    lhs2 = eta * slap
    rhs2 = (
        eta * slap @ dtilde_inv @ (eta * lap)
        + 2.0 / L * eta * slap @ dtilde_inv @ (eta * slap)
        + L * mu / (2.0 * sigma * (mu - 1.0)) * d_m
    )
    return lhs1, rhs1, lhs2, rhs2


def reduced_condition_matrices(
    graph: Graph, eta: float, gamma: float, lipschitz: Sequence[float] | float
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Closed form of :func:`condition_matrices` at ``L = mu = 2``."""
    _validate(eta, gamma, 2.0, 2.0)
    n = graph.n_nodes
    m = np.broadcast_to(np.asarray(lipschitz, dtype=float), (n,))
    slap = signless_laplacian(graph)
    deg = np.diag(graph.degrees.astype(float))
    dtilde = 2.0 * eta * graph.degrees + gamma
    dtilde_inv = np.diag(1.0 / dtilde)
    sigma = dtilde.min()
    d_m = np.diag(m**2)

    lhs1 = np.eye(n) + eta * slap @ dtilde_inv
    rhs1 = 4.0 / (2.0 * sigma) / eta * d_m @ laplacian_pseudoinverse(graph)
    lhs2 = eta * slap
    rhs2 = 2.0 * eta * slap @ dtilde_inv @ (eta * deg) + 2.0 / sigma * d_m
    return lhs1, rhs1, lhs2, rhs2


def _sym_min_eig(x: np.ndarray) -> float:
    return float(np.linalg.eigvalsh(0.5 * (x + x.T)).min())


def check_sufficient_condition(
    graph: Graph, eta: float, gamma: float, lipschitz: Sequence[float] | float, L: float = 2.0, mu: float = 2.0
) -> ConditionReport:
    lhs1, rhs1, lhs2, rhs2 = condition_matrices(graph, eta, gamma, lipschitz, L, mu)
    m1 = _sym_min_eig(lhs1 - rhs1)
    m2 = _sym_min_eig(lhs2 - rhs2)
    sigma = float((2.0 * eta * graph.degrees + gamma).min())
    return ConditionReport(m1, m2, m1 > MARGIN_TOL and m2 > MARGIN_TOL, L, mu, sigma, eta, gamma)


def find_gamma_threshold(
    graph: Graph,
    eta: float,
    lipschitz: Sequence[float] | float,
    L: float = 2.0,
    mu: float = 2.0,
    gamma_max: float = 1e8,
    rel_tol: float = 1e-6,
) -> float | None:
    """Smallest gamma (to ``rel_tol``) at which the condition holds, or ``None``.

    Scans gamma = 0 and then doubling values up to ``gamma_max``; the first
    satisfied point is refined by bisection. Assumes satisfaction is monotone in
    gamma beyond the threshold, which holds empirically but is not proven.
    Bipartite graphs never qualify because their signless Laplacian is singular.
    """
    def ok(g):
        return check_sufficient_condition(graph, eta, g, lipschitz, L, mu).satisfied

    if ok(0.0):
        return 0.0
    lo, hi = 0.0, 1e-3
    while not ok(hi):
        lo = hi
        hi *= 2.0
        if hi > gamma_max:
            return None
    while hi - lo > rel_tol * hi:
        mid = 0.5 * (lo + hi)
        if ok(mid):
            hi = mid
        else:
            lo = mid
    return hi


def average_loss(primals: np.ndarray, datasets: Sequence[Dataset]) -> float:
    """Unregularized logistic loss of each node's classifier on its own data,
    averaged over samples and then over nodes."""
    primals = np.asarray(primals, dtype=float)
    if primals.shape[0] != len(datasets):
        raise ValueError("one classifier per dataset required")
    per_node = [float(logistic_loss(ds.labels * (ds.features @ f)).mean()) for f, ds in zip(primals, datasets)]
    return float(np.mean(per_node))


def consensus_error(primals: np.ndarray) -> float:
    """Largest pairwise distance between node classifiers."""
    primals = np.asarray(primals, dtype=float)
    diff = primals[:, None, :] - primals[None, :, :]
    return float(np.sqrt((diff**2).sum(axis=-1)).max())


def aggregate_runs(traces: Sequence[Sequence[float]]) -> tuple[np.ndarray, np.ndarray]:
    """Pointwise mean and range (max - min) across equal-length runs."""
    if len(traces) < 1:
        raise ValueError("need at least one trace")
    lengths = {len(t) for t in traces}
    if len(lengths) != 1:
        raise ValueError(f"traces have different lengths: {sorted(lengths)}")
    arr = np.asarray(traces, dtype=float)
    return arr.mean(axis=0), arr.max(axis=0) - arr.min(axis=0)


def oscillation_amplitude(trace: Sequence[float]) -> float:
    """Mean ``|L(2k) - L(2k-1)|`` over the second half of the outer rounds.

    ``trace[0]`` is t = 1. A trailing unpaired odd entry is ignored.
    """
    trace = np.asarray(trace, dtype=float)
    if trace.size < 4:
        raise ValueError("trace must have at least 4 half-iterations")
    n_pairs = trace.size // 2
    pairs = trace[: 2 * n_pairs].reshape(n_pairs, 2)[n_pairs // 2:]
    return float(np.abs(pairs[:, 1] - pairs[:, 0]).mean())
