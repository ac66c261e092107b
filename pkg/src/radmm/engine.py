"""Synchronous simulator for conventional ADMM, R-ADMM and private R-ADMM.

Half-iterations are indexed ``t = 1, 2, ...``. In R-ADMM, odd ``t = 2k-1``
solves each node's local subproblem and updates the duals; even ``t = 2k``
takes a closed-form step built only from values cached during the preceding
odd iteration, so it never touches the local data. Conventional ADMM runs the
odd-style update at every ``t``.

Each half-iteration reads an immutable snapshot of all node states and
produces a new one, so per-node work can run on a thread pool without
changing results. Randomness for node ``i`` at round ``k`` comes from its own
stream seeded by ``(seed, i, k)``.
"""

from __future__ import annotations

import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from .analysis import MetricsRecord, average_loss, consensus_error
from .dataset import LocalDataset
from .inner_solver import InnerSolverError, SubproblemSpec, solve_subproblem
from .objective import ErmParams
from .privacy import (
    AlphaSpec,
    PrivacyAccountant,
    PrivacyConfig,
    check_step_condition,
    round_privacy_cost,
    sample_objective_noise,
)
from .topology import Graph

__all__ = [
    "ALGORITHMS",
    "NodeState",
    "Exponential",
    "Schedule",
    "RunResult",
    "RunAborted",
    "StepConditionError",
    "node_rng",
    "initial_states",
    "odd_update",
    "recycled_grad_from_kkt",
    "even_update",
    "conventional_admm_step",
    "run",
]

log = logging.getLogger(__name__)

ALGORITHMS = ("conventional", "radmm", "private_radmm")


class StepConditionError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class NodeState:
    """Primal ``f``, aggregated dual ``lam`` and the values cached for recycling.

    ``recycled_grad`` holds ``noise + grad O(f)`` recovered from the KKT
    condition, ``recycled_diff`` the dual increment ``(eta/2) sum_j (f_i - f_j)``,
    ``f_prev`` the primal before the latest update and ``noise`` the
    perturbation used in the latest odd solve.
    """

    f: np.ndarray
    lam: np.ndarray
    recycled_grad: np.ndarray
    recycled_diff: np.ndarray
    f_prev: np.ndarray
    noise: np.ndarray

    @classmethod
    def initial(cls, f0: np.ndarray) -> "NodeState":
        f0 = np.asarray(f0, dtype=float)
        z = np.zeros_like(f0)
        return cls(f0, z, z, z, f0, z)


@dataclass(frozen=True)
class Exponential:
    """``scale * base**t``."""

    base: float
    scale: float = 1.0

    def __post_init__(self):
        if not self.base > 1:
            raise ValueError(f"exponential schedule needs base > 1, got {self.base}")
        if not self.scale > 0:
            raise ValueError(f"exponential schedule needs scale > 0, got {self.scale}")

    def __call__(self, t: int) -> float:
        return self.scale * self.base**t

    def __str__(self) -> str:
        return f"exponential({self.base!r}, {self.scale!r})"


@dataclass(frozen=True)
class Schedule:
    """``eta`` and ``gamma`` are constants or functions of ``t``; ``alpha`` is a
    constant or a function of ``(node, k)``."""

    eta: float | Callable[[int], float]
    gamma: float | Callable[[int], float] = 0.0
    alpha: AlphaSpec = 1.0

    def eta_at(self, t: int) -> float:
        v = float(self.eta(t) if callable(self.eta) else self.eta)
        if not v > 0:
            raise ValueError(f"eta({t}) = {v} is not positive")
        return v

    def gamma_at(self, t: int) -> float:
        v = float(self.gamma(t) if callable(self.gamma) else self.gamma)
        if not v >= 0:
            raise ValueError(f"gamma({t}) = {v} is negative")
        return v

    @property
    def is_fixed(self) -> bool:
        return not callable(self.eta) and not callable(self.gamma)


@dataclass
class RunResult:
    algorithm: str
    seed: int
    metrics: list[MetricsRecord] = field(default_factory=list)
    states: list[NodeState] = field(default_factory=list)
    privacy_per_node: np.ndarray | None = None
    wall_time: float = 0.0
    history: list[list[NodeState]] | None = None

    @property
    def loss_trace(self) -> np.ndarray:
        return np.array([m.avg_loss for m in self.metrics])

    @property
    def primals(self) -> np.ndarray:
        return np.array([s.f for s in self.states])

    @property
    def duals(self) -> np.ndarray:
        return np.array([s.lam for s in self.states])

    @property
    def privacy_total(self) -> float:
        if self.privacy_per_node is None:
            return float("inf")
        return float(self.privacy_per_node.max())


class RunAborted(RuntimeError):
    """A step failed; ``partial`` holds everything recorded before the failure."""

    def __init__(self, cause: Exception, partial: RunResult):
        super().__init__(str(cause))
        self.cause = cause
        self.partial = partial


def node_rng(seed: int, node: int, round_index: int) -> np.random.Generator:
    return np.random.default_rng([seed, node, round_index])


def initial_states(n_nodes: int, d: int, seed: int) -> list[NodeState]:
    """Random ``f_i(0) ~ N(0, I)`` from each node's round-0 stream; zero duals."""
    return [NodeState.initial(node_rng(seed, i, 0).standard_normal(d)) for i in range(n_nodes)]


def _map(executor: ThreadPoolExecutor | None, fn, items):
    if executor is None:
        return [fn(x) for x in items]
    return list(executor.map(fn, items))


def _solve_all(states, graph, datasets, params, eta, noise, round_index, inner_tol, max_iter, executor):
    def solve(i: int) -> np.ndarray:
        s = states[i]
        nbrs = graph.neighbors(i)
        anchors = np.array([0.5 * (s.f + states[j].f) for j in nbrs])
        spec = SubproblemSpec(
            dataset=datasets[i],
            params=params,
            linear_term=2.0 * s.lam + noise[i],
            anchors=anchors,
            eta=eta,
            tol=inner_tol,
            max_iter=max_iter,
        )
        try:
            return solve_subproblem(spec, warm_start=s.f)
        except InnerSolverError as exc:
            raise InnerSolverError(str(exc), node=i, round_index=round_index) from exc

    return _map(executor, solve, range(graph.n_nodes))


def recycled_grad_from_kkt(
    lam_prev: np.ndarray, f_new: np.ndarray, f_prev: np.ndarray, f_prev_neighbors: np.ndarray, eta: float
) -> np.ndarray:
    """``noise + grad O(f_new)`` recovered from the odd subproblem's stationarity:
    ``-2 lam_prev - eta * sum_j (2 f_new - f_prev - f_prev_j)``."""
    f_prev_neighbors = np.asarray(f_prev_neighbors, dtype=float).reshape(-1, f_new.shape[0])
    v = f_prev_neighbors.shape[0]
    return -2.0 * lam_prev - eta * (2.0 * v * f_new - v * f_prev - f_prev_neighbors.sum(axis=0))


def _dual_increment(i: int, primals: Sequence[np.ndarray], graph: Graph, eta: float) -> np.ndarray:
    nbrs = graph.neighbors(i)
    total = np.zeros_like(primals[i])
    for j in nbrs:
        total += primals[i] - primals[j]
    return 0.5 * eta * total


def odd_update(
    states: Sequence[NodeState],
    graph: Graph,
    datasets: Sequence[LocalDataset],
    params: ErmParams,
    eta: float,
    noise: Sequence[np.ndarray] | None = None,
    round_index: int = 0,
    inner_tol: float = 1e-10,
    max_iter: int = 100,
    executor: ThreadPoolExecutor | None = None,
) -> list[NodeState]:
    """Local solves, dual ascent, and caching of the recycled quantities.

    ``noise`` is the objective perturbation per node (zeros when ``None``).
    """
    n = graph.n_nodes
    if noise is None:
        noise = [np.zeros_like(s.f) for s in states]
    new_f = _solve_all(states, graph, datasets, params, eta, noise, round_index, inner_tol, max_iter, executor)
    out = []
    for i in range(n):
        s = states[i]
        incr = _dual_increment(i, new_f, graph, eta)
        nbr_prev = np.array([states[j].f for j in graph.neighbors(i)])
        grad = recycled_grad_from_kkt(s.lam, new_f[i], s.f, nbr_prev, eta)
        out.append(
            NodeState(
                f=new_f[i],
                lam=s.lam + incr,
                recycled_grad=grad,
                recycled_diff=incr,
                f_prev=s.f,
                noise=np.asarray(noise[i], dtype=float),
            )
        )
    return out


def even_update(states: Sequence[NodeState], graph: Graph, eta: float, gamma: float) -> list[NodeState]:
    """Linearized primal step from cached values; duals are carried over unchanged.

    Takes no dataset: everything comes from the preceding odd iteration.
    """
    out = []
    for i, s in enumerate(states):
        step = 1.0 / (2.0 * eta * graph.degrees[i] + gamma)
        direction = s.recycled_grad + 2.0 * s.lam + 2.0 * s.recycled_diff
        out.append(replace(s, f=s.f - step * direction, f_prev=s.f))
    return out


def conventional_admm_step(
    states: Sequence[NodeState],
    graph: Graph,
    datasets: Sequence[LocalDataset],
    params: ErmParams,
    eta: float,
    round_index: int = 0,
    inner_tol: float = 1e-10,
    max_iter: int = 100,
    executor: ThreadPoolExecutor | None = None,
) -> list[NodeState]:
    """One full ADMM iteration: local solve plus dual update, no recycling."""
    return odd_update(states, graph, datasets, params, eta, None, round_index, inner_tol, max_iter, executor)


def _record(t, states, datasets, privacy_running, eta, gamma) -> MetricsRecord:
    primals = np.array([s.f for s in states])
    dual_sum = np.sum([s.lam for s in states], axis=0)
    return MetricsRecord(
        t=t,
        avg_loss=average_loss(primals, datasets),
        consensus_error=consensus_error(primals),
        privacy_bound_running=privacy_running,
        eta_t=eta,
        gamma_t=gamma,
        dual_sum_norm=float(np.linalg.norm(dual_sum)),
    )


def _check_inputs(graph, datasets, params, algorithm):
    if algorithm not in ALGORITHMS:
        raise ValueError(f"algorithm must be one of {ALGORITHMS}, got {algorithm!r}")
    if len(datasets) != graph.n_nodes:
        raise ValueError(f"{len(datasets)} datasets for {graph.n_nodes} nodes")
    if params.n_nodes != graph.n_nodes:
        raise ValueError(f"params.n_nodes={params.n_nodes} but the graph has {graph.n_nodes} nodes")
    dims = {ds.dim for ds in datasets}
    if len(dims) != 1:
        raise ValueError(f"local datasets disagree on dimension: {sorted(dims)}")
    params.check_sizes(datasets)


def run(
    graph: Graph,
    datasets: Sequence[LocalDataset],
    params: ErmParams,
    schedule: Schedule,
    K: int,
    algorithm: str = "radmm",
    seed: int = 0,
    inner_tol: float = 1e-10,
    max_iter: int = 100,
    workers: int = 1,
    keep_history: bool = False,
) -> RunResult:
    """Run ``K`` outer rounds (``2K`` half-iterations) and record metrics at each.

    For ``private_radmm`` the step-size condition is checked for every round
    before any computation and :class:`StepConditionError` is raised if it
    fails. Step failures raise :class:`RunAborted` carrying the partial result.
    """
    _check_inputs(graph, datasets, params, algorithm)
    private = algorithm == "private_radmm"
    sizes = [len(ds) for ds in datasets]
    d = datasets[0].dim
    privacy = PrivacyConfig(schedule.alpha, enabled=private)

    if private:
        for k in range(1, K + 1):
            eta_k = schedule.eta_at(2 * k - 1)
            cond = check_step_condition(params, graph, sizes, eta_k)
            if not cond.ok:
                raise StepConditionError(
                    f"round {k}: 2*c1 = {cond.lhs:.6g} is not below "
                    f"min_i (B_i/C)(rho/N + 2 eta V_i) = {cond.rhs[cond.binding_node]:.6g} "
                    f"(binding node {cond.binding_node}, eta = {eta_k:.6g})"
                )

    accountant = PrivacyAccountant(graph.n_nodes) if private else None
    result = RunResult(algorithm=algorithm, seed=seed, history=[] if keep_history else None)
    states = initial_states(graph.n_nodes, d, seed)
    result.states = states
    start = time.perf_counter()
    executor = ThreadPoolExecutor(max_workers=workers) if workers > 1 else None
    try:
        for k in range(1, K + 1):
            for t in (2 * k - 1, 2 * k):
                eta_t = schedule.eta_at(t)
                gamma_t = schedule.gamma_at(t)
                if algorithm == "conventional":
                    states = conventional_admm_step(
                        states, graph, datasets, params, eta_t, t, inner_tol, max_iter, executor
                    )
                    p_running = float("inf")
                elif t % 2 == 1:
                    if private:
                        alphas = [privacy.alpha_of(i, k) for i in range(graph.n_nodes)]
                        noise = [sample_objective_noise(d, alphas[i], node_rng(seed, i, k)) for i in range(graph.n_nodes)]
                    else:
                        noise = None
                    states = odd_update(states, graph, datasets, params, eta_t, noise, t, inner_tol, max_iter, executor)
                    if private:
                        p_running = accountant.record("odd", round_privacy_cost(params, graph, sizes, eta_t, alphas))
                    else:
                        p_running = float("inf")
                else:
                    states = even_update(states, graph, eta_t, gamma_t)
                    p_running = accountant.record("even") if private else float("inf")
                result.states = states
                if keep_history:
                    result.history.append(states)
                result.metrics.append(_record(t, states, datasets, p_running, eta_t, gamma_t))
    except Exception as exc:
        result.wall_time = time.perf_counter() - start
        if accountant is not None:
            result.privacy_per_node = accountant.per_node.copy()
        log.error("run aborted: %s", exc)
        raise RunAborted(exc, result) from exc
    finally:
        if executor is not None:
            executor.shutdown()
    result.wall_time = time.perf_counter() - start
    if accountant is not None:
        result.privacy_per_node = accountant.per_node.copy()
    return result
