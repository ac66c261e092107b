"""Objective-perturbation noise, the private step-size gate, and privacy accounting.

Noise vectors have density proportional to ``exp(-alpha * ||eps||)``: the norm
is Gamma(shape=d, scale=1/alpha) and the direction is uniform on the sphere.
Only odd (data-touching) iterations cost privacy; even iterations are
post-processing of already released values and contribute nothing.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence, Union

import numpy as np

from .objective import ErmParams
from .topology import Graph

__all__ = [
    "AlphaSpec",
    "PrivacyConfig",
    "PrivacyAccountingError",
    "StepCondition",
    "PrivacyBound",
    "PrivacyAccountant",
    "sample_objective_noise",
    "check_step_condition",
    "round_privacy_cost",
    "privacy_bound",
]

AlphaSpec = Union[float, Callable[[int, int], float]]


class PrivacyAccountingError(RuntimeError):
    pass


@dataclass(frozen=True)
class PrivacyConfig:
    """``alpha`` is a constant or a callable ``(node, k) -> alpha_i(k)`` with
    ``k`` the 1-based outer round."""

    alpha: AlphaSpec = 1.0
    enabled: bool = True

    def alpha_of(self, node: int, k: int) -> float:
        a = self.alpha(node, k) if callable(self.alpha) else self.alpha
        if self.enabled and not a > 0:
            raise ValueError(f"alpha for node {node}, round {k} must be positive, got {a}")
        return float(a)


def sample_objective_noise(d: int, alpha: float, rng: np.random.Generator, size: int | None = None) -> np.ndarray:
    """Draw from the density proportional to ``exp(-alpha * ||eps||_2)`` in R^d.

    numpy's ``standard_gamma`` uses Marsaglia-Tsang for shape >= 1. The radius
    is drawn before the direction, and scaling by ``1/alpha`` happens last, so
    two ``alpha`` values on the same stream give proportional vectors.
    """
    if d < 1:
        raise ValueError("d must be >= 1")
    if not alpha > 0:
        raise ValueError("alpha must be positive")
    shape = () if size is None else (size,)
    radius = rng.standard_gamma(d, size=shape)
    direction = rng.standard_normal(shape + (d,))
    direction /= np.linalg.norm(direction, axis=-1, keepdims=True)
    return direction * (np.asarray(radius)[..., None] / alpha)


@dataclass(frozen=True)
class StepCondition:
    ok: bool
    lhs: float  # 2 c1
    rhs: np.ndarray  # per node (B_i / C)(rho/N + 2 eta V_i)
    binding_node: int

    @property
    def margin(self) -> float:
        return float(self.rhs[self.binding_node] - self.lhs)


def check_step_condition(params: ErmParams, graph: Graph, sizes: Sequence[int], eta: float) -> StepCondition:
    """``2 c1 < min_i (B_i / C)(rho/N + 2 eta V_i)``, which keeps the Jacobian
    ratio in the privacy proof bounded."""
    sizes = np.asarray(sizes, dtype=float)
    if sizes.shape != (graph.n_nodes,):
        raise ValueError(f"need {graph.n_nodes} dataset sizes, got {sizes.size}")
    rhs = sizes / params.C * (params.reg + 2.0 * eta * graph.degrees)
    binding = int(np.argmin(rhs))
    lhs = 2.0 * params.c1
    return StepCondition(bool(lhs < rhs[binding]), lhs, rhs, binding)


def round_privacy_cost(
    params: ErmParams, graph: Graph, sizes: Sequence[int], eta: float, alphas: Sequence[float]
) -> np.ndarray:
    """Per-node privacy cost of one odd iteration:
    ``(2C/B_i) * (1.4 c1 / (rho/N + 2 eta V_i) + alpha_i)``."""
    sizes = np.asarray(sizes, dtype=float)
    alphas = np.asarray(alphas, dtype=float)
    return 2.0 * params.C / sizes * (1.4 * params.c1 / (params.reg + 2.0 * eta * graph.degrees) + alphas)


@dataclass(frozen=True)
class PrivacyBound:
    beta: float
    per_node: np.ndarray
    trace: np.ndarray  # P(t) for t = 1..2K; even t repeats the preceding odd value

    @property
    def binding_node(self) -> int:
        return int(np.argmax(self.per_node))


def privacy_bound(
    params: ErmParams,
    graph: Graph,
    sizes: Sequence[int],
    privacy: PrivacyConfig | float,
    eta: float | Callable[[int], float],
    K: int,
) -> PrivacyBound:
    """Certified total privacy loss after ``K`` outer rounds.

    ``eta`` may be a function of the half-iteration index ``t``; round ``k``
    is charged at ``eta(2k - 1)``. Returns the max over nodes, the per-node
    sums and the running bound at every half-iteration.
    """
    if not isinstance(privacy, PrivacyConfig):
        privacy = PrivacyConfig(privacy)
    if K < 0:
        raise ValueError("K must be >= 0")
    n = graph.n_nodes
    sizes = np.asarray(sizes, dtype=float)
    degrees = graph.degrees.astype(float)
    per_node = np.zeros(n)
    trace = []
    for k in range(1, K + 1):
        eta_k = eta(2 * k - 1) if callable(eta) else eta
        for i in range(n):
            sens = 1.4 * params.c1 / (params.rho / n + 2.0 * eta_k * degrees[i])
            per_node[i] += 2.0 * params.C / sizes[i] * (sens + privacy.alpha_of(i, k))
        trace += [per_node.max()] * 2
    return PrivacyBound(float(per_node.max()), per_node, np.array(trace))


@dataclass
class PrivacyAccountant:
    """Accumulates per-node privacy loss across half-iterations.

    Odd iterations add their per-node cost. Even iterations must record zero;
    anything else is rejected because it would contradict the post-processing
    argument that makes even iterations free.
    """

    n_nodes: int
    per_node: np.ndarray = field(init=False)
    history: list[float] = field(init=False, default_factory=list)

    def __post_init__(self):
        self.per_node = np.zeros(self.n_nodes)

    def record(self, round_type: str, increment: Sequence[float] | float | None = None) -> float:
        if round_type == "even":
            if increment is not None and np.any(np.asarray(increment, dtype=float) != 0):
                raise PrivacyAccountingError("even iterations reuse released values and cannot add privacy loss")
        elif round_type == "odd":
            if increment is None:
                raise PrivacyAccountingError("odd iterations must report their privacy cost")
            inc = np.broadcast_to(np.asarray(increment, dtype=float), (self.n_nodes,))
            if np.any(inc < 0) or not np.all(np.isfinite(inc)):
                raise PrivacyAccountingError(f"invalid odd-round increment {inc}")
            self.per_node = self.per_node + inc
        else:
            raise ValueError(f"round_type must be 'odd' or 'even', got {round_type!r}")
        total = self.total()
        self.history.append(total)
        return total

    def total(self) -> float:
        return float(self.per_node.max()) if self.n_nodes else 0.0
