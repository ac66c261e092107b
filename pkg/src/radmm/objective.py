"""Regularized logistic ERM: the per-node objective and the centralized reference.

The local objective of node ``i`` is

    O(f, D_i) = (C / B_i) * sum_n loss(y_n f.x_n) + (rho / N) * 0.5 * ||f||^2

and summing it over nodes gives the centralized objective exactly.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy import optimize
from scipy.special import expit

from .dataset import Dataset, LocalDataset

__all__ = [
    "ErmParams",
    "SolverDivergence",
    "logistic_loss",
    "logistic_loss_d1",
    "logistic_loss_d2",
    "local_value",
    "local_gradient",
    "local_hessian",
    "lipschitz_bound",
    "centralized_value",
    "centralized_gradient",
    "centralized_solve",
]

LOGISTIC_C1 = 0.25


class SolverDivergence(RuntimeError):
    pass


@dataclass(frozen=True)
class ErmParams:
    """Loss weight ``C``, regularization ``rho``, node count ``N`` and the
    loss curvature bound ``c1`` (1/4 for the logistic loss)."""

    C: float
    rho: float
    n_nodes: int
    c1: float = LOGISTIC_C1

    def __post_init__(self):
        if not self.C > 0:
            raise ValueError(f"C must be positive, got {self.C}")
        if not self.rho > 0:
            raise ValueError(f"rho must be positive, got {self.rho}")
        if not self.c1 > 0:
            raise ValueError(f"c1 must be positive, got {self.c1}")
        if self.n_nodes < 1:
            raise ValueError(f"n_nodes must be >= 1, got {self.n_nodes}")

    @property
    def reg(self) -> float:
        """Per-node regularization weight rho / N."""
        return self.rho / self.n_nodes

    def check_sizes(self, datasets: Sequence[Dataset]) -> None:
        """Enforce ``C <= min_i B_i``."""
        smallest = min(len(ds) for ds in datasets)
        if self.C > smallest:
            raise ValueError(f"C={self.C} exceeds the smallest local dataset size {smallest}")


def logistic_loss(z):
    """log(1 + exp(-z)), overflow-free."""
    return np.logaddexp(0.0, -np.asarray(z, dtype=float))


def logistic_loss_d1(z):
    """-1 / (1 + exp(z)), in [-1, 0]."""
    return -expit(-np.asarray(z, dtype=float))


def logistic_loss_d2(z):
    """sigma(z) * sigma(-z), in (0, 1/4].

    Written as 1 / (4 cosh^2(z/2)) so rounding can never push it above 1/4.
    """
    z = np.asarray(z, dtype=float)
    with np.errstate(over="ignore"):
        return 0.25 / np.cosh(0.5 * z) ** 2


def _margins(f: np.ndarray, data: Dataset) -> np.ndarray:
    f = np.asarray(f, dtype=float)
    if f.shape != (data.dim,):
        raise ValueError(f"classifier has shape {f.shape}, data dimension is {data.dim}")
    return data.labels * (data.features @ f)


def local_value(f: np.ndarray, data: Dataset, params: ErmParams) -> float:
    z = _margins(f, data)
    return float(params.C / len(data) * logistic_loss(z).sum() + 0.5 * params.reg * f @ f)


def local_gradient(f: np.ndarray, data: Dataset, params: ErmParams) -> np.ndarray:
    z = _margins(f, data)
    w = logistic_loss_d1(z) * data.labels
    return params.C / len(data) * (data.features.T @ w) + params.reg * np.asarray(f, dtype=float)


def local_hessian(f: np.ndarray, data: Dataset, params: ErmParams) -> np.ndarray:
    z = _margins(f, data)
    x = data.features
    h = params.C / len(data) * (x.T * logistic_loss_d2(z)) @ x
    h[np.diag_indices_from(h)] += params.reg
    return h


def lipschitz_bound(params: ErmParams) -> float:
    """Gradient Lipschitz constant ``M_i = C*c1 + rho/N``.

    Valid for every node because ``||x|| <= 1`` bounds each sample's Hessian
    contribution by ``c1``. Conservative: the actual constant is usually smaller.
    """
    return params.C * params.c1 + params.reg


def centralized_value(f: np.ndarray, datasets: Sequence[LocalDataset], params: ErmParams) -> float:
    """Objective over the union of shards, each shard weighted by C / B_i."""
    f = np.asarray(f, dtype=float)
    total = 0.0
    for ds in datasets:
        total += params.C / len(ds) * float(logistic_loss(_margins(f, ds)).sum())
    return total + 0.5 * params.rho * float(f @ f)


def centralized_gradient(f: np.ndarray, datasets: Sequence[LocalDataset], params: ErmParams) -> np.ndarray:
    f = np.asarray(f, dtype=float)
    g = params.rho * f
    for ds in datasets:
        g = g + params.C / len(ds) * (ds.features.T @ (logistic_loss_d1(_margins(f, ds)) * ds.labels))
    return g


def _centralized_hessian(f, datasets, params):
    d = datasets[0].dim
    h = params.rho * np.eye(d)
    for ds in datasets:
        z = _margins(f, ds)
        h += params.C / len(ds) * (ds.features.T * logistic_loss_d2(z)) @ ds.features
    return h


def centralized_solve(
    datasets: Sequence[LocalDataset] | Dataset,
    params: ErmParams,
    tol: float = 1e-10,
    x0: np.ndarray | None = None,
) -> np.ndarray:
    """Minimizer of the centralized objective with gradient norm at most ``tol``.

    Uses scipy's exact trust-region method, independent of the package's own
    Newton solver so it can serve as a reference for the decentralized runs.
    A single :class:`Dataset` is treated as one shard.
    """
    if isinstance(datasets, Dataset):
        datasets = [datasets]
    d = datasets[0].dim
    x0 = np.zeros(d) if x0 is None else np.asarray(x0, dtype=float)
    res = optimize.minimize(
        centralized_value,
        x0,
        args=(datasets, params),
        jac=centralized_gradient,
        hess=_centralized_hessian,
        method="trust-exact",
        options={"gtol": tol, "maxiter": 1000},
    )
    x = res.x
    if not np.all(np.isfinite(x)):
        raise SolverDivergence(f"centralized solve produced a non-finite iterate: {res.message}")
    # trust-exact can stall at rounding level before gtol; finish with pure Newton steps
    g = centralized_gradient(x, datasets, params)
    gnorm = np.linalg.norm(g)
    for _ in range(20):
        if gnorm <= tol:
            break
        trial = x - np.linalg.solve(_centralized_hessian(x, datasets, params), g)
        g_trial = centralized_gradient(trial, datasets, params)
        if not np.linalg.norm(g_trial) < gnorm:
            break
        x, g, gnorm = trial, g_trial, np.linalg.norm(g_trial)
    if gnorm > tol:
        raise SolverDivergence(f"centralized solve stopped at gradient norm {gnorm:.3g} > {tol:.3g}: {res.message}")
    return x
