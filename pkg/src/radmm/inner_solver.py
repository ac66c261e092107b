"""Damped Newton solver for the per-node primal subproblem.

The subproblem is

    min_f  O(f, D_i) + linear_term.f + eta * sum_j ||anchor_j - f||^2

which is strongly convex with modulus at least ``rho/N + 2*eta*V_i``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve

from .dataset import LocalDataset
from .objective import ErmParams, local_gradient, local_hessian, local_value

__all__ = ["SubproblemSpec", "InnerSolverError", "solve_subproblem", "subproblem_value", "kkt_residual"]

ARMIJO_C = 1e-4
MAX_HALVINGS = 60


class InnerSolverError(RuntimeError):
    def __init__(self, message: str, node: int | None = None, round_index: int | None = None):
        where = []
        if node is not None:
            where.append(f"node {node}")
        if round_index is not None:
            where.append(f"round {round_index}")
        prefix = f"[{', '.join(where)}] " if where else ""
        super().__init__(prefix + message)
        self.node = node
        self.round_index = round_index


@dataclass(frozen=True, eq=False)
class SubproblemSpec:
    dataset: LocalDataset
    params: ErmParams
    linear_term: np.ndarray
    anchors: np.ndarray  # shape (V_i, d)
    eta: float
    tol: float = 1e-10
    max_iter: int = 100

    def __post_init__(self):
        d = self.dataset.dim
        lin = np.asarray(self.linear_term, dtype=float)
        anchors = np.asarray(self.anchors, dtype=float).reshape(-1, d) if np.size(self.anchors) else np.zeros((0, d))
        if lin.shape != (d,):
            raise ValueError(f"linear_term has shape {lin.shape}, expected ({d},)")
        if not self.eta > 0 or not self.tol > 0 or self.max_iter < 1:
            raise ValueError("eta and tol must be positive and max_iter >= 1")
        object.__setattr__(self, "linear_term", lin)
        object.__setattr__(self, "anchors", anchors)


def subproblem_value(f: np.ndarray, spec: SubproblemSpec) -> float:
    diff = spec.anchors - f
    return local_value(f, spec.dataset, spec.params) + float(spec.linear_term @ f) + spec.eta * float(np.sum(diff * diff))


def _gradient(f: np.ndarray, spec: SubproblemSpec) -> np.ndarray:
    n_anchor = spec.anchors.shape[0]
    return (
        local_gradient(f, spec.dataset, spec.params)
        + spec.linear_term
        + 2.0 * spec.eta * (n_anchor * f - spec.anchors.sum(axis=0))
    )


def kkt_residual(f: np.ndarray, spec: SubproblemSpec) -> float:
    """Norm of the subproblem gradient at ``f``."""
    return float(np.linalg.norm(_gradient(f, spec)))


def solve_subproblem(spec: SubproblemSpec, warm_start: np.ndarray) -> np.ndarray:
    """Minimize the subproblem to KKT residual ``spec.tol``.

    Newton directions come from a Cholesky solve with the exact Hessian; if the
    factorization fails the step falls back to the negative gradient. Step
    lengths are halved until the Armijo condition holds. Once the predicted
    decrease is at rounding level the full Newton step is taken whenever it
    reduces the residual, since function values can no longer discriminate.
    """
    f = np.array(warm_start, dtype=float)
    if f.shape != (spec.dataset.dim,):
        raise ValueError(f"warm start has shape {f.shape}, expected ({spec.dataset.dim},)")
    shift = 2.0 * spec.eta * spec.anchors.shape[0]
    value = subproblem_value(f, spec)
    grad = _gradient(f, spec)
    gnorm = np.linalg.norm(grad)

    for _ in range(spec.max_iter):
        if gnorm <= spec.tol:
            return f
        hess = local_hessian(f, spec.dataset, spec.params)
        hess[np.diag_indices_from(hess)] += shift
        try:
            step = -cho_solve(cho_factor(hess), grad)
        except (LinAlgError, ValueError):
            step = -grad
        slope = float(grad @ step)
        if not slope < 0:
            step, slope = -grad, -float(grad @ grad)

        if -slope <= 1e-13 * max(1.0, abs(value)):
            trial = f + step
            trial_grad = _gradient(trial, spec)
            if np.linalg.norm(trial_grad) < gnorm:
                f, grad = trial, trial_grad
                gnorm = np.linalg.norm(grad)
                value = subproblem_value(f, spec)
                continue

        t = 1.0
        for _ in range(MAX_HALVINGS):
            trial = f + t * step
            trial_value = subproblem_value(trial, spec)
            if trial_value <= value + ARMIJO_C * t * slope:
                break
            t *= 0.5
        else:
            raise InnerSolverError(f"line search failed at residual {gnorm:.3g}")
        if not np.all(np.isfinite(trial)):
            raise InnerSolverError("non-finite iterate")
        f, value = trial, trial_value
        grad = _gradient(f, spec)
        gnorm = np.linalg.norm(grad)

    if gnorm <= spec.tol:
        return f
    raise InnerSolverError(f"max_iter={spec.max_iter} reached with residual {gnorm:.3g} > tol {spec.tol:.3g}")
