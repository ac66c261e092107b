import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from radmm.dataset import LocalDataset
from radmm.inner_solver import InnerSolverError, SubproblemSpec, kkt_residual, solve_subproblem, subproblem_value
from radmm.objective import ErmParams, local_gradient, logistic_loss


def random_spec(seed, b=10, d=3, v=2, eta=0.5, tol=1e-10):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((b, d))
    x /= np.maximum(np.linalg.norm(x, axis=1), 1.0)[:, None]
    y = rng.choice([-1.0, 1.0], size=b)
    return SubproblemSpec(
        dataset=LocalDataset(x, y),
        params=ErmParams(C=1.0, rho=0.5, n_nodes=3),
        linear_term=rng.standard_normal(d),
        anchors=rng.standard_normal((v, d)),
        eta=eta,
        tol=tol,
    )


def test_quadratic_limit():
    a = np.array([0.7, -1.3])
    mu, eta = 0.8, 0.5
    ds = LocalDataset(np.array([[0.5, 0.5]]), np.array([1.0]))
    spec = SubproblemSpec(ds, ErmParams(C=1e-12, rho=mu, n_nodes=1), np.zeros(2), a[None, :], eta)
    f = solve_subproblem(spec, np.zeros(2))
    assert np.allclose(f, 2 * eta * a / (mu + 2 * eta), atol=1e-6)


def test_one_sample_grid_search():
    x, y = 0.8, -1.0
    params = ErmParams(C=1.0, rho=0.3, n_nodes=1)
    anchor, lin, eta = 1.2, 0.4, 0.25
    spec = SubproblemSpec(LocalDataset(np.array([[x]]), np.array([y])), params, np.array([lin]), np.array([[anchor]]), eta)
    f = solve_subproblem(spec, np.array([0.0]))[0]
    grid = np.arange(-5.0, 5.0 + 1e-12, 1e-4)
    obj = logistic_loss(y * x * grid) + 0.5 * 0.3 * grid**2 + lin * grid + eta * (anchor - grid) ** 2
    assert abs(f - grid[np.argmin(obj)]) <= 2e-4


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 4), st.floats(0.01, 10))
def test_kkt_residual_and_warm_start(seed, v, eta):
    spec = random_spec(seed, v=v, eta=eta)
    rng = np.random.default_rng(seed + 1)
    w1, w2 = rng.standard_normal((2, 3)) * 4
    f1 = solve_subproblem(spec, w1)
    f2 = solve_subproblem(spec, w2)
    assert kkt_residual(f1, spec) <= spec.tol
    assert np.linalg.norm(f1 - f2) <= 10 * spec.tol
    assert subproblem_value(f1, spec) <= subproblem_value(w1, spec) + 1e-12


def test_kkt_residual_definition():
    spec = random_spec(3)
    f = np.array([0.1, 0.2, -0.3])
    g = local_gradient(f, spec.dataset, spec.params) + spec.linear_term + spec.eta * (2 * f - 2 * spec.anchors).sum(axis=0)
    assert kkt_residual(f, spec) == pytest.approx(np.linalg.norm(g), rel=1e-13)


def test_max_iter_exceeded():
    spec = random_spec(4, tol=1e-300)
    spec = SubproblemSpec(spec.dataset, spec.params, spec.linear_term, spec.anchors, spec.eta, tol=1e-300, max_iter=1)
    with pytest.raises(InnerSolverError):
        solve_subproblem(spec, np.full(3, 50.0))


def test_spec_validation():
    spec = random_spec(5)
    with pytest.raises(ValueError):
        SubproblemSpec(spec.dataset, spec.params, spec.linear_term, spec.anchors, eta=0.0)
    with pytest.raises(ValueError):
        SubproblemSpec(spec.dataset, spec.params, np.zeros(2), spec.anchors, eta=1.0)
