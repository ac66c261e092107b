import numpy as np
import pytest
from scipy import optimize

from radmm.dataset import LocalDataset
from radmm.engine import (
    NodeState,
    RunAborted,
    Schedule,
    StepConditionError,
    even_update,
    initial_states,
    odd_update,
    recycled_grad_from_kkt,
    run,
)
from radmm.objective import ErmParams, centralized_solve, local_gradient
from radmm.topology import build_graph, complete_graph


def test_consensus_keeps_duals_at_zero(small_problem):
    graph, shards, params = small_problem
    # identical data, starts and degrees: every node solves the same problem
    same = [LocalDataset(shards[0].features, shards[0].labels, node_id=i) for i in range(5)]
    states = [NodeState.initial(np.full(5, 0.3)) for _ in range(5)]
    out = odd_update(states, complete_graph(5), same, params, eta=0.5)
    for s in out:
        assert np.abs(s.lam).max() == 0.0
        assert np.array_equal(s.f, out[0].f)


def test_zero_caches_leave_f_unchanged(small_problem):
    graph, _, _ = small_problem
    states = initial_states(5, 5, seed=0)
    out = even_update(states, graph, eta=0.5, gamma=1.0)
    for a, b in zip(states, out):
        assert np.array_equal(a.f, b.f)


def test_huge_gamma_freezes_even_step(small_problem):
    graph, shards, params = small_problem
    states = odd_update(initial_states(5, 5, seed=1), graph, shards, params, 0.5)
    out = even_update(states, graph, 0.5, 1e12)
    assert max(np.linalg.norm(a.f - b.f) for a, b in zip(states, out)) <= 1e-9


def test_recycled_gradient_matches_fresh(small_problem):
    graph, shards, params = small_problem
    states = initial_states(5, 5, seed=2)
    for k in range(5):
        states = odd_update(states, graph, shards, params, 0.5, inner_tol=1e-10)
        for i, s in enumerate(states):
            fresh = local_gradient(s.f, shards[i], params)
            assert np.abs(s.recycled_grad - fresh).max() <= 10 * 1e-10
        states = even_update(states, graph, 0.5, 1.0)


def test_recycled_gradient_with_noise(small_problem):
    graph, shards, params = small_problem
    rng = np.random.default_rng(0)
    noise = [rng.standard_normal(5) for _ in range(5)]
    states = odd_update(initial_states(5, 5, seed=3), graph, shards, params, 0.5, noise=noise, inner_tol=1e-10)
    for i, s in enumerate(states):
        assert np.abs(s.recycled_grad - (noise[i] + local_gradient(s.f, shards[i], params))).max() <= 1e-9


def test_even_step_matches_direct_formula(small_problem):
    graph, shards, params = small_problem
    eta, gamma = 0.5, 2.0
    states = initial_states(5, 5, seed=4)
    states = even_update(odd_update(states, graph, shards, params, eta), graph, eta, gamma)
    before = odd_update(states, graph, shards, params, eta)
    after = even_update(before, graph, eta, gamma)
    lam_prev = [s.lam for s in states]
    for i in range(5):
        # direct evaluation: fresh gradient, duals before and after the odd step
        v = graph.degrees[i]
        grad = local_gradient(before[i].f, shards[i], params)
        lam_new = before[i].lam
        direct = before[i].f - (grad + 2 * lam_new + 2 * (lam_new - lam_prev[i])) / (2 * eta * v + gamma)
        assert np.abs(after[i].f - direct).max() <= 1e-6


def test_kkt_recovery_formula():
    lam = np.array([0.1, -0.2])
    f_new, f_prev = np.array([1.0, 2.0]), np.array([0.5, 0.5])
    nbrs = np.array([[0.0, 1.0], [2.0, -1.0]])
    got = recycled_grad_from_kkt(lam, f_new, f_prev, nbrs, eta=0.3)
    expected = -2 * lam - 0.3 * ((2 * f_new - f_prev - nbrs[0]) + (2 * f_new - f_prev - nbrs[1]))
    assert np.allclose(got, expected, atol=1e-15)


def test_one_round_scripted_oracle():
    # two nodes, one sample each, d = 1
    g = build_graph(2, [(0, 1)])
    x = [0.6, -0.9]
    y = [1.0, 1.0]
    shards = [LocalDataset(np.array([[x[i]]]), np.array([y[i]]), node_id=i) for i in range(2)]
    params = ErmParams(C=1.0, rho=0.5, n_nodes=2)
    eta, gamma = 0.7, 1.5
    f0 = [0.2, -0.4]
    states = [NodeState.initial(np.array([v])) for v in f0]

    def grad_o(i, f):
        z = y[i] * x[i] * f
        return -y[i] * x[i] / (1 + np.exp(z)) + 0.25 * f

    f1 = []
    for i, j in ((0, 1), (1, 0)):
        anchor = 0.5 * (f0[i] + f0[j])
        f1.append(optimize.brentq(lambda f: grad_o(i, f) + 2 * eta * (f - anchor), -50, 50, xtol=1e-14))
    lam1 = [0.5 * eta * (f1[0] - f1[1]), 0.5 * eta * (f1[1] - f1[0])]
    f2 = [f1[i] - (grad_o(i, f1[i]) + 2 * lam1[i] + 2 * lam1[i]) / (2 * eta + gamma) for i in range(2)]

    odd = odd_update(states, g, shards, params, eta)
    even = even_update(odd, g, eta, gamma)
    for i in range(2):
        assert abs(odd[i].f[0] - f1[i]) <= 1e-6
        assert abs(odd[i].lam[0] - lam1[i]) <= 1e-6
        assert abs(even[i].f[0] - f2[i]) <= 1e-6


def test_fixed_point_at_centralized_optimum(small_problem):
    graph, shards, params = small_problem
    f_star = centralized_solve(shards, params, tol=1e-12)
    states = []
    for i in range(5):
        lam = -0.5 * local_gradient(f_star, shards[i], params)
        states.append(NodeState(f_star, lam, np.zeros(5), np.zeros(5), f_star, np.zeros(5)))
    assert np.linalg.norm(np.sum([s.lam for s in states], axis=0)) <= 1e-9
    odd = odd_update(states, graph, shards, params, 0.5)
    even = even_update(odd, graph, 0.5, 1.0)
    for s in odd + even:
        assert np.linalg.norm(s.f - f_star) <= 1e-6
    assert np.linalg.norm(np.sum([s.lam for s in even], axis=0)) <= 1e-9


def test_k2_runs():
    g = build_graph(2, [(0, 1)])
    rng = np.random.default_rng(0)
    x = rng.uniform(-0.7, 0.7, size=(6, 2))
    y = np.array([1.0, -1, 1, -1, 1, -1])
    shards = [LocalDataset(x[:3], y[:3], node_id=0), LocalDataset(x[3:], y[3:], node_id=1)]
    res = run(g, shards, ErmParams(1.0, 1.0, 2), Schedule(0.5, 1.0), K=3)
    assert [m.t for m in res.metrics] == list(range(1, 7))


@pytest.mark.parametrize("algorithm", ["radmm", "conventional", "private_radmm"])
def test_duals_sum_to_zero(small_problem, algorithm):
    graph, shards, params = small_problem
    res = run(graph, shards, params, Schedule(0.5, 1.0, alpha=2.0), K=15, algorithm=algorithm, seed=1)
    assert max(m.dual_sum_norm for m in res.metrics) <= 1e-9


def test_run_metrics_and_privacy(small_problem):
    graph, shards, params = small_problem
    res = run(graph, shards, params, Schedule(0.5, 1.0, alpha=2.0), K=4, algorithm="private_radmm", seed=2)
    p = [m.privacy_bound_running for m in res.metrics]
    assert p[1::2] == p[0::2]
    assert all(b > a for a, b in zip(p[1::2], p[2::2]))
    nonpriv = run(graph, shards, params, Schedule(0.5, 1.0), K=2)
    assert all(np.isinf(m.privacy_bound_running) for m in nonpriv.metrics)
    assert np.isinf(nonpriv.privacy_total)


def test_run_deterministic_and_worker_independent(small_problem):
    graph, shards, params = small_problem
    sched = Schedule(0.5, 1.0, alpha=2.0)
    a = run(graph, shards, params, sched, K=5, algorithm="private_radmm", seed=9, workers=1)
    b = run(graph, shards, params, sched, K=5, algorithm="private_radmm", seed=9, workers=4)
    assert np.array_equal(a.loss_trace, b.loss_trace)
    assert np.array_equal(a.primals, b.primals)


def test_private_step_condition_refused_before_compute():
    g = complete_graph(3)
    rng = np.random.default_rng(0)
    shards = [LocalDataset(rng.uniform(-0.5, 0.5, (2, 2)), np.array([1.0, -1.0]), node_id=i) for i in range(3)]
    params = ErmParams(C=2.0, rho=0.01, n_nodes=3)
    with pytest.raises(StepConditionError):
        run(g, shards, params, Schedule(1e-3, 1.0, alpha=1.0), K=3, algorithm="private_radmm")


def test_solver_failure_returns_partial(small_problem):
    graph, shards, params = small_problem
    with pytest.raises(RunAborted) as info:
        run(graph, shards, params, Schedule(0.5, 1.0), K=3, inner_tol=1e-300, max_iter=1)
    assert info.value.partial.metrics == []


def test_schedules_are_evaluated_per_half_iteration(small_problem):
    from radmm.engine import Exponential

    graph, shards, params = small_problem
    sched = Schedule(Exponential(1.1, 0.5), Exponential(1.05, 0.2))
    res = run(graph, shards, params, sched, K=3)
    assert [m.eta_t for m in res.metrics] == [0.5 * 1.1**t for t in range(1, 7)]
    assert not sched.is_fixed
