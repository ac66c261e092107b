import numpy as np
import pytest

from radmm.dataset import partition, synthesize
from radmm.objective import ErmParams
from radmm.topology import random_connected_graph


@pytest.fixture
def small_problem():
    """Five-node non-bipartite random graph with 50 synthetic samples per node."""
    graph = random_connected_graph(5, 0.5, seed=3)
    shards = partition(synthesize(250, 5, 1.0, seed=11), graph, "even_shuffle", seed=0)
    params = ErmParams(C=1.0, rho=1.0, n_nodes=5)
    return graph, shards, params


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    from test_acceptance import VERDICTS

    if VERDICTS:
        terminalreporter.section("acceptance criteria")
        for n in sorted(VERDICTS):
            terminalreporter.write_line(VERDICTS[n])
