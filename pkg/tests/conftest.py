import numpy as np
import pytest

from ksme import mdp as mdp_lib


def chain_of(mdp, policy=None):
    policy = policy or mdp_lib.Policy.uniform(mdp.n_states, mdp.n_actions)
    return mdp_lib.induce_chain(mdp, policy)


@pytest.fixture
def self_loop():
    """Two absorbing states with rewards 0 and 1."""
    return mdp_lib.Mdp(np.array([[[1.0, 0.0]], [[0.0, 1.0]]]),
                       np.array([[0.0], [1.0]]), 0.9)


@pytest.fixture
def uniform_jump():
    """Both states jump uniformly over {0, 1}; rewards 0 and 1."""
    return mdp_lib.Mdp(np.full((2, 1, 2), 0.5), np.array([[0.0], [1.0]]), 0.9)


@pytest.fixture
def identical_states():
    t = np.full((3, 2, 3), 1.0 / 3.0)
    return mdp_lib.Mdp(t, np.full((3, 2), 0.7), 0.9)


@pytest.fixture
def four_state():
    """x0 -> half x2, half x3; x1 -> x2; x2, x3 absorbing; reward 1 at x3."""
    p = np.array([[0, 0, .5, .5], [0, 0, 1, 0], [0, 0, 1, 0], [0, 0, 0, 1.]])
    return mdp_lib.Mdp(p[:, None, :], np.array([[0.], [0.], [0.], [1.]]), 0.9)


def line_cost(n):
    x = np.arange(n, dtype=float)
    return np.abs(x[:, None] - x[None, :])


def cdf_distance(mu, nu):
    """W1 on the integer line as the L1 gap between CDFs."""
    return float(np.sum(np.abs(np.cumsum(mu) - np.cumsum(nu))[:-1]))


def garnet(n, k=2, b=3, sigma=0.5, seed=0, gamma=0.9):
    return mdp_lib.generate_garnet(
        mdp_lib.GarnetConfig(n, k, min(b, n), sigma, seed, gamma))


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES,
                           key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
