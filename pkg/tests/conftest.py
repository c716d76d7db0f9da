import numpy as np
import pytest

from movilab.mdp import FiniteMdp


def random_mdp(n_states, n_actions, gamma=0.9, seed=0, sparse=False):
    rng = np.random.default_rng(seed)
    P = rng.random((n_states, n_actions, n_states))
    if sparse:
        P[P < 0.6] = 0.0
        P[:, :, 0] += 1e-3
    P /= P.sum(axis=2, keepdims=True)
    r = rng.uniform(-1, 1, size=(n_states, n_actions))
    return FiniteMdp(P, r, gamma)


def one_state_mdp(rewards, gamma):
    rewards = np.atleast_1d(np.asarray(rewards, dtype=float))
    P = np.ones((1, rewards.size, 1))
    return FiniteMdp(P, rewards[None, :], gamma)


def chain_mdp(gamma=0.9):
    """s0 -> s1 -> s1, deterministic, two actions with the same kernel."""
    P = np.zeros((2, 2, 2))
    P[0, :, 1] = 1.0
    P[1, :, 1] = 1.0
    return FiniteMdp(P, np.zeros((2, 2)), gamma)


# Filled by the acceptance suite; echoed at the end of the session.
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda l: int(l.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)


@pytest.fixture
def mdp():
    return random_mdp(5, 3, seed=11)
