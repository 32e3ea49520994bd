import itertools

import numpy as np
import pytest

from netfp.experiments import load_reference_scenario


def brute_expected_utility(utilities, i, sigma):
    """Sum over every joint action of u_i(a) * prod_j sigma_j(a_j)."""
    total = 0.0
    for a in itertools.product(*(range(len(s)) for s in sigma)):
        p = 1.0
        for j, a_j in enumerate(a):
            p *= sigma[j][a_j]
        total += utilities[(i,) + a] * p
    return total


def brute_is_nash(game, a):
    for i in range(game.n):
        here = game.payoff(i, a)
        for b in range(game.action_counts[i]):
            dev = list(a)
            dev[i] = b
            if game.payoff(i, tuple(dev)) > here + 1e-12:
                return False
    return True


@pytest.fixture(scope="session")
def reference():
    return load_reference_scenario()


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
