import itertools

import pytest

from sensoropt.model import PairReturnTable
from sensoropt.simenv import named_fixture


@pytest.fixture(scope="session")
def demo():
    """The built-in five-sensor proof-of-concept instance and model."""
    return named_fixture("table1")


@pytest.fixture(scope="session")
def demo_table(demo):
    _, model = demo
    returns = {
        (i, j): model.stored_return(i, j)
        for i in range(model.n)
        for j in range(i, model.n)
    }
    return PairReturnTable(n=model.n, r0=model.r0, returns=returns)


def mask_probability(mask, d):
    """Independent brute-force probability of a dropout mask."""
    prob = 1.0
    for i in range(len(d)):
        prob *= d[i] if i in mask else 1.0 - d[i]
    return prob


def masks_up_to(n, size):
    """All dropout subsets of at most the given size."""
    for k in range(size + 1):
        yield from (set(c) for c in itertools.combinations(range(n), k))
