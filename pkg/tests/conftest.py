import numpy as np
import pytest

from biloop import make_hyper_representation, make_lower_bound_instance, make_quadratic, make_random_quadratic


@pytest.fixture
def lower_bound():
    return make_lower_bound_instance(2.0, 1.0, 1.0)


@pytest.fixture(scope="session")
def quad10():
    return make_random_quadratic(5, 5, 10, seed=3)


@pytest.fixture(scope="session")
def hyper_rep():
    return make_hyper_representation((6, 3, 40, 40), gamma=0.5, seed=2)


def diag_quadratic(h=(2.0, 1.0), d=(0.0, 0.0)):
    """H = diag(h), B = A = I, c = 0."""
    q = len(h)
    return make_quadratic(np.diag(h), np.eye(q), np.zeros(q), np.eye(q), np.asarray(d, float))
