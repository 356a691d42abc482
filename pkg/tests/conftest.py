import numpy as np
import pytest

from ctlab._rng import stream


@pytest.fixture
def rng(request):
    # one reproducible stream per test
    return stream(20240601, "tests", request.node.name)


def sup_distance(a, b):
    a, b = np.sort(a), np.sort(b)
    grid = np.concatenate([a, b])
    return float(np.max(np.abs(np.searchsorted(a, grid, "right") / a.size - np.searchsorted(b, grid, "right") / b.size)))
