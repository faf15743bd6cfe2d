import math

import numpy as np
import pytest
from hypothesis import settings

settings.register_profile("default", deadline=None, max_examples=60)
settings.load_profile("default")


def loop_forward(values, topo, x):
    """Neuron-by-neuron evaluation straight from the flat layout, as an oracle."""
    x = np.asarray(x, float).ravel()
    total = 0.0
    for k in range(topo.K):
        prev = list(x)
        for l in range(topo.L):
            cur = []
            for i in range(topo.r):
                z = values[topo.index(k, l, i, 0)]
                for j, h in enumerate(prev):
                    z += values[topo.index(k, l, i, j + 1)] * h
                cur.append(1.0 / (1.0 + math.exp(-z)))
            prev = cur
        total += values[topo.index(k, topo.L, 0, 0)] * prev[0]
    return total


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
