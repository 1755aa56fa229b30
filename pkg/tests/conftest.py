import numpy as np
import pytest

from sworgrad import from_logits


def random_dist(gen, n, scale=1.0):
    return from_logits(gen.normal(0.0, scale, n))


def random_instances(seed, count, n_choices=(3, 4, 5), k_choices=(2, 3)):
    """Seeded (dist, f, k) triples with k <= n, reused across suites."""
    gen = np.random.default_rng(seed)
    out = []
    for _ in range(count):
        n = int(gen.choice(n_choices))
        k = min(int(gen.choice(k_choices)), n)
        out.append((random_dist(gen, n), gen.normal(0.0, 1.0, n), k))
    return out


@pytest.fixture(scope="session")
def running_dist():
    from sworgrad import from_probs

    return from_probs([0.5, 0.3, 0.2])


@pytest.fixture(scope="session")
def running_f():
    return np.array([1.0, 2.0, 3.0])
