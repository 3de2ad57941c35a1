import numpy as np
import pytest


@pytest.fixture
def rng():
    return np.random.default_rng(20240811)


def make_records(n, seed=0, d=2):
    """Arbitrary well-formed records for plumbing tests."""
    from incps import PointRecord

    g = np.random.default_rng(seed)
    X = g.standard_normal((n, d))
    a = g.integers(0, 2, n)
    y = g.standard_normal(n) + a
    return [PointRecord(x=X[i], a=int(a[i]), y=float(y[i])) for i in range(n)]
