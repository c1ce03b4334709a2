import numpy as np
import pytest


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def gapped_features(rng, d, n, gap=0.1, tries=200):
    """Random d x n features whose covariance has eigen-gap >= gap at every index < rank."""
    from drmea.numerics import covariance, sym_eig

    for _ in range(tries):
        H = rng.standard_normal((d, n)) * np.linspace(2.0, 0.5, d)[:, None]
        lam = sym_eig(covariance(H)).values
        r = min(d, n - 1)
        if np.all(-np.diff(lam[: r + (1 if r < d else 0)]) >= gap):
            return H
    raise RuntimeError("could not draw a gapped instance")
