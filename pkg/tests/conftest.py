import numpy as np
import pytest


def central_diff(f, x, h=1e-5):
    """Central finite differences of scalar f at x, elementwise (float64)."""
    x = np.asarray(x, dtype=np.float64)
    grad = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        bump = np.zeros_like(flat)
        bump[i] = h
        gflat[i] = (f((flat + bump).reshape(x.shape)) - f((flat - bump).reshape(x.shape))) / (2 * h)
    return grad


def rel_err(got, want):
    """Max absolute difference scaled by the oracle's max magnitude."""
    got = np.asarray(got, dtype=np.float64)
    want = np.asarray(want, dtype=np.float64)
    scale = max(np.abs(want).max(), 1e-12)
    return np.abs(got - want).max() / scale


@pytest.fixture
def rng():
    return np.random.default_rng(0)
