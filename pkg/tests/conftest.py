import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from cskl.kernels import GramMatrix, build_bank

settings.register_profile(
    "cskl",
    deadline=None,
    derandomize=True,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("cskl")


def random_psd(rng, m, rank=None):
    """Random PSD matrix of size m with entries O(1)."""
    rank = rank or m
    x = rng.normal(size=(m, rank))
    return x @ x.T / rank


def random_gram(rng, m, rank=None):
    return GramMatrix(random_psd(rng, m, rank))


def random_labels(rng, m):
    """Random binary labels with both classes present."""
    y = rng.choice((-1, 1), size=m)
    if np.all(y == y[0]):
        y[0] = -y[0]
    return y.astype(np.int64)


def random_bank(rng, n_kernels, m, jitter_scale=1e-8):
    """Normalized, stabilized bank of random PSD kernels with a planted
    label-aligned kernel so training problems are non-degenerate."""
    y = random_labels(rng, m)
    grams = []
    for j in range(n_kernels):
        base = random_psd(rng, m)
        if j == 0:
            base = base + 0.5 * np.outer(y, y).astype(np.float64)
        grams.append(GramMatrix(base))
    return build_bank(grams, y, jitter_scale=jitter_scale)


def feasible_capped(rng, n, t):
    """Random feasible point on {sum = t, 0 <= g <= 1} by water-filling."""
    g = rng.uniform(0.0, 1.0, size=n)
    g = g * (t / g.sum())
    for _ in range(n):
        over = g > 1.0
        if not np.any(over):
            break
        excess = float(np.sum(g[over] - 1.0))
        g[over] = 1.0
        room = ~over & (g > 0)
        if not np.any(room):
            break
        g[room] += excess * g[room] / g[room].sum()
    return np.clip(g, 0.0, 1.0)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
