import numpy as np
import pytest

from panelmix import ActorMeta, BlockPartition, Panel
from panelmix.panel import quarter_range


def make_panel(values, start="2005Q1", layers=None, sectors=None, ids=None):
    values = np.asarray(values, dtype=float)
    n, t = values.shape
    ids = ids or [f"a{i:03d}" for i in range(n)]
    layers = layers or ["firm"] * n
    sectors = sectors or ["core"] * n
    registry = [ActorMeta(i, l, s) for i, l, s in zip(ids, layers, sectors)]
    return Panel(values, quarter_range(start, t), registry)


def ar1_panel(seed, n, t, rho, noise=1.0, mu_sd=1.0, start="2005Q1"):
    rng = np.random.default_rng(seed)
    mu = rng.normal(0, mu_sd, n)
    x = np.empty((n, t))
    x[:, 0] = rng.normal(0, noise / np.sqrt(1 - rho**2) if rho else noise, n)
    for s in range(1, t):
        x[:, s] = rho * x[:, s - 1] + rng.normal(0, noise, n)
    return make_panel(mu[:, None] + x, start=start)


def sized_partition(panel, sizes, local_flags=None):
    """Cut the panel's actors, in row order, into consecutively sized blocks."""
    names = [f"b{i}" for i in range(len(sizes))]
    if local_flags is None:
        local_flags = [True] * (len(sizes) - 1) + [False]
    assignment, row = {}, 0
    for name, size in zip(names, sizes):
        for a in panel.actor_ids[row : row + size]:
            assignment[a] = name
        row += size
    assert row == panel.n_actors
    local = frozenset(n for n, f in zip(names, local_flags) if f)
    remainder = next(n for n, f in zip(names, local_flags) if not f)
    return BlockPartition(assignment, local, remainder)


@pytest.fixture(scope="session")
def rng():
    return np.random.default_rng(20240817)
