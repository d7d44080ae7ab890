"""Independent reference computations shared by the unit and acceptance tests."""

import numpy as np

from dpus.qnet import BlockParams, forward


def per_head_loss(params, X, actions, targets):
    heads = forward(params, X)
    rows = np.arange(len(X))
    q = np.stack([h[rows, actions[:, r]] for r, h in enumerate(heads)], axis=1)
    return float(np.mean(np.sum((targets - q) ** 2, axis=1)))


def numeric_gradient(params: BlockParams, X, actions, targets, h=1e-5):
    """Central differences of :func:`per_head_loss`, entry by entry."""
    grad = params.zeros_like()
    pairs = list(zip(params.flat_arrays(), grad.flat_arrays()))
    for p, g in pairs:
        for idx in np.ndindex(p.shape):
            old = p[idx]
            p[idx] = old + h
            up = per_head_loss(params, X, actions, targets)
            p[idx] = old - h
            down = per_head_loss(params, X, actions, targets)
            p[idx] = old
            g[idx] = (up - down) / (2 * h)
    return grad


def max_relative_error(analytic: BlockParams, numeric: BlockParams, floor=1e-6) -> float:
    worst = 0.0
    for a, n in zip(analytic.flat_arrays(), numeric.flat_arrays()):
        denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
        worst = max(worst, float(np.max(np.abs(a - n) / denom)))
    return worst


def random_block_net(rng, n_agents=None):
    n = n_agents or int(rng.integers(1, 3))
    obs = [int(rng.integers(2, 6)) for _ in range(n)]
    hidden = [int(rng.integers(2, 5)) for _ in range(int(rng.integers(1, 3)))]
    sizes = [tuple(obs)] + [(w,) * n for w in hidden] + [(3,) * n]
    params = BlockParams.initialize(sizes, int(rng.integers(1 << 30)))
    for arr in params.flat_arrays():
        arr += rng.normal(0.0, 0.1, arr.shape)  # non-zero biases too
    B = int(rng.integers(1, 6))
    X = rng.normal(size=(B, sum(obs)))
    actions = rng.integers(0, 3, size=(B, n))
    targets = rng.normal(size=(B, n))
    return params, X, actions, targets
