"""Assignment-class probabilities and the GWSQ(d) dispatcher."""

from __future__ import annotations

import numpy as np

from ..core_model import SystemParams, gbinom, gwqd, largest_remainder
from .levels import LevelIndex


def assignment_class_pmf(dist, pool_size: float, d: int) -> np.ndarray:
    """Probability that a JSQ(d) draw from a pool lands in class ``(m, l)``.

    ``dist[m, l]`` is the class pmf of the pool and ``pool_size`` its size
    ``S``; ``d`` slots are drawn without replacement, the lowest level present
    wins and ties across types are split in proportion to their draw counts.
    Binomials of non-integer pool counts use the generalized form. For integer
    class counts the result sums to 1.
    """
    x = np.atleast_2d(np.asarray(dist, dtype=float))
    S = float(pool_size)
    if S < d:
        raise ValueError(f"pool of size {S} cannot supply {d} distinct samples")
    X = S * x                                    # class counts
    col = X.sum(axis=0)                          # per-level counts
    others = col[None, :] - X
    above = np.concatenate([np.cumsum(col[::-1])[::-1][1:], [0.0]])
    out = np.zeros_like(X)
    for r in range(1, d + 1):
        rest = gbinom(above, d - r)[None, :]
        for r1 in range(1, r + 1):
            out += (r1 / r) * gbinom(X, r1) * gbinom(others, r - r1) * rest
    return out / gbinom(S, d)


def pseudo_pool(x: np.ndarray, N: int) -> np.ndarray:
    """Integer class sizes summing to ``N`` by largest remainder on ``N * x``."""
    return largest_remainder(N, x.ravel()).reshape(x.shape)


def gwsq_d_assign(state, params: SystemParams, k: int, index: LevelIndex = None):
    """GWSQ(d) target for a type-k arrival.

    Samples ``d`` pseudo-servers without replacement from an ``N``-slot pool
    built from the global weighted distribution, takes the lowest sampled
    level ``l*`` and a type with probability proportional to its count at
    ``l*``, then returns ``((m, l), server)`` with a uniform real server of
    that class. If the class is empty (a rounding artifact) the nearest
    occupied lower level of the same type is used and ``state.fallbacks``
    is incremented.
    """
    if index is None:
        index = state.level_index()
    N = len(state.queue_len)
    if params.d > N:
        raise ValueError("d exceeds the number of servers")
    q = state.occupancy(len(max(state.counts, key=len)))
    pool = pseudo_pool(gwqd(q, k, params), N)
    bounds = np.cumsum(pool.ravel())
    rng = state.rng
    drawn = np.searchsorted(bounds, rng.sample(range(N), params.d), side="right")
    L1 = pool.shape[1]
    levels = drawn % L1
    l_star = int(levels.min())
    types = (drawn // L1)[levels == l_star]
    m = int(types[rng.randrange(len(types))])   # proportional to Y_{m, l*}
    l = l_star
    if index.size(m, l) == 0:
        state.fallbacks += 1
        lower = [lv for lv in range(l - 1, -1, -1) if index.size(m, lv)]
        if not lower:
            lower = [lv for lv in range(l + 1, len(index.buckets[m])) if index.size(m, lv)]
        l = lower[0]
    return (m, l), index.pick(m, l, rng.random())
