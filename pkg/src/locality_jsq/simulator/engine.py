"""Event-driven simulation of local JSQ(d)."""

from __future__ import annotations

import heapq
import random
import warnings
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy import stats

from ..core_model import DEFAULT_L_MAX, OccupancyVector, SystemParams, largest_remainder
from ..graph import CompatibilityGraph
from ..stability import subcritical_check
from ..trajectory import Trajectory
from .levels import LevelIndex


@dataclass
class SimState:
    """Mutable simulation state: queue lengths, clock, RNG and counters.

    ``counts[m][l]`` is the number of type-m servers holding exactly ``l`` tasks
    (grown on demand).
    """

    queue_len: list
    server_type: list
    M: int
    rng: random.Random
    time: float = 0.0
    arrivals: int = 0
    departures: int = 0
    dropped: int = 0
    mismatches: int = 0
    fallbacks: int = 0
    counts: list = field(default_factory=list)
    index: Optional[LevelIndex] = None

    @classmethod
    def create(cls, graph: CompatibilityGraph, seed: int, queue_len=None) -> "SimState":
        x = [0] * graph.N if queue_len is None else [int(v) for v in queue_len]
        if len(x) != graph.N or min(x, default=0) < 0:
            raise ValueError("initial queue vector must be nonnegative with length N")
        st = graph.server_type.tolist()
        state = cls(x, st, graph.M, random.Random(seed))
        top = max(x, default=0) + 2
        state.counts = [[0] * top for _ in range(graph.M)]
        for j, l in enumerate(x):
            state.counts[st[j]][l] += 1
        return state

    def move(self, j: int, delta: int) -> None:
        m = self.server_type[j]
        old = self.queue_len[j]
        new = old + delta
        row = self.counts[m]
        if new >= len(row):
            row.extend([0] * (new - len(row) + 2))
        row[old] -= 1
        row[new] += 1
        self.queue_len[j] = new
        if self.index is not None:
            self.index.move(j, m, old, new)

    def level_index(self) -> LevelIndex:
        if self.index is None:
            self.index = LevelIndex(self.queue_len, self.server_type, self.M)
        return self.index

    def occupancy(self, L_max: int, sizes: Optional[Sequence[int]] = None) -> np.ndarray:
        """Tail fractions from the exact-level counts, clipped at ``L_max``."""
        q = np.zeros((self.M, L_max + 1))
        for m, row in enumerate(self.counts):
            tails = np.cumsum(np.asarray(row[::-1], dtype=float))[::-1]
            n = min(len(tails), L_max + 1)
            q[m, :n] = tails[:n]
        total = q[:, 0].copy() if sizes is None else np.asarray(sizes, dtype=float)
        total[total == 0] = 1.0
        q /= total[:, None]
        q[:, 0] = 1.0
        return q


def jsq_d_assign(state: SimState, graph: CompatibilityGraph, params: SystemParams,
                 i: int) -> Optional[int]:
    """Target server of an arrival at dispatcher ``i`` under local JSQ(d).

    Samples ``d`` distinct neighbors and returns the first shortest queue in
    sample order, which is uniform among tied minimizers. With fewer than ``d``
    neighbors a uniform neighbor is returned; with none the task is dropped
    (``None``) and counted in ``state.dropped``.
    """
    nbrs = graph.adjacency_lists[i]
    deg = len(nbrs)
    if deg == 0:
        state.dropped += 1
        return None
    rng = state.rng
    if deg < params.d:
        return nbrs[rng.randrange(deg)]
    x = state.queue_len
    best = -1
    best_len = None
    for j in rng.sample(nbrs, params.d):
        if best_len is None or x[j] < best_len:
            best, best_len = j, x[j]
    return best


def initial_from_pmf(graph: CompatibilityGraph, pmf) -> list[int]:
    """Deterministic queue vector whose per-type histogram rounds ``pmf`` rows.

    Row ``m`` of ``pmf`` is a distribution over lengths ``0, 1, ...``; the
    type-m servers receive those lengths in blocks sized by largest remainder.
    """
    pmf = np.atleast_2d(np.asarray(pmf, dtype=float))
    x = np.zeros(graph.N, dtype=np.int64)
    for m in range(graph.M):
        ids = np.flatnonzero(graph.server_type == m)
        sizes = largest_remainder(len(ids), pmf[m])
        x[ids] = np.repeat(np.arange(pmf.shape[1]), sizes)
    return x.tolist()


def run_jsq_d(graph: CompatibilityGraph, params: SystemParams, horizon: float,
              snapshot_dt: float, seed: int, queue_len=None,
              L_max: int = DEFAULT_L_MAX) -> Trajectory:
    """Simulate local JSQ(d) on ``graph`` up to ``horizon``.

    Every dispatcher carries a Poisson(lam) arrival clock and every busy
    type-m server an Exp(u_m) completion clock, all in one heap. Snapshots are
    the occupancy just before each multiple of ``snapshot_dt`` in
    ``[0, horizon]``.
    """
    if horizon <= 0 or snapshot_dt <= 0:
        raise ValueError("horizon and snapshot_dt must be positive")
    state = SimState.create(graph, seed, queue_len)
    rng = state.rng
    W = graph.W
    lam = params.lam
    u_srv = params.u[graph.server_type].tolist()
    sizes = graph.server_counts()
    x = state.queue_len
    init_total = sum(x)

    heap = []
    if lam > 0:
        heap = [(rng.expovariate(lam), i) for i in range(W)]
    for j in range(graph.N):
        if x[j] > 0 and u_srv[j] > 0:
            heap.append((rng.expovariate(u_srv[j]), W + j))
    heapq.heapify(heap)

    n_snap = int(np.floor(horizon / snapshot_dt + 1e-9)) + 1
    snap_times = np.arange(n_snap) * snapshot_dt
    snaps = np.empty((n_snap, graph.M, L_max + 1))
    si = 0

    while heap:
        t, code = heap[0]
        while si < n_snap and snap_times[si] <= t:
            snaps[si] = state.occupancy(L_max, sizes)
            si += 1
        if t > horizon:
            break
        heapq.heappop(heap)
        state.time = t
        if code < W:
            state.arrivals += 1
            j = jsq_d_assign(state, graph, params, code)
            if j is not None:
                state.move(j, 1)
                if x[j] == 1 and u_srv[j] > 0:
                    heapq.heappush(heap, (t + rng.expovariate(u_srv[j]), W + j))
            heapq.heappush(heap, (t + rng.expovariate(lam), code))
        else:
            j = code - W
            state.departures += 1
            state.move(j, -1)
            if x[j] > 0:
                heapq.heappush(heap, (t + rng.expovariate(u_srv[j]), code))
    while si < n_snap:
        snaps[si] = state.occupancy(L_max, sizes)
        si += 1
    state.time = horizon
    assert state.departures <= state.arrivals - state.dropped + init_total

    meta = {
        "N": graph.N, "seed": seed, "policy": f"jsq({params.d})",
        "params_hash": params.digest(),
        "arrivals": state.arrivals, "departures": state.departures,
        "dropped": state.dropped, "initial_total": init_total,
        "final_queue_len": list(x),
    }
    if state.dropped:
        warnings.warn(f"{state.dropped} tasks dropped at dispatchers with no neighbors",
                      RuntimeWarning, stacklevel=2)
    return Trajectory(snap_times, snaps, meta)


@dataclass
class SteadyStateEstimate:
    occupancy: OccupancyVector
    half_width: np.ndarray
    tail_sums: np.ndarray
    geometric_reference: np.ndarray
    rho: float


def steady_state_estimate(graph: CompatibilityGraph, params: SystemParams, warmup: float,
                          window: float, seed: int, n_batches: int = 20,
                          samples_per_batch: int = 50, L_max: int = 32,
                          confidence: float = 0.95) -> SteadyStateEstimate:
    """Time-averaged occupancy over ``[warmup, warmup + window]`` from an empty start.

    Half-widths use batch means with a Student-t quantile. ``tail_sums[m, l]``
    is ``sum_{l' >= l} qbar[m, l']`` and ``geometric_reference[l]`` is
    ``((1 + rho) / 2) ** l`` with ``rho`` the largest subcritical load.
    """
    loads, ok = subcritical_check(params)
    if not ok:
        warnings.warn("parameters are not subcritical; averages may not settle",
                      RuntimeWarning, stacklevel=2)
    n = n_batches * samples_per_batch
    dt = window / n
    traj = run_jsq_d(graph, params, warmup + window, dt, seed, L_max=L_max)
    keep = traj.times > warmup - 1e-12
    snaps = traj.q[keep][-n:]
    batches = snaps[: n_batches * (len(snaps) // n_batches)].reshape(
        n_batches, -1, graph.M, L_max + 1).mean(axis=1)
    qbar = snaps.mean(axis=0)
    qbar[:, 0] = 1.0
    tq = stats.t.ppf(0.5 + confidence / 2, n_batches - 1)
    hw = tq * batches.std(axis=0, ddof=1) / np.sqrt(n_batches)
    tails = np.cumsum(qbar[:, ::-1], axis=1)[:, ::-1]
    rho = float(loads.max()) if loads.size else 0.0
    geo = ((1 + rho) / 2) ** np.arange(L_max + 1)
    return SteadyStateEstimate(OccupancyVector(np.clip(qbar, 0, 1)), hw, tails, geo, rho)
