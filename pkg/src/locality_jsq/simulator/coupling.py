"""Paired run of local JSQ(d) and GWSQ(d) under a maximal coupling."""

from __future__ import annotations

from dataclasses import dataclass, field
import numpy as np

from ..core_model import SystemParams, gwqd
from ..graph import CompatibilityGraph
from ..trajectory import Trajectory
from .gwsq import assignment_class_pmf, pseudo_pool
from .levels import LevelIndex


class CouplingViolation(AssertionError):
    """The pathwise mismatch bound failed; carries the event log."""

    def __init__(self, message: str, log: list):
        super().__init__(message)
        self.log = log


@dataclass
class CoupledRun:
    traj_g: Trajectory
    traj_gp: Trajectory
    times: np.ndarray
    delta: np.ndarray
    N: int
    event_log: list = field(default_factory=list)
    max_gap_ratio: float = 0.0

    def __iter__(self):
        return iter((self.traj_g, self.traj_gp, self.delta))

    @property
    def delta_over_N(self) -> np.ndarray:
        return self.delta / self.N

    def mismatch_csv(self, path) -> None:
        with open(path, "w") as fh:
            fh.write("t,delta,delta_over_N\n")
            for t, dl in zip(self.times.tolist(), self.delta.tolist()):
                fh.write(f"{t!r},{int(dl)},{dl / self.N!r}\n")


def coupled_classes(pa: np.ndarray, pb: np.ndarray, U: float) -> tuple[int, int]:
    """Maximal coupling of two class pmfs driven by one uniform ``U``.

    The unit interval is split into the overlap ``min(pa, pb)`` (classes in
    row-major ``(m, l)`` order) followed by each pmf's excess over the overlap
    in the same order. Both draws agree exactly when ``U`` lands in the overlap.
    """
    a, b = pa.ravel(), pb.ravel()
    common = np.minimum(a, b)
    c = np.cumsum(common)
    s = c[-1]
    if U < s:
        i = int(np.searchsorted(c, U, side="right"))
        i = min(i, len(a) - 1)
        return i, i
    r = U - s

    def pick(excess):
        ce = np.cumsum(excess)
        if ce[-1] <= 0:
            return int(np.flatnonzero(common > 0)[-1])
        j = int(np.searchsorted(ce, r * ce[-1] / (1 - s), side="right"))
        return min(j, len(excess) - 1)

    return pick(a - common), pick(b - common)


class _Mirror:
    """One side of the coupling: queue vector, level buckets and counts."""

    def __init__(self, x, server_type, M):
        self.x = np.array(x, dtype=np.int64)
        self.index = LevelIndex(self.x.tolist(), server_type.tolist(), M)

    def move(self, j, m, delta):
        old = int(self.x[j])
        self.x[j] = old + delta
        self.index.move(j, m, old, old + delta)

    def counts(self, M, L1):
        out = np.zeros((M, L1), dtype=np.int64)
        for m in range(M):
            c = self.index.level_counts(m)
            n = min(len(c), L1)
            out[m, :n] = c[:n]
            out[m, L1 - 1] += sum(c[L1:])
        return out


def run_coupled(graph: CompatibilityGraph, params: SystemParams, horizon: float, seed: int,
                queue_len=None, snapshot_dt: float = 0.1, L_max: int = 32,
                keep_log: bool = True) -> CoupledRun:
    """Couple local JSQ(d) on ``graph`` (system G) with GWSQ(d) (system G').

    Both systems share one uniformized event stream of total rate
    ``lam*W + sum_m u_m |V_m|``: an arrival hits the same dispatcher in both,
    and a potential departure hits the same (type, rank) position, ranks
    ordered by queue length then server id. Classes are drawn from a maximal
    coupling of the two assignment-class pmfs, and ``Delta`` counts arrivals
    whose classes differ. After every event ``sum |Q - Q'| <= 2 Delta`` is
    checked with integer counts; a failure raises :class:`CouplingViolation`.
    """
    N, W, M, d = graph.N, graph.W, graph.M, params.d
    rng = np.random.default_rng(np.uint64(seed % 2**64))
    st = graph.server_type
    x0 = np.zeros(N, dtype=np.int64) if queue_len is None else np.asarray(queue_len, np.int64)
    g = _Mirror(x0, st, M)
    gp = _Mirror(x0, st, M)
    sizes = graph.server_counts()
    lam_tot = params.lam * W
    dep_rates = params.u * sizes
    R = lam_tot + dep_rates.sum()
    dep_cdf = np.cumsum(dep_rates) / max(dep_rates.sum(), 1e-300)

    # diff[(m, l)] = Q_{m,l} - Q'_{m,l} for l >= 1, with the running l1 total
    diff: dict = {}
    total = 0
    delta = 0
    log = []

    def bump(m, l, s):
        nonlocal total
        old = diff.get((m, l), 0)
        new = old + s
        diff[(m, l)] = new
        total += abs(new) - abs(old)

    n_snap = int(np.floor(horizon / snapshot_dt + 1e-9)) + 1
    snap_t = np.arange(n_snap) * snapshot_dt
    qg = np.empty((n_snap, M, L_max + 1))
    qgp = np.empty((n_snap, M, L_max + 1))
    dcurve = np.zeros(n_snap, dtype=np.int64)
    si = 0

    def occupancy(side):
        c = side.counts(M, L_max + 1)
        tails = np.cumsum(c[:, ::-1], axis=1)[:, ::-1]
        q = tails / np.maximum(sizes, 1)[:, None]
        q[:, 0] = 1.0
        return q

    t = 0.0
    worst = 0.0
    adj = graph.adjacency
    dtype_arr = graph.dispatcher_type
    while True:
        t_next = t + rng.exponential(1.0 / R) if R > 0 else np.inf
        while si < n_snap and snap_t[si] <= t_next:
            qg[si], qgp[si], dcurve[si] = occupancy(g), occupancy(gp), delta
            si += 1
        if t_next > horizon:
            break
        t = t_next
        if rng.random() * R < lam_tot:
            i = int(rng.integers(W))
            k = int(dtype_arr[i])
            U = rng.random()
            nbrs = adj[i]
            top = int(max(g.x.max(), gp.x.max())) + 2
            # system G': pool of N pseudo-servers from its own weighted distribution
            cp = gp.counts(M, top)
            occ = np.cumsum(cp[:, ::-1], axis=1)[:, ::-1] / np.maximum(sizes, 1)[:, None]
            occ[:, 0] = 1.0
            pool = pseudo_pool(gwqd(occ, k, params), N)
            p_gp = assignment_class_pmf(pool / N, N, d)
            if len(nbrs) == 0:
                # G drops the task; G' still serves it
                _, cb = coupled_classes(p_gp, p_gp, U)
                mb, lb = divmod(cb, top)
                jp = gp.index.pick(mb, lb, rng.random())
                gp.move(jp, mb, 1)
                bump(mb, lb + 1, -1)
                delta += 1
                ca = -1
            else:
                lens = g.x[nbrs]
                types = st[nbrs]
                cnt = np.bincount(types * top + lens, minlength=M * top).reshape(M, top)
                deg = len(nbrs)
                p_g = assignment_class_pmf(cnt / deg, deg, d if deg >= d else 1)
                ca, cb = coupled_classes(p_g, p_gp, U)
                ma, la = divmod(ca, top)
                mb, lb = divmod(cb, top)
                cand = nbrs[(types == ma) & (lens == la)]
                j = int(cand[min(int(rng.random() * len(cand)), len(cand) - 1)])
                jp = gp.index.pick(mb, lb, rng.random())
                g.move(j, ma, 1)
                gp.move(jp, mb, 1)
                bump(ma, la + 1, 1)
                bump(mb, lb + 1, -1)
                if ca != cb:
                    delta += 1
            if keep_log:
                log.append((t, "arrival", i, ca, cb, delta, total))
        else:
            m = int(np.searchsorted(dep_cdf, rng.random(), side="right"))
            m = min(m, M - 1)
            n = int(rng.integers(sizes[m]))
            j, l = g.index.at_rank(m, n)
            jp, lp = gp.index.at_rank(m, n)
            if l > 0:
                g.move(j, m, -1)
                bump(m, l, -1)
            if lp > 0:
                gp.move(jp, m, -1)
                bump(m, lp, 1)
            if keep_log:
                log.append((t, "departure", m, n, l, lp, delta, total))
        if total > 2 * delta:
            raise CouplingViolation(
                f"mismatch bound violated at t={t:.6g}: sum|Q-Q'|={total} > 2*Delta={2 * delta}",
                log)
        if delta:
            worst = max(worst, total / (2 * delta))
    while si < n_snap:
        qg[si], qgp[si], dcurve[si] = occupancy(g), occupancy(gp), delta
        si += 1

    base = {"N": N, "seed": seed, "params_hash": params.digest()}
    tg = Trajectory(snap_t, qg, {**base, "policy": f"jsq({d})"})
    tgp = Trajectory(snap_t, qgp, {**base, "policy": f"gwsq({d})"})
    return CoupledRun(tg, tgp, snap_t, dcurve.astype(float), N, log, worst)
