"""Bipartite compatibility graphs: sampling, auditing and serialization."""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Optional, Sequence

import numpy as np
from scipy import sparse

from .core_model import SystemParams, largest_remainder


@dataclass(frozen=True, eq=False)
class CompatibilityGraph:
    """Dispatchers ``0..W-1`` and servers ``0..N-1`` with typed labels.

    ``adjacency[i]`` is the sorted int array of servers compatible with
    dispatcher ``i``; ``reverse[j]`` the sorted dispatchers that can reach ``j``.
    """

    N: int
    W: int
    M: int
    K: int
    server_type: np.ndarray
    dispatcher_type: np.ndarray
    adjacency: tuple

    @classmethod
    def from_edges(cls, N: int, server_type, dispatcher_type, edges,
                   M: Optional[int] = None, K: Optional[int] = None) -> "CompatibilityGraph":
        st = np.asarray(server_type, dtype=np.int64)
        dt = np.asarray(dispatcher_type, dtype=np.int64)
        W = len(dt)
        if len(st) != N:
            raise ValueError("server_type must have length N")
        M = int(st.max()) + 1 if M is None else M
        K = int(dt.max()) + 1 if K is None else K
        e = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
        if len(e) and (e[:, 0].min() < 0 or e[:, 0].max() >= W
                       or e[:, 1].min() < 0 or e[:, 1].max() >= N):
            raise ValueError("edge endpoint out of range")
        e = np.unique(e, axis=0)
        bounds = np.searchsorted(e[:, 0], np.arange(W + 1))
        adj = tuple(e[bounds[i]:bounds[i + 1], 1].copy() for i in range(W))
        return cls(N, W, M, K, st, dt, adj)

    @cached_property
    def adjacency_lists(self) -> list[list[int]]:
        return [a.tolist() for a in self.adjacency]

    @cached_property
    def degree(self) -> np.ndarray:
        return np.array([len(a) for a in self.adjacency], dtype=np.int64)

    @cached_property
    def reverse(self) -> tuple:
        e = self.edges()
        order = np.lexsort((e[:, 0], e[:, 1]))
        e = e[order]
        bounds = np.searchsorted(e[:, 1], np.arange(self.N + 1))
        return tuple(e[bounds[j]:bounds[j + 1], 0].copy() for j in range(self.N))

    @cached_property
    def incidence(self) -> sparse.csr_matrix:
        """``W x N`` 0/1 adjacency matrix."""
        e = self.edges()
        data = np.ones(len(e), dtype=np.int64)
        return sparse.csr_matrix((data, (e[:, 0], e[:, 1])), shape=(self.W, self.N))

    @property
    def n_edges(self) -> int:
        return int(self.degree.sum())

    def server_counts(self) -> np.ndarray:
        return np.bincount(self.server_type, minlength=self.M)

    def dispatcher_counts(self) -> np.ndarray:
        return np.bincount(self.dispatcher_type, minlength=self.K)

    def edges(self) -> np.ndarray:
        if self.W == 0:
            return np.zeros((0, 2), dtype=np.int64)
        src = np.repeat(np.arange(self.W, dtype=np.int64), self.degree)
        dst = np.concatenate(self.adjacency) if self.n_edges else np.zeros(0, np.int64)
        return np.column_stack([src, dst.astype(np.int64)])

    # -- text serialization --------------------------------------------------
    def to_text(self) -> str:
        lines = [
            f"# N {self.N}",
            f"# W {self.W}",
            f"# M {self.M}",
            f"# K {self.K}",
            "# server_type " + " ".join(map(str, self.server_type.tolist())),
            "# dispatcher_type " + " ".join(map(str, self.dispatcher_type.tolist())),
        ]
        lines.extend(f"{i} {j}" for i, j in self.edges().tolist())
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "CompatibilityGraph":
        header = {}
        edges = []
        for raw in text.splitlines():
            line = raw.strip()
            if not line:
                continue
            if line.startswith("#"):
                key, _, rest = line[1:].strip().partition(" ")
                header[key] = rest.split()
            else:
                a, b = line.split()
                edges.append((int(a), int(b)))
        N = int(header["N"][0])
        st = [int(x) for x in header.get("server_type", [])]
        dt = [int(x) for x in header.get("dispatcher_type", [])]
        return cls.from_edges(N, st, dt, edges,
                              M=int(header["M"][0]), K=int(header["K"][0]))

    def save(self, path) -> None:
        with open(path, "w") as fh:
            fh.write(self.to_text())

    @classmethod
    def load(cls, path) -> "CompatibilityGraph":
        with open(path) as fh:
            return cls.from_text(fh.read())


def type_labels(n: int, fractions) -> np.ndarray:
    """Contiguous type labels for ``n`` items with largest-remainder counts."""
    counts = largest_remainder(n, fractions)
    return np.repeat(np.arange(len(counts)), counts)


def irg_sample(params: SystemParams, N: int, seed: int) -> CompatibilityGraph:
    """Draw an inhomogeneous random bipartite graph IRG(p).

    Each dispatcher/server pair of types ``(k, m)`` is joined independently
    with probability ``p[k, m]``. The result depends only on the arguments.
    """
    if N < 1:
        raise ValueError("N must be at least 1")
    p = params._require_p()
    W = int(round(params.xi * N))
    st = type_labels(N, params.v)
    dt = type_labels(W, params.w)
    rng = np.random.default_rng(np.uint64(seed % 2**64))
    s_start = np.searchsorted(st, np.arange(params.M + 1))
    d_start = np.searchsorted(dt, np.arange(params.K + 1))
    blocks = []
    for k in range(params.K):
        rows = []
        for m in range(params.M):
            shape = (d_start[k + 1] - d_start[k], s_start[m + 1] - s_start[m])
            rows.append(rng.random(shape) < p[k, m])
        blocks.append(np.hstack(rows) if rows else np.zeros((0, N), bool))
    mask = np.vstack(blocks) if blocks else np.zeros((0, N), bool)
    adj = tuple(np.flatnonzero(row) for row in mask)
    return CompatibilityGraph(N, W, params.M, params.K, st, dt, adj)


def complete_graph(params: SystemParams, N: int) -> CompatibilityGraph:
    """Every dispatcher compatible with every server."""
    W = int(round(params.xi * N))
    st = type_labels(N, params.v)
    dt = type_labels(W, params.w)
    full = np.arange(N, dtype=np.int64)
    return CompatibilityGraph(N, W, params.M, params.K, st, dt,
                              tuple(full.copy() for _ in range(W)))


# ---------------------------------------------------------------------------
# auditing
# ---------------------------------------------------------------------------

@dataclass
class Condition1Report:
    edge_density: np.ndarray
    degree_ratio_w: np.ndarray
    degree_ratio_v: np.ndarray
    empty_class: np.ndarray
    unbounded_ratio: np.ndarray
    low_degree_dispatchers: list = field(default_factory=list)

    @property
    def flagged(self) -> bool:
        return bool(self.empty_class.any() or self.unbounded_ratio.any()
                    or self.low_degree_dispatchers)


def _ratio(counts: np.ndarray) -> float:
    if counts.size == 0:
        return float("nan")
    hi, lo = counts.max(), counts.min()
    if hi == 0:
        return 1.0
    if lo == 0:
        return float("inf")
    return float(hi / lo)


def type_degree_matrix(graph: CompatibilityGraph) -> np.ndarray:
    """``W x M`` count of type-m neighbors of each dispatcher."""
    onehot = sparse.csr_matrix(
        (np.ones(graph.N), (np.arange(graph.N), graph.server_type)), shape=(graph.N, graph.M))
    return np.asarray((graph.incidence @ onehot).todense()).astype(np.int64)


def condition1_report(graph: CompatibilityGraph, params: SystemParams) -> Condition1Report:
    """Per-(k, m) edge densities and max/min degree ratios.

    A zero minimum degree next to a positive maximum yields ``inf`` and sets
    ``unbounded_ratio``; an empty type class yields ``nan`` and sets
    ``empty_class``. Dispatchers with fewer than ``d`` neighbors are listed.
    """
    if graph.N == 0 or graph.W == 0:
        raise ValueError("graph is empty")
    K, M = graph.K, graph.M
    deg_w = type_degree_matrix(graph)
    onehot_w = sparse.csr_matrix(
        (np.ones(graph.W), (graph.dispatcher_type, np.arange(graph.W))), shape=(K, graph.W))
    deg_v = np.asarray((onehot_w @ graph.incidence).todense()).astype(np.int64).T  # N x K
    nw = graph.dispatcher_counts()
    nv = graph.server_counts()

    density = np.full((K, M), np.nan)
    rw = np.full((K, M), np.nan)
    rv = np.full((K, M), np.nan)
    empty = np.zeros((K, M), dtype=bool)
    for k in range(K):
        wk = graph.dispatcher_type == k
        for m in range(M):
            vm = graph.server_type == m
            if nw[k] == 0 or nv[m] == 0:
                empty[k, m] = True
                continue
            density[k, m] = deg_w[wk, m].sum() / (nw[k] * nv[m])
            rw[k, m] = _ratio(deg_w[wk, m])
            rv[k, m] = _ratio(deg_v[vm, k])
    unbounded = np.isinf(rw) | np.isinf(rv)
    low = np.flatnonzero(graph.degree < params.d).tolist()
    return Condition1Report(density, rw, rv, empty, unbounded, low)


def default_test_sets(graph: CompatibilityGraph, queue_len=None, n_random: int = 100,
                      seed: int = 0) -> list[np.ndarray]:
    """Queue-level sets ``{j : X_j >= l}`` plus uniform random subsets."""
    sets = []
    if queue_len is not None:
        x = np.asarray(queue_len)
        for l in range(1, int(x.max()) + 1 if len(x) else 1):
            s = np.flatnonzero(x >= l)
            if len(s):
                sets.append(s)
    rng = np.random.default_rng(seed)
    for _ in range(n_random):
        s = np.flatnonzero(rng.random(graph.N) < 0.5)
        if len(s) == 0:
            s = np.array([rng.integers(graph.N)])
        sets.append(s)
    return sets


def sparsity_deviations(graph: CompatibilityGraph, U) -> np.ndarray:
    """Per-dispatcher ``| |N(i) ∩ U|/|N(i)| - |E_k(U)|/|E_k(V)| |``.

    Dispatchers with an empty neighborhood get ``inf``.
    """
    ind = np.zeros(graph.N)
    ind[np.asarray(U, dtype=np.int64)] = 1.0
    hits = graph.incidence @ ind
    deg = graph.degree.astype(float)
    e_u = np.bincount(graph.dispatcher_type, weights=hits, minlength=graph.K)
    e_v = np.bincount(graph.dispatcher_type, weights=deg, minlength=graph.K)
    with np.errstate(invalid="ignore", divide="ignore"):
        target = np.where(e_v > 0, e_u / np.where(e_v > 0, e_v, 1), 0.0)
        local = hits / np.where(deg > 0, deg, 1)
    dev = np.abs(local - target[graph.dispatcher_type])
    dev[deg == 0] = np.inf
    return dev


def sparsity_probe(graph: CompatibilityGraph, test_sets: Sequence, eps: float) -> np.ndarray:
    """Max over ``test_sets`` of the per-type fraction of dispatchers deviating by ``>= eps``."""
    if not len(test_sets):
        raise ValueError("need at least one test set")
    nw = graph.dispatcher_counts().astype(float)
    worst = np.zeros(graph.K)
    for U in test_sets:
        if len(U) == 0:
            raise ValueError("test sets must be nonempty")
        bad = sparsity_deviations(graph, U) >= eps
        frac = np.bincount(graph.dispatcher_type, weights=bad.astype(float), minlength=graph.K)
        frac = np.divide(frac, nw, out=np.zeros_like(frac), where=nw > 0)
        worst = np.maximum(worst, frac)
    return worst
