"""Model parameters, occupancy state and queue-length distributions.

Conventions used throughout the package:

* server types ``m`` and dispatcher types ``k`` are 0-based indices;
* queue-length levels ``l`` start at 0;
* an occupancy matrix ``q`` has shape ``(M, L_max + 1)`` and ``q[m, l]`` is the
  fraction of type-``m`` servers holding at least ``l`` tasks.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, replace
from typing import Optional, Sequence

import numpy as np

DEFAULT_L_MAX = 64
_SUM_TOL = 1e-12
_OCC_TOL = 1e-12


# ---------------------------------------------------------------------------
# small numeric helpers shared by several modules
# ---------------------------------------------------------------------------

def gbinom(x, y: int):
    """Generalized binomial coefficient ``x (x-1) ... (x-y+1) / y!``.

    Defined as 0 when ``x < y``. ``x`` may be real (scalar or array); values
    within 1e-9 of an integer are snapped to it first, so pool sizes computed
    as ``S * fraction`` behave like the integer counts they represent.
    """
    x = np.asarray(x, dtype=float)
    near = np.rint(x)
    x = np.where(np.abs(x - near) < 1e-9, near, x)
    if y < 0:
        return np.zeros_like(x)
    out = np.ones_like(x)
    for i in range(y):
        out = out * (x - i)
    out = out / math.factorial(y)
    out = np.where(x < y, 0.0, out)
    return out if out.ndim else float(out)


def largest_remainder(total: int, weights: Sequence[float]) -> np.ndarray:
    """Split ``total`` into integer parts proportional to ``weights``.

    Floors first, then hands out the leftover units by descending remainder,
    ties going to the lowest index. The parts always sum to ``total``.
    """
    w = np.asarray(weights, dtype=float)
    if total < 0:
        raise ValueError("total must be nonnegative")
    s = w.sum()
    if s <= 0:
        if total == 0:
            return np.zeros(len(w), dtype=np.int64)
        raise ValueError("weights must have positive sum")
    exact = total * w / s
    base = np.floor(exact + 1e-9).astype(np.int64)
    base = np.minimum(base, np.ceil(exact - 1e-9).astype(np.int64))
    rem = exact - base
    short = total - int(base.sum())
    if short > 0:
        # stable sort on -rem keeps lowest index first among ties
        order = np.argsort(-rem, kind="stable")
        base[order[:short]] += 1
    elif short < 0:
        order = np.argsort(rem, kind="stable")
        base[order[:-short]] -= 1
    return base


# ---------------------------------------------------------------------------
# parameters
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SystemParams:
    """Scalar and vector parameters of the heterogeneous system.

    ``lam`` is the per-dispatcher arrival rate, ``xi`` the dispatcher-to-server
    ratio, ``w``/``v`` the dispatcher/server type fractions, ``u`` the service
    rates and ``p`` the ``K x M`` compatibility matrix. ``p`` may be omitted
    when the parameters only feed :func:`locality_jsq.stability.design_p_matrix`.
    """

    d: int
    lam: float
    xi: float
    w: np.ndarray
    v: np.ndarray
    u: np.ndarray
    p: Optional[np.ndarray] = None

    def __post_init__(self):
        object.__setattr__(self, "w", np.array(self.w, dtype=float).reshape(-1))
        object.__setattr__(self, "v", np.array(self.v, dtype=float).reshape(-1))
        object.__setattr__(self, "u", np.array(self.u, dtype=float).reshape(-1))
        if self.p is not None:
            p = np.array(self.p, dtype=float)
            if p.ndim == 1:
                p = p.reshape(len(self.w), len(self.v))
            object.__setattr__(self, "p", p)
        self.validate()

    # -- derived quantities -------------------------------------------------
    @property
    def K(self) -> int:
        return len(self.w)

    @property
    def M(self) -> int:
        return len(self.v)

    @property
    def delta(self) -> np.ndarray:
        """Asymptotic neighborhood fraction of each dispatcher type."""
        return self._require_p() @ self.v

    @property
    def sample_weights(self) -> np.ndarray:
        """``K x M`` matrix ``v_m p_km / delta_k`` (rows sum to 1)."""
        p = self._require_p()
        return (p * self.v[None, :]) / self.delta[:, None]

    @property
    def arrival_weights(self) -> np.ndarray:
        """``K x M`` matrix ``p_km w_k / delta_k`` used by the mean-field drift."""
        p = self._require_p()
        return (p * self.w[:, None]) / self.delta[:, None]

    def _require_p(self) -> np.ndarray:
        if self.p is None:
            raise ValueError("compatibility matrix p is not set")
        return self.p

    def validate(self) -> None:
        if int(self.d) != self.d or self.d < 1:
            raise ValueError(f"d must be an integer >= 1, got {self.d}")
        if self.lam < 0:
            raise ValueError("lambda must be nonnegative")
        if self.xi <= 0:
            raise ValueError("xi must be positive")
        if len(self.u) != self.M:
            raise ValueError("u must have one entry per server type")
        for name, vec in (("w", self.w), ("v", self.v)):
            if len(vec) == 0:
                raise ValueError(f"{name} must be nonempty")
            if np.any(vec <= 0) or np.any(vec > 1):
                raise ValueError(f"entries of {name} must lie in (0, 1]")
            if abs(vec.sum() - 1.0) > _SUM_TOL * max(1, len(vec)) * 10:
                raise ValueError(f"{name} must sum to 1, got {vec.sum()!r}")
        if np.any(self.u < 0) or not np.all(np.isfinite(self.u)):
            raise ValueError("service rates must be finite and nonnegative")
        if self.p is not None:
            if self.p.shape != (self.K, self.M):
                raise ValueError(f"p must have shape {(self.K, self.M)}, got {self.p.shape}")
            if np.any(self.p < 0) or np.any(self.p > 1):
                raise ValueError("entries of p must lie in [0, 1]")
            if np.any(self.delta <= 0):
                bad = np.flatnonzero(self.delta <= 0).tolist()
                raise ValueError(f"dispatcher types {bad} have empty asymptotic neighborhood")

    def with_p(self, p) -> "SystemParams":
        return replace(self, p=np.array(p, dtype=float))

    def to_dict(self) -> dict:
        out = {
            "d": int(self.d),
            "lambda": float(self.lam),
            "xi": float(self.xi),
            "w": self.w.tolist(),
            "v": self.v.tolist(),
            "u": self.u.tolist(),
        }
        if self.p is not None:
            out["p"] = self.p.tolist()
        return out

    def digest(self) -> str:
        """Short stable hash of the parameter values (used in file headers)."""
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


def capacity_check(params: SystemParams) -> bool:
    """True iff the scaled arrival rate is strictly below total service capacity."""
    return bool(params.lam * params.xi < float(params.u @ params.v))


# ---------------------------------------------------------------------------
# occupancy
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class OccupancyVector:
    """Tail fractions ``q[m, l]`` truncated at level ``L_max``."""

    q: np.ndarray

    def __post_init__(self):
        q = np.array(self.q, dtype=float)
        if q.ndim != 2 or q.shape[1] < 2:
            raise ValueError("q must be a 2-d array with at least two levels")
        object.__setattr__(self, "q", q)
        check_occupancy(q)

    @property
    def M(self) -> int:
        return self.q.shape[0]

    @property
    def L_max(self) -> int:
        return self.q.shape[1] - 1

    @classmethod
    def empty(cls, M: int, L_max: int = DEFAULT_L_MAX) -> "OccupancyVector":
        q = np.zeros((M, L_max + 1))
        q[:, 0] = 1.0
        return cls(q)

    @classmethod
    def from_pmf(cls, pmf, L_max: int = DEFAULT_L_MAX) -> "OccupancyVector":
        """Build tails from per-type queue-length pmfs (row ``m`` = P(X = l))."""
        pmf = np.atleast_2d(np.asarray(pmf, dtype=float))
        if pmf.shape[1] > L_max + 1:
            raise ValueError("pmf has more levels than L_max + 1")
        padded = np.zeros((pmf.shape[0], L_max + 1))
        padded[:, : pmf.shape[1]] = pmf
        padded /= padded.sum(axis=1, keepdims=True)
        tails = np.cumsum(padded[:, ::-1], axis=1)[:, ::-1]
        tails[:, 0] = 1.0
        return cls(np.clip(tails, 0.0, 1.0))

    @classmethod
    def from_queue_lengths(cls, queue_len, server_type, M: int,
                           L_max: int = DEFAULT_L_MAX) -> "OccupancyVector":
        return cls(occupancy_matrix(queue_len, server_type, M, L_max))

    def to_rows(self) -> list[tuple[int, int, float]]:
        return [(m, l, float(self.q[m, l]))
                for m in range(self.M) for l in range(self.L_max + 1)]

    def to_csv(self, path) -> None:
        with open(path, "w") as fh:
            fh.write("m,l,q\n")
            for m, l, val in self.to_rows():
                fh.write(f"{m},{l},{val!r}\n")

    @classmethod
    def from_csv(cls, path) -> "OccupancyVector":
        rows = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        M = int(rows[:, 0].max()) + 1
        L = int(rows[:, 1].max())
        q = np.zeros((M, L + 1))
        q[rows[:, 0].astype(int), rows[:, 1].astype(int)] = rows[:, 2]
        return cls(q)


def check_occupancy(q, tol: float = _OCC_TOL) -> None:
    """Raise ``ValueError`` unless ``q`` lies in the truncated state space."""
    q = np.asarray(q, dtype=float)
    if not np.all(np.isfinite(q)):
        raise ValueError("occupancy contains non-finite values")
    if np.any(np.abs(q[..., 0] - 1.0) > tol):
        raise ValueError("q[m][0] must equal 1")
    if np.any(q < -tol) or np.any(q > 1 + tol):
        raise ValueError("occupancy entries must lie in [0, 1]")
    if np.any(np.diff(q, axis=-1) > tol):
        raise ValueError("occupancy must be nonincreasing in the level")


def occupancy_matrix(queue_len, server_type, M: int, L_max: int) -> np.ndarray:
    """Empirical tail fractions of a queue-length vector, per server type."""
    x = np.asarray(queue_len, dtype=np.int64)
    st = np.asarray(server_type, dtype=np.int64)
    counts = level_counts(x, st, M, L_max + 1)
    sizes = np.bincount(st, minlength=M).astype(float)
    tails = np.cumsum(counts[:, ::-1], axis=1)[:, ::-1]
    with np.errstate(invalid="ignore", divide="ignore"):
        q = tails / sizes[:, None]
    q[sizes == 0] = 0.0
    q[:, 0] = 1.0
    return q[:, : L_max + 1]


def level_counts(queue_len, server_type, M: int, n_levels: int) -> np.ndarray:
    """Integer counts ``c[m, l]`` of type-m servers with exactly ``l`` tasks.

    Lengths at or above ``n_levels - 1`` are pooled into the last column.
    """
    x = np.minimum(np.asarray(queue_len, dtype=np.int64), n_levels - 1)
    st = np.asarray(server_type, dtype=np.int64)
    flat = np.bincount(st * n_levels + x, minlength=M * n_levels)
    return flat.reshape(M, n_levels)


# ---------------------------------------------------------------------------
# queue-length distributions
# ---------------------------------------------------------------------------

def gwqd(q, k: int, params: SystemParams) -> np.ndarray:
    """Global weighted queue-length distribution of dispatcher type ``k``.

    Returns an ``(M, L_max + 1)`` pmf ``x[m, l] = (v_m p_km / delta_k) P_m(X = l)``
    where ``P_m`` is read off the tails of ``q``. Mass at or above ``L_max`` is
    kept at level ``L_max``.
    """
    qm = q.q if isinstance(q, OccupancyVector) else np.asarray(q, dtype=float)
    if not 0 <= k < params.K:
        raise ValueError(f"dispatcher type {k} out of range")
    if params.delta[k] <= 0:
        raise ValueError("delta_k must be positive")
    pmf = np.empty_like(qm)
    pmf[:, :-1] = qm[:, :-1] - qm[:, 1:]
    pmf[:, -1] = qm[:, -1]
    return params.sample_weights[k][:, None] * pmf


def lqd_counts(queue_len, graph, i: int, n_levels: Optional[int] = None) -> np.ndarray:
    """Integer class counts inside the neighborhood of dispatcher ``i``."""
    x = np.asarray(getattr(queue_len, "queue_len", queue_len), dtype=np.int64)
    nbrs = graph.adjacency[i]
    lens = x[nbrs]
    if n_levels is None:
        n_levels = int(lens.max()) + 1 if len(lens) else 1
    return level_counts(lens, graph.server_type[nbrs], graph.M, n_levels)


def lqd(state, graph, i: int, n_levels: Optional[int] = None) -> np.ndarray:
    """Local queue-length distribution seen by dispatcher ``i``.

    ``state`` is a :class:`~locality_jsq.simulator.SimState` or a bare
    queue-length vector. Counts are integers and are divided once at the end.
    """
    deg = len(graph.adjacency[i])
    if deg == 0:
        raise ValueError(f"dispatcher {i} has an empty neighborhood")
    return lqd_counts(state, graph, i, n_levels) / deg


def epsilon_bad_dispatchers(state, graph, params: SystemParams, eps: float) -> set[int]:
    """Dispatchers whose LQD is farther than ``eps`` (in l1) from their GWQD.

    The GWQD is computed from the current empirical occupancy of ``state``.
    Dispatchers with an empty neighborhood are reported as bad.
    """
    x = np.asarray(getattr(state, "queue_len", state), dtype=np.int64)
    n_levels = int(x.max()) + 2 if len(x) else 2
    occ = occupancy_matrix(x, graph.server_type, graph.M, n_levels - 1)
    targets = [gwqd(occ, k, params) for k in range(params.K)]
    bad = set()
    for i in range(graph.W):
        if len(graph.adjacency[i]) == 0:
            bad.add(i)
            continue
        local = lqd(x, graph, i, n_levels)
        dist = np.abs(local - targets[graph.dispatcher_type[i]]).sum()
        if dist > eps:
            bad.add(i)
    return bad


def l1_distance(a, b) -> float:
    """l1 distance between two class pmfs of possibly different level depth."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    n = max(a.shape[1], b.shape[1])
    pa = np.zeros((a.shape[0], n))
    pb = np.zeros((b.shape[0], n))
    pa[:, : a.shape[1]] = a
    pb[:, : b.shape[1]] = b
    return float(np.abs(pa - pb).sum())
