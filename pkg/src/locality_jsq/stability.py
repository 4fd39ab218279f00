"""Stability loads, subcriticality margins and compatibility-matrix design."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
import numpy as np

from .core_model import SystemParams, capacity_check
from .graph import CompatibilityGraph

EXACT_MAX_N = 22
_CHUNK = 1 << 18

__all__ = [
    "StabilityReport",
    "SubcriticalResult",
    "capacity_check",
    "rho_exact",
    "subcritical_check",
    "asymptotic_load_lower_bound",
    "design_p_matrix",
    "binom_allocation_max",
]


@dataclass
class StabilityReport:
    rho: float
    mode: str
    witness_set: list = field(default_factory=list)
    is_lower_bound: bool = False

    def __post_init__(self):
        if self.mode not in ("exact", "asymptotic", "lower_bound"):
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.rho < 0:
            raise ValueError("rho must be nonnegative")


@dataclass
class SubcriticalResult:
    loads: np.ndarray
    passed: bool

    def __iter__(self):
        # allows `loads, ok = subcritical_check(params)`
        return iter((self.loads, self.passed))


def _dispatcher_weights(deg: int, d: int, lam: float) -> np.ndarray:
    """Lookup table: contribution of a dispatcher with ``c`` neighbors in U."""
    c = np.arange(deg + 1)
    if deg >= d:
        return lam * np.array([math.comb(int(x), d) for x in c], dtype=float) / math.comb(deg, d)
    return lam * c / deg


def rho_exact(graph: CompatibilityGraph, params: SystemParams) -> StabilityReport:
    """Exact finite-N load by enumeration of all nonempty server subsets.

    Feasible only for ``N <= 22``. Among subsets attaining the maximum (up to
    1e-12 relative) the one with the smallest bitmask is returned.
    """
    N = graph.N
    if N > EXACT_MAX_N:
        raise ValueError(
            f"rho_exact enumerates 2^N subsets and is limited to N <= {EXACT_MAX_N}; "
            "use subcritical_check for larger systems")
    if params.lam == 0:
        return StabilityReport(0.0, "exact", list(range(N)))
    bits = np.uint64(1) << np.arange(N, dtype=np.uint64)
    u_srv = params.u[graph.server_type]
    nbr_masks = [np.uint64(bits[a].sum()) if len(a) else np.uint64(0) for a in graph.adjacency]
    tables = [_dispatcher_weights(len(a), params.d, params.lam) if len(a) else None
              for a in graph.adjacency]

    best_val, best_mask = -np.inf, 0
    total = 1 << N
    for lo in range(1, total, _CHUNK):
        masks = np.arange(lo, min(lo + _CHUNK, total), dtype=np.uint64)
        num = np.zeros(len(masks))
        for nm, tab in zip(nbr_masks, tables):
            if tab is None:
                continue
            num += tab[np.bitwise_count(masks & nm)]
        cap = np.zeros(len(masks))
        for j in range(N):
            cap += np.where(masks & bits[j], u_srv[j], 0.0)
        with np.errstate(divide="ignore", invalid="ignore"):
            val = np.where(cap > 0, num / cap, np.where(num > 0, np.inf, 0.0))
        top = val.max()
        if top > best_val * (1 + 1e-12) or best_val == -np.inf:
            thresh = top * (1 - 1e-12) if np.isfinite(top) else top
            best_val = top
            best_mask = int(masks[np.flatnonzero(val >= thresh)[0]])
    witness = [j for j in range(N) if best_mask >> j & 1]
    return StabilityReport(float(best_val), "exact", witness)


def subcritical_check(params: SystemParams) -> SubcriticalResult:
    """Per-server-type loads ``r_m``; passes iff every load is below 1."""
    p = params._require_p()
    share = (params.w[:, None] * p / params.delta[:, None]).sum(axis=0)
    with np.errstate(divide="ignore", invalid="ignore"):
        r = np.where(share > 0, params.lam * params.xi * share / params.u, 0.0)
    return SubcriticalResult(r, bool(np.all(r < 1)))


def asymptotic_load_lower_bound(params: SystemParams, alpha) -> float:
    """Load functional whose value above 1 certifies the limit is not subcritical."""
    a = np.asarray(alpha, dtype=float)
    if a.shape != (params.M,) or np.any(a < 0) or np.any(a > 1):
        raise ValueError("alpha must be a length-M vector in [0, 1]")
    if a.sum() <= 0:
        raise ValueError("alpha must not be all zero")
    p = params._require_p()
    frac = (p * (a * params.v)[None, :]).sum(axis=1) / params.delta
    denom = float((a * params.v * params.u).sum())
    num = params.lam * params.xi * float((params.w * frac ** params.d).sum())
    if denom == 0:
        return math.inf if num > 0 else 0.0
    return num / denom


def design_p_matrix(params: SystemParams) -> tuple[np.ndarray, float]:
    """Greedy water-filling design of a compatibility matrix.

    Each dispatcher type in turn pours its arrival mass ``lam*xi*w_k`` into the
    per-server-type budgets ``rho0 * v_m * u_m`` (lowest ``m`` first), where
    ``rho0 = lam*xi / sum(v*u)``. The resulting sampling weights ``x`` are
    mapped to ``p`` with ``p_km ∝ x_km / v_m`` and row maximum 1.
    Returns ``(p, max_m r_m)``.
    """
    if not capacity_check(params):
        raise ValueError("capacity condition lam*xi < sum(v*u) fails; no subcritical design exists")
    K, M = params.K, params.M
    total = params.lam * params.xi
    cap = params.v * params.u
    if total == 0:
        p = np.ones((K, M))
        return p, float(subcritical_check(params.with_p(p)).loads.max())
    rho0 = total / cap.sum()
    budget = rho0 * cap
    x = np.zeros((K, M))
    for k in range(K):
        demand = total * params.w[k]
        for m in range(M):
            if demand <= 0:
                break
            take = min(budget[m], demand)
            if take <= 0:
                continue
            x[k, m] = take / (total * params.w[k])
            budget[m] -= take
            demand -= take
        if demand > 1e-12 * total:
            # rounding left a sliver; hand it to the type with most headroom
            m = int(np.argmax(budget))
            x[k, m] += demand / (total * params.w[k])
            budget[m] -= demand
    x[x < 1e-15] = 0.0
    x /= x.sum(axis=1, keepdims=True)
    ratio = x / params.v[None, :]
    p = ratio / ratio.max(axis=1, keepdims=True)
    loads = subcritical_check(params.with_p(p)).loads
    return p, float(loads.max())


def binom_allocation_max(Nslots: int, C: int, D: int, d: int) -> int:
    """Max of ``sum_i binom(x_i, d)`` over integers ``0 <= x_i <= D`` summing to ``C``."""
    if min(Nslots, C, D, d) < 0 or C > Nslots * D:
        raise ValueError("infeasible allocation: need 0 <= C <= Nslots * D")
    if C == 0:
        return 0
    k_star = C // D
    if Nslots > k_star:
        return k_star * math.comb(D, d) + math.comb(C - D * k_star, d)
    return Nslots * math.comb(D, d)
