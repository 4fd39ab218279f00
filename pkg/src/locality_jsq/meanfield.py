"""Mean-field ODE: drift, integration, fixed point and tail certificates."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .core_model import DEFAULT_L_MAX, OccupancyVector, SystemParams
from .stability import subcritical_check
from .trajectory import Trajectory

PROJECTION_REPORT_TOL = 1e-7


def q_tilde(q, params: SystemParams) -> np.ndarray:
    """Dispatcher-view occupancy ``qt[..., k, l] = sum_m (v_m p_km / delta_k) q[..., m, l]``."""
    q = q.q if isinstance(q, OccupancyVector) else np.asarray(q, dtype=float)
    return np.einsum("km,...ml->...kl", params.sample_weights, q)


def divided_power(a, b, d: int):
    """``(a**d - b**d) / (a - b)`` written as ``sum_j a**j b**(d-1-j)``.

    The sum form has no removable singularity, so ``a == b`` gives ``d a**(d-1)``.
    """
    out = np.zeros(np.broadcast(a, b).shape)
    for j in range(d):
        out = out + a ** j * b ** (d - 1 - j)
    return out


def drift(q, params: SystemParams) -> np.ndarray:
    """Time derivative of the truncated occupancy; level ``L_max + 1`` is taken as empty.

    Accepts leading batch dimensions: ``q[..., m, l]``.
    """
    q = q.q if isinstance(q, OccupancyVector) else np.asarray(q, dtype=float)
    qt = q_tilde(q, params)
    D = divided_power(qt[..., :-1], qt[..., 1:], params.d)           # (..., K, L)
    rate = np.einsum("km,...kl->...ml", params.arrival_weights, D)   # (..., M, L)
    nxt = np.concatenate([q[..., 1:], np.zeros(q.shape[:-1] + (1,))], axis=-1)
    out = np.zeros_like(q)
    out[..., 1:] = (-params.u[:, None] * (q[..., 1:] - nxt[..., 1:])
                    + params.lam * params.xi * (q[..., :-1] - q[..., 1:]) * rate)
    return out


def _project(q: np.ndarray) -> tuple[np.ndarray, float]:
    clipped = np.clip(q, 0.0, 1.0)
    clipped[..., 0] = 1.0
    viol = float(np.abs(clipped - q).max())
    diffs = np.diff(clipped, axis=-1)
    if diffs.size:
        viol = max(viol, float(diffs.max()))
    if viol > 0:
        clipped = -np.sort(-clipped, axis=-1)
    return clipped, viol


def _rk4(q: np.ndarray, h: float, params: SystemParams) -> np.ndarray:
    k1 = drift(q, params)
    k2 = drift(q + 0.5 * h * k1, params)
    k3 = drift(q + 0.5 * h * k2, params)
    k4 = drift(q + h * k3, params)
    return q + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)


@dataclass
class IntegrationResult:
    times: np.ndarray
    q: np.ndarray
    projection_events: list = field(default_factory=list)


def integrate_array(q0, t_grid: Sequence[float], params: SystemParams,
                    h: float = 1e-3) -> IntegrationResult:
    """RK4 from ``q0`` (any batch shape) sampled at ``t_grid`` (starting at 0 or later).

    Each interval between grid points is split into equal steps of at most ``h``
    so grid points are hit exactly. After every step entries are clamped to
    [0, 1] and levels re-sorted; corrections above 1e-7 are logged.
    """
    q = np.array(q0.q if isinstance(q0, OccupancyVector) else q0, dtype=float)
    grid = np.asarray(t_grid, dtype=float)
    if np.any(np.diff(grid) <= 0) or grid[0] < 0:
        raise ValueError("t_grid must be nonnegative and strictly increasing")
    out = np.empty((len(grid),) + q.shape)
    events = []
    t = 0.0
    for gi, target in enumerate(grid):
        span = target - t
        if span > 0:
            n = max(1, math.ceil(span / h - 1e-9))
            step = span / n
            for s in range(n):
                q = _rk4(q, step, params)
                if not np.all(np.isfinite(q)):
                    raise FloatingPointError(
                        f"non-finite state at t={t + (s + 1) * step:.6g}; "
                        f"last finite levels:\n{np.array2string(out[max(gi - 1, 0)], threshold=200)}")
                q, viol = _project(q)
                if viol > PROJECTION_REPORT_TOL:
                    events.append((t + (s + 1) * step, viol))
        t = target
        out[gi] = q
    return IntegrationResult(grid, out, events)


def integrate(q0, T: float, params: SystemParams, h: float = 1e-3,
              t_grid: Optional[Sequence[float]] = None, dt_out: float = 0.1) -> Trajectory:
    """Integrate the ODE from ``q0`` to time ``T`` and return a :class:`Trajectory`.

    Output is sampled at ``t_grid`` if given, otherwise every ``dt_out``.
    """
    if t_grid is None:
        n = max(1, int(round(T / dt_out)))
        t_grid = np.linspace(0.0, T, n + 1)
    res = integrate_array(q0, t_grid, params, h)
    meta = {"N": "inf", "seed": "", "policy": "ode", "params_hash": params.digest(),
            "projection_events": res.projection_events}
    if res.projection_events:
        warnings.warn(f"{len(res.projection_events)} projection corrections above "
                      f"{PROJECTION_REPORT_TOL:g}", RuntimeWarning, stacklevel=2)
    return Trajectory(res.times, res.q, meta)


# ---------------------------------------------------------------------------
# fixed point
# ---------------------------------------------------------------------------

@dataclass
class IdentityResiduals:
    flow_balance: float
    level: np.ndarray     # residual at l = 1..L_max

    @property
    def max_level(self) -> float:
        return float(np.max(np.abs(self.level))) if self.level.size else 0.0


def fixed_point_identities(q, params: SystemParams) -> IdentityResiduals:
    """Residuals of the aggregate balance relations a fixed point must satisfy.

    ``sum_m v_m u_m q_{m,l} = lam*xi * sum_k w_k qt_{k,l-1}^d`` for every ``l >= 1``;
    at ``l = 1`` this is the flow balance ``sum_m v_m u_m q_{m,1} = lam*xi``.
    """
    q = q.q if isinstance(q, OccupancyVector) else np.asarray(q, dtype=float)
    qt = q_tilde(q, params)
    lhs = (params.v * params.u) @ q[:, 1:]
    rhs = params.lam * params.xi * (params.w @ qt[:, :-1] ** params.d)
    flow = float((params.v * params.u) @ q[:, 1] - params.lam * params.xi)
    return IdentityResiduals(flow, lhs - rhs)


def _stable_step(params: SystemParams) -> float:
    # crude bound on the Jacobian's spectral radius; RK4 is stable for h*rate < 2.7
    arr = params.lam * params.xi * params.d * params.arrival_weights.sum(axis=0).max()
    rate = 2 * (params.u.max() + arr)
    return min(0.05, 1.0 / max(rate, 1e-9))


def fixed_point(params: SystemParams, tol: float = 1e-10, L_max: int = DEFAULT_L_MAX,
                t_max: float = 5000.0, q0=None, identity_tol: float = 1e-8) -> OccupancyVector:
    """Fixed point of the ODE by long-time integration from the empty system.

    Stops once the l1 drift norm and the l1 change over one time unit are both
    below ``tol``. If the deepest level still carries more than 1e-12 the
    truncation depth is doubled and integration resumes.
    """
    if not subcritical_check(params).passed:
        warnings.warn("parameters are not subcritical; the fixed point may not exist",
                      RuntimeWarning, stacklevel=2)
    if q0 is None:
        q = OccupancyVector.empty(params.M, L_max).q
    else:
        q = np.array(q0.q if isinstance(q0, OccupancyVector) else q0, dtype=float)
    h = _stable_step(params)
    t = 0.0
    while True:
        prev = q.copy()
        while t < t_max:
            q = integrate_array(q, [1.0], params, h).q[0]
            t += 1.0
            change = np.abs(q - prev).sum()
            prev = q.copy()
            if np.abs(drift(q, params)).sum() < tol and change < tol:
                break
        else:
            raise RuntimeError(
                f"fixed point not reached by t={t_max:g}: drift l1 = "
                f"{np.abs(drift(q, params)).sum():.3e}, last change = {change:.3e}")
        if q[:, -1].max() <= 1e-12:
            break
        L_old = q.shape[1]
        q = np.concatenate([q, np.zeros((q.shape[0], L_old))], axis=1)
    res = fixed_point_identities(q, params)
    worst = max(abs(res.flow_balance), res.max_level)
    if worst > identity_tol:
        warnings.warn(f"fixed point identity residual {worst:.3e} exceeds {identity_tol:g}",
                      RuntimeWarning, stacklevel=2)
    return OccupancyVector(q)


# ---------------------------------------------------------------------------
# certificates
# ---------------------------------------------------------------------------

@dataclass
class RecursionReport:
    max_residual: float
    checked: list
    skipped: list


def recursion_verify(q, params: SystemParams, floor: float = 1e-8) -> RecursionReport:
    """Re-derive each ``q_{m,l+1}`` from ``q_{m,l}`` and ``q_{m,l-1}`` and compare.

    Only a single step is taken from stored values: iterating the relation
    forward from level 1 amplifies rounding errors roughly d-fold per level,
    so it is useless as a solver. Levels with ``q_{m,l} <= floor`` (or a type
    with zero service rate) are skipped.
    """
    qm = q.q if isinstance(q, OccupancyVector) else np.asarray(q, dtype=float)
    qt = q_tilde(qm, params)
    D = divided_power(qt[:, :-1], qt[:, 1:], params.d)
    rate = params.arrival_weights.T @ D                       # (M, L)
    checked, skipped = [], []
    worst = 0.0
    L = qm.shape[1] - 1
    for m in range(params.M):
        for l in range(1, L):
            if qm[m, l] <= floor or params.u[m] == 0:
                skipped.append((m, l))
                continue
            pred = qm[m, l] - params.lam * params.xi * (qm[m, l - 1] - qm[m, l]) \
                * rate[m, l - 1] / params.u[m]
            worst = max(worst, abs(pred - qm[m, l + 1]))
            checked.append((m, l))
    return RecursionReport(worst, checked, skipped)


@dataclass
class TailCertificate:
    m: int
    ok: bool
    l_m: Optional[int] = None
    a_m: Optional[float] = None
    b_m: Optional[float] = None
    contraction: Optional[float] = None
    violating_level: Optional[int] = None
    max_level_slack: float = 0.0

    def to_text(self) -> str:
        return (f"m={self.m} ok={self.ok} l_m={self.l_m} a_m={self.a_m!r} b_m={self.b_m!r} "
                f"c={self.contraction!r} violating_level={self.violating_level} "
                f"max_level_slack={self.max_level_slack!r}")


def tail_decay_check(q, params: SystemParams, abs_tol: float = 1e-10) -> list[TailCertificate]:
    """Doubly exponential tail certificate per server type.

    With ``qs_l = max_k qt_{k,l}`` and ``c(l) = qs_l**(d-1) * max_m lam*xi/(v_m u_m)``,
    ``l_m`` is the smallest ``l >= 1`` with ``c(l-1) < 1``; the certificate
    asserts ``q_{m,l_m+n} <= qs_{l_m-1} * c**(d**n)``, i.e. ``q_{m,l} <= b_m a_m**(d**l)``
    with ``b_m = qs_{l_m-1}`` and ``a_m = c**(d**-l_m)``. The one-step bound
    ``q_{m,l+1} <= lam*xi/(v_m u_m) * qs_l**d`` is checked at every level
    (up to ``abs_tol`` for numerical fixed points).
    """
    if params.d < 2:
        raise ValueError("doubly exponential decay needs d >= 2")
    qm = q.q if isinstance(q, OccupancyVector) else np.asarray(q, dtype=float)
    qs = q_tilde(qm, params).max(axis=0)
    L = qm.shape[1] - 1
    d = params.d
    lx = params.lam * params.xi
    with np.errstate(divide="ignore"):
        coef = lx / (params.v * params.u)
    cmax = coef.max()
    certs = []
    for m in range(params.M):
        slack = 0.0
        bad_level = None
        for l in range(L):
            bound = coef[m] * qs[l] ** d
            gap = qm[m, l + 1] - bound
            slack = max(slack, gap)
            if gap > abs_tol + 1e-9 * bound:
                bad_level = l + 1
                break
        if bad_level is not None:
            certs.append(TailCertificate(m, False, violating_level=bad_level,
                                         max_level_slack=float(slack)))
            continue
        l_m = None
        for l in range(1, L + 1):
            c = qs[l - 1] ** (d - 1) * cmax
            if c < 1:
                l_m = l
                break
        if l_m is None:
            certs.append(TailCertificate(m, False, violating_level=L, max_level_slack=float(slack)))
            continue
        b = qs[l_m - 1]
        ok = True
        for n in range(0, L - l_m + 1):
            val = qm[m, l_m + n]
            if val <= abs_tol:
                continue
            # log-space comparison avoids underflow of c**(d**n)
            log_bound = (d ** n) * math.log(c) + math.log(b) if c > 0 and b > 0 else -math.inf
            if math.log(val) > log_bound + 1e-9 and val - math.exp(log_bound) > abs_tol:
                ok = False
                bad_level = l_m + n
                break
        a = c ** (float(d) ** -l_m) if c > 0 else 0.0
        certs.append(TailCertificate(m, ok, l_m, float(a), float(b), float(c), bad_level,
                                     float(slack)))
    return certs
