"""Seeded replication harness for the desk-scale experiments."""

from __future__ import annotations

import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from . import meanfield
from .core_model import OccupancyVector, SystemParams
from .graph import complete_graph, irg_sample
from .seeds import split_seed
from .simulator import initial_from_pmf, run_coupled, run_jsq_d
from .trajectory import Trajectory

WORKERS_ENV = "JSQD_WORKERS"
OUT_DIR_ENV = "JSQD_OUT_DIR"
EXPERIMENTS = ("stability_compare", "convergence", "uniqueness", "coupling")


def worker_count(requested: Optional[int] = None) -> int:
    if requested is None:
        requested = int(os.environ.get(WORKERS_ENV, os.cpu_count() or 1))
    return max(1, requested)


def fan_out(fn: Callable, tasks: list, workers: Optional[int] = None) -> list:
    """Apply ``fn`` to each task on a bounded pool; results in task order."""
    n = worker_count(workers)
    if n == 1 or len(tasks) <= 1:
        return [fn(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=min(n, len(tasks))) as pool:
        return list(pool.map(fn, tasks))


def _initial(graph, Q):
    return None if Q is None else initial_from_pmf(graph, Q)


# -- replication kernels (module level so they pickle) -------------------------

def _stability_pair(task):
    params, N, horizon, dt, seed, Q = task
    gseed, sseed = split_seed(seed, 0), split_seed(seed, 1)
    designed = irg_sample(params, N, gseed)
    full = complete_graph(params.with_p(np.ones((params.K, params.M))), N)
    t_full = run_jsq_d(full, params.with_p(np.ones((params.K, params.M))), horizon, dt,
                       sseed, _initial(full, Q), L_max=32)
    t_des = run_jsq_d(designed, params, horizon, dt, sseed, _initial(designed, Q), L_max=32)
    return t_full.mean_queue_length(), t_des.mean_queue_length(), t_full.times


def _convergence_run(task):
    params, N, horizon, dt, seed, Q = task
    g = irg_sample(params, N, split_seed(seed, 0))
    tr = run_jsq_d(g, params, horizon, dt, split_seed(seed, 1), _initial(g, Q), L_max=32)
    return tr.q


def _coupling_run(task):
    params, N, horizon, seed, Q = task
    g = irg_sample(params, N, split_seed(seed, 0))
    run = run_coupled(g, params, horizon, split_seed(seed, 1), _initial(g, Q),
                      keep_log=False)
    return run.times, run.delta


# -- experiments ---------------------------------------------------------------

@dataclass
class StabilityCompare:
    times: np.ndarray
    mean_full: np.ndarray          # (T, M)
    mean_designed: np.ndarray
    final_type0: np.ndarray        # (n_seeds, 2): complete, designed at the horizon
    seeds: list

    @property
    def wins(self) -> int:
        return int(np.sum(self.final_type0[:, 0] > self.final_type0[:, 1]))


def stability_compare(params: SystemParams, seeds: list, N: int = 1000, horizon: float = 2.5,
                      dt: float = 0.1, Q=None, workers: Optional[int] = None) -> StabilityCompare:
    """Complete graph versus the configured IRG(p), paired by seed."""
    order = sorted(seeds)
    res = fan_out(_stability_pair, [(params, N, horizon, dt, s, Q) for s in order], workers)
    full = np.stack([r[0] for r in res])
    des = np.stack([r[1] for r in res])
    final = np.column_stack([full[:, -1, 0], des[:, -1, 0]])
    return StabilityCompare(res[0][2], full.mean(axis=0), des.mean(axis=0), final, order)


@dataclass
class Convergence:
    times: np.ndarray
    ode: np.ndarray                 # (T, M, L+1)
    means: dict                     # N -> (T, M, L+1)
    sup_gap: dict                   # N -> (M, 2) gaps on levels 1 and 2


def convergence(params: SystemParams, seeds: list, Ns=(100, 500, 1000), horizon: float = 2.5,
                dt: float = 0.1, Q=None, workers: Optional[int] = None,
                L_max: int = 32) -> Convergence:
    order = sorted(seeds)
    means, gaps = {}, {}
    q0 = OccupancyVector.from_pmf(Q, L_max) if Q is not None else OccupancyVector.empty(params.M, L_max)
    times = None
    ode = None
    for N in Ns:
        runs = fan_out(_convergence_run, [(params, N, horizon, dt, s, Q) for s in order], workers)
        mean = np.mean(np.stack(runs), axis=0)
        if ode is None:
            times = np.arange(mean.shape[0]) * dt
            ode = meanfield.integrate(q0, horizon, params, t_grid=times).q
        means[N] = mean
        gaps[N] = np.abs(mean[:, :, 1:3] - ode[:, :, 1:3]).max(axis=0)
    return Convergence(times, ode, means, gaps)


@dataclass
class Uniqueness:
    times: np.ndarray
    trajectories: list              # one (T, M, L+1) array per initial condition

    @property
    def endpoints(self) -> np.ndarray:
        return np.stack([tr[-1, :, 1] for tr in self.trajectories])

    @property
    def spread(self) -> float:
        e = self.endpoints
        return float((e.max(axis=0) - e.min(axis=0)).max())


def uniqueness(params: SystemParams, initials: list, T: float = 50.0, dt: float = 0.5,
               L_max: int = 32, h: float = 1e-3) -> Uniqueness:
    times = np.arange(0.0, T + 1e-9, dt)
    q0 = np.stack([OccupancyVector.from_pmf(Q, L_max).q for Q in initials])
    res = meanfield.integrate_array(q0, times, params, h)
    return Uniqueness(times, [res.q[:, i] for i in range(len(initials))])


@dataclass
class CouplingSummary:
    times: np.ndarray
    mean_delta_over_N: dict         # N -> (T,)
    final: dict                     # N -> per-seed delta/N at the horizon


def coupling(params: SystemParams, seeds: list, Ns=(100, 1000), horizon: float = 2.5,
             Q=None, workers: Optional[int] = None) -> CouplingSummary:
    order = sorted(seeds)
    curves, finals, times = {}, {}, None
    for N in Ns:
        runs = fan_out(_coupling_run, [(params, N, horizon, s, Q) for s in order], workers)
        times = runs[0][0]
        stack = np.stack([r[1] for r in runs]) / N
        curves[N] = stack.mean(axis=0)
        finals[N] = stack[:, -1]
    return CouplingSummary(times, curves, finals)


# -- CSV emission --------------------------------------------------------------

def _mean_trajectory(times, q, N, seed, policy, params) -> Trajectory:
    return Trajectory(times, q, {"N": N, "seed": seed, "policy": policy,
                                 "params_hash": params.digest()})


def write_stability_compare(res: StabilityCompare, out: Path) -> list[Path]:
    p1 = out / "stability_compare_mean.csv"
    with open(p1, "w") as fh:
        fh.write("t,system,m,mean_queue_length\n")
        for name, arr in (("complete", res.mean_full), ("designed", res.mean_designed)):
            for ti, t in enumerate(res.times.tolist()):
                for m in range(arr.shape[1]):
                    fh.write(f"{t!r},{name},{m},{arr[ti, m]!r}\n")
    p2 = out / "stability_compare_final.csv"
    with open(p2, "w") as fh:
        fh.write("seed,complete_type0,designed_type0\n")
        for s, (a, b) in zip(res.seeds, res.final_type0.tolist()):
            fh.write(f"{s},{a!r},{b!r}\n")
    return [p1, p2]


def write_convergence(res: Convergence, params, master: int, out: Path) -> list[Path]:
    paths = []
    ode = out / "convergence_ode.csv"
    _mean_trajectory(res.times, res.ode, "inf", master, "ode", params).to_csv(ode)
    paths.append(ode)
    for N, mean in res.means.items():
        p = out / f"convergence_N{N}.csv"
        _mean_trajectory(res.times, mean, N, master, f"jsq({params.d})-mean", params).to_csv(p)
        paths.append(p)
    gap = out / "convergence_gap.csv"
    with open(gap, "w") as fh:
        fh.write("N,m,l,sup_gap\n")
        for N, g in res.sup_gap.items():
            for m in range(g.shape[0]):
                for li, l in enumerate((1, 2)):
                    fh.write(f"{N},{m},{l},{g[m, li]!r}\n")
    paths.append(gap)
    return paths


def write_uniqueness(res: Uniqueness, params, out: Path) -> list[Path]:
    paths = []
    for i, tr in enumerate(res.trajectories):
        p = out / f"uniqueness_init{i}.csv"
        _mean_trajectory(res.times, tr, "inf", i, "ode", params).to_csv(p)
        paths.append(p)
    ep = out / "uniqueness_endpoints.csv"
    with open(ep, "w") as fh:
        fh.write("init,m,q1_T\n")
        for i, row in enumerate(res.endpoints.tolist()):
            for m, val in enumerate(row):
                fh.write(f"{i},{m},{val!r}\n")
    paths.append(ep)
    return paths


def write_coupling(res: CouplingSummary, out: Path) -> list[Path]:
    paths = []
    for N, curve in res.mean_delta_over_N.items():
        p = out / f"coupling_N{N}.csv"
        with open(p, "w") as fh:
            fh.write("t,delta,delta_over_N\n")
            for t, c in zip(res.times.tolist(), curve.tolist()):
                fh.write(f"{t!r},{c * N!r},{c!r}\n")
        paths.append(p)
    return paths
