"""Time-indexed occupancy snapshots and their CSV form."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core_model import OccupancyVector, check_occupancy


@dataclass
class Trajectory:
    """Snapshots ``q[t_index, m, l]`` at strictly increasing ``times``.

    ``meta`` carries at least ``N``, ``seed``, ``policy`` and ``params_hash``;
    extra keys (diagnostics) are allowed but only those four reach the CSV.
    """

    times: np.ndarray
    q: np.ndarray
    meta: dict = field(default_factory=dict)

    HEADER_KEYS = ("N", "seed", "policy", "params_hash")

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.q = np.asarray(self.q, dtype=float)
        if self.q.ndim != 3 or len(self.q) != len(self.times):
            raise ValueError("q must have shape (T, M, L+1) matching times")
        if np.any(np.diff(self.times) <= 0):
            raise ValueError("snapshot times must be strictly increasing")

    def __len__(self) -> int:
        return len(self.times)

    def snapshot(self, idx: int) -> OccupancyVector:
        return OccupancyVector(self.q[idx])

    def check(self) -> None:
        for snap in self.q:
            check_occupancy(snap, tol=1e-9)

    def mean_queue_length(self) -> np.ndarray:
        """Per-type mean queue length ``sum_{l>=1} q[m, l]`` at each time."""
        return self.q[:, :, 1:].sum(axis=2)

    def to_csv(self, path) -> None:
        T, M, L1 = self.q.shape
        tt = np.repeat(self.times, M * L1)
        mm = np.tile(np.repeat(np.arange(M), L1), T)
        ll = np.tile(np.arange(L1), T * M)
        with open(path, "w") as fh:
            for key in self.HEADER_KEYS:
                fh.write(f"# {key}={self.meta.get(key, '')}\n")
            fh.write("t,m,l,q\n")
            for t, m, l, val in zip(tt.tolist(), mm.tolist(), ll.tolist(),
                                    self.q.reshape(-1).tolist()):
                fh.write(f"{t!r},{m},{l},{val!r}\n")

    @classmethod
    def from_csv(cls, path) -> "Trajectory":
        meta = {}
        with open(path) as fh:
            lines = fh.read().splitlines()
        body = []
        for line in lines:
            if line.startswith("#"):
                key, _, val = line[1:].strip().partition("=")
                meta[key] = val
            elif line and not line.startswith("t,"):
                body.append(line)
        rows = np.array([[float(x) for x in b.split(",")] for b in body])
        times = np.unique(rows[:, 0])
        M = int(rows[:, 1].max()) + 1
        L1 = int(rows[:, 2].max()) + 1
        q = np.zeros((len(times), M, L1))
        ti = np.searchsorted(times, rows[:, 0])
        q[ti, rows[:, 1].astype(int), rows[:, 2].astype(int)] = rows[:, 3]
        for key in ("N", "seed"):
            if meta.get(key, "").lstrip("-").isdigit():
                meta[key] = int(meta[key])
        return cls(times, q, meta)
