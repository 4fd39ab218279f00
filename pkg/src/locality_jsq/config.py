"""Flat ``key = value`` experiment configuration.

Values are JSON literals (numbers, lists, nested lists). Blank lines and
lines starting with ``#`` are ignored. Recognized keys::

    model.K  model.M  model.d
    rates.lambda  rates.xi  rates.u
    fractions.w  fractions.v
    compat.p            row-major list of K*M entries (nested rows also accepted)
    init.Q  init.Q1  init.Q2   per-type queue-length pmfs, rows over lengths 0, 1, ...
    sim.N  sim.horizon  sim.seeds  sim.snapshot_dt  sim.master_seed
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from importlib import resources
from typing import Optional

import numpy as np

from .core_model import SystemParams

KNOWN_KEYS = {
    "model.K", "model.M", "model.d",
    "rates.lambda", "rates.xi", "rates.u",
    "fractions.w", "fractions.v",
    "compat.p",
    "init.Q", "init.Q1", "init.Q2",
    "sim.N", "sim.horizon", "sim.seeds", "sim.snapshot_dt", "sim.master_seed",
}
REQUIRED = ("model.d", "rates.lambda", "rates.xi", "rates.u", "fractions.w", "fractions.v")


class ConfigError(ValueError):
    def __init__(self, message: str, line: Optional[int] = None, source: str = "<config>"):
        where = f"{source}:{line}: " if line is not None else f"{source}: "
        super().__init__(where + message)
        self.line = line


@dataclass
class Config:
    values: dict
    lines: dict = field(default_factory=dict)
    source: str = "<config>"

    def get(self, key, default=None):
        return self.values.get(key, default)

    def _err(self, key, msg):
        return ConfigError(msg, self.lines.get(key), self.source)

    def params(self, with_p: bool = True) -> SystemParams:
        for key in REQUIRED:
            if key not in self.values:
                raise ConfigError(f"missing required key {key!r}", None, self.source)
        w = self.values["fractions.w"]
        v = self.values["fractions.v"]
        K = self.values.get("model.K", len(w))
        M = self.values.get("model.M", len(v))
        if len(w) != K:
            raise self._err("fractions.w", f"fractions.w has {len(w)} entries but model.K = {K}")
        if len(v) != M:
            raise self._err("fractions.v", f"fractions.v has {len(v)} entries but model.M = {M}")
        p = None
        if with_p and "compat.p" in self.values:
            arr = np.asarray(self.values["compat.p"], dtype=float)
            if arr.size != K * M:
                raise self._err("compat.p", f"compat.p needs {K * M} entries, got {arr.size}")
            p = arr.reshape(K, M)
        try:
            return SystemParams(d=self.values["model.d"], lam=self.values["rates.lambda"],
                                xi=self.values["rates.xi"], w=w, v=v,
                                u=self.values["rates.u"], p=p)
        except ValueError as exc:
            raise ConfigError(str(exc), None, self.source) from exc

    def matrix(self, key) -> Optional[np.ndarray]:
        if key not in self.values:
            return None
        arr = np.asarray(self.values[key], dtype=float)
        if arr.ndim != 2:
            raise self._err(key, f"{key} must be a matrix")
        return arr


def parse_config(text: str, source: str = "<config>") -> Config:
    values, lines = {}, {}
    for n, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, val = line.partition("=")
        key = key.strip()
        if not sep:
            raise ConfigError(f"expected 'key = value', got {line!r}", n, source)
        if key not in KNOWN_KEYS:
            raise ConfigError(f"unknown key {key!r}", n, source)
        if key in values:
            raise ConfigError(f"duplicate key {key!r} (first set on line {lines[key]})", n, source)
        try:
            values[key] = json.loads(val.strip())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"bad value for {key}: {exc.msg}", n, source) from None
        lines[key] = n
    return Config(values, lines, source)


def load_config(path) -> Config:
    with open(path) as fh:
        return parse_config(fh.read(), str(path))


def default_config() -> Config:
    text = resources.files("locality_jsq.data").joinpath("default.conf").read_text()
    return parse_config(text, "default.conf")
