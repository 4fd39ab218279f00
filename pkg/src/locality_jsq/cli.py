"""Command-line entry point: ``locality-jsq design|experiment``.

Exit codes: 0 success, 1 usage or configuration error, 2 infeasible model.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

from . import experiments as ex
from .config import Config, ConfigError, default_config, load_config
from .core_model import capacity_check
from .seeds import seed_list
from .stability import design_p_matrix, subcritical_check

EXIT_OK, EXIT_USAGE, EXIT_INFEASIBLE = 0, 1, 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="locality-jsq", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)

    d = sub.add_parser("design", help="design a compatibility matrix")
    d.add_argument("--config", help="config file (default: bundled example)")
    d.add_argument("--out", help="write the design report here instead of stdout")

    e = sub.add_parser("experiment", help="run a seeded experiment and write CSVs")
    e.add_argument("name", choices=ex.EXPERIMENTS)
    e.add_argument("--config", help="config file (default: bundled example)")
    e.add_argument("--seeds", type=int, help="number of replications (overrides sim.seeds)")
    e.add_argument("--master-seed", type=int, help="overrides sim.master_seed")
    e.add_argument("--out-dir", help=f"output directory (env {ex.OUT_DIR_ENV}, default ./out)")
    e.add_argument("--workers", type=int, help=f"worker processes (env {ex.WORKERS_ENV})")
    return ap


def _config(path) -> Config:
    return default_config() if path is None else load_config(path)


def design_report(cfg: Config) -> tuple[int, str]:
    params = cfg.params(with_p=False)
    if not capacity_check(params):
        cap = float(params.v @ params.u)
        return EXIT_INFEASIBLE, (f"infeasible: lambda*xi = {params.lam * params.xi!r} "
                                 f">= sum v*u = {cap!r}\n")
    p, rho_star = design_p_matrix(params)
    loads, ok = subcritical_check(params.with_p(p))
    rho0 = params.lam * params.xi / float(params.v @ params.u)
    lines = ["# designed compatibility matrix (rows: dispatcher types)"]
    lines.append("compat.p = " + json.dumps(p.ravel().tolist()))
    lines.append(f"rho0 = {rho0!r}")
    lines.append(f"rho_star = {rho_star!r}")
    for m, r in enumerate(loads.tolist()):
        lines.append(f"margin.{m} = {r!r}")
    lines.append(f"subcritical = {str(ok).lower()}")
    return EXIT_OK, "\n".join(lines) + "\n"


def cmd_design(args) -> int:
    code, text = design_report(_config(args.config))
    if code != EXIT_OK:
        sys.stderr.write(text)
        return code
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_experiment(args) -> int:
    cfg = _config(args.config)
    params = cfg.params()
    n = args.seeds if args.seeds is not None else int(cfg.get("sim.seeds", 100))
    master = args.master_seed if args.master_seed is not None else int(cfg.get("sim.master_seed", 0))
    seeds = seed_list(master, n)
    out = Path(args.out_dir or os.environ.get(ex.OUT_DIR_ENV, "out"))
    out.mkdir(parents=True, exist_ok=True)
    horizon = float(cfg.get("sim.horizon", 2.5))
    dt = float(cfg.get("sim.snapshot_dt", 0.1))
    N = int(cfg.get("sim.N", 1000))
    Q = cfg.matrix("init.Q")
    workers = args.workers

    if args.name == "stability_compare":
        res = ex.stability_compare(params, seeds, N, horizon, dt, Q, workers)
        paths = ex.write_stability_compare(res, out)
        print(f"complete > designed (type 0, t={horizon:g}) in {res.wins}/{len(seeds)} pairs")
    elif args.name == "convergence":
        res = ex.convergence(params, seeds, (100, 500, 1000), horizon, dt, Q, workers)
        paths = ex.write_convergence(res, params, master, out)
        for N_, g in res.sup_gap.items():
            print(f"N={N_}: max sup-t gap {g.max():.4f}")
    elif args.name == "uniqueness":
        inits = [m for m in (cfg.matrix("init.Q"), cfg.matrix("init.Q1"), cfg.matrix("init.Q2"))
                 if m is not None]
        if not inits:
            raise ConfigError("uniqueness needs at least init.Q", None, cfg.source)
        res = ex.uniqueness(params, inits)
        paths = ex.write_uniqueness(res, params, out)
        print(f"endpoint spread of q_m1 at T=50: {res.spread:.3e}")
    else:
        res = ex.coupling(params, seeds, (100, 1000), horizon, Q, workers)
        paths = ex.write_coupling(res, out)
        for N_, f in res.final.items():
            print(f"N={N_}: mean Delta/N at t={horizon:g} = {f.mean():.4f}")
    for p in paths:
        print(p)
    return EXIT_OK


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "design":
            return cmd_design(args)
        return cmd_experiment(args)
    except ConfigError as exc:
        sys.stderr.write(f"config error: {exc}\n")
        return EXIT_USAGE
    except OSError as exc:
        sys.stderr.write(f"error: {exc}\n")
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
