"""Command line entry point and run orchestration.

``cthedge run``     simulate, hedge, diagnose; write per-step CSVs and summary.json
``cthedge verify``  same checks, prints the summary, writes nothing
``cthedge crp``     like ``run`` over constant-rebalanced portfolio experts;
                    also writes the sampled portfolio set

Exit status is 0 when every enabled deterministic check passes, 2 when one
fails and 1 on configuration or I/O errors.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import os
import statistics
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional

import numpy as np

from cthedge import __version__
from cthedge.config import CHECKS, RunConfig, load_config
from cthedge.crp import crp_log_paths, crp_spec, sample_simplex, write_crp_csv
from cthedge.diagnostics import Diagnosis, diagnose
from cthedge.engine import run as run_hedge
from cthedge.errors import ConfigError
from cthedge.market import simulate

log = logging.getLogger("cthedge")

EXIT_OK, EXIT_ERROR, EXIT_VIOLATION = 0, 1, 2
MAX_WEIGHT_COLUMNS = 32
#: Checks that only make sense for the NormalHedge policy.
NORMALHEDGE_ONLY = ("lemma2", "quantile", "theorem2_analytic")


def _fmt(x):
    x = float(x)
    return "nan" if math.isnan(x) else f"{x:.17g}"


def _eps_label(eps):
    return repr(float(eps))


def csv_header(quantiles, n):
    cols = ["t", "c", "G", "R_max", "bound_lemma2"]
    cols += [f"quantile_regret_{_eps_label(e)}" for e in quantiles]
    cols += [f"quantile_bound_{_eps_label(e)}" for e in quantiles]
    cols += ["vmax", "vi_max", "c_fd", "c_analytic", "ratio_drift"]
    if n <= MAX_WEIGHT_COLUMNS:
        cols += [f"P_{i + 1}" for i in range(n)]
    return cols


def write_steps_csv(path, diag: Diagnosis, weights, quantiles):
    n = weights.shape[1]
    scales = np.where(np.isnan(diag.scales), 0.0, diag.scales)
    columns = [diag.times, scales, diag.gains, diag.r_max, diag.bound_lemma2]
    columns += [diag.quantile_regret[e] for e in quantiles]
    columns += [diag.quantile_bound[e] for e in quantiles]
    columns += [diag.vmax, diag.vi_max, diag.c_fd, diag.c_analytic, diag.ratio_drift]
    if n <= MAX_WEIGHT_COLUMNS:
        columns += list(weights.T)
    with open(path, "w", newline="") as fh:
        out = csv.writer(fh, lineterminator="\n")
        out.writerow(csv_header(quantiles, n))
        for row in zip(*columns):
            out.writerow([_fmt(v) for v in row])


def _clean(x):
    if x is None:
        return None
    x = float(x)
    return None if not math.isfinite(x) else x


def _enabled_checks(config: RunConfig):
    on = {name: flag for name, flag in config.checks.items()}
    if config.policy.kind != "normalhedge":
        for name in NORMALHEDGE_ONLY:
            on[name] = False
    return on


def run_replica(config: RunConfig, replica: int, out_dir: Optional[str], write_csv: bool = True) -> dict:
    """Simulate, hedge and diagnose one replica; returns its summary entry."""
    seed = config.seed + replica
    spec = config.scenario
    paths = simulate(spec, config.grid, seed)
    if config.crp is not None:
        sample = sample_simplex(config.crp.m, spec.n, config.crp.seed)
        paths = crp_log_paths(paths, sample)
        spec = crp_spec(spec, sample)
    traj = run_hedge(paths, config.policy)
    diag = diagnose(traj, spec, paths, config.quantiles)

    csv_name = None
    if write_csv and out_dir is not None:
        csv_name = f"steps_{seed}.csv"
        write_steps_csv(Path(out_dir) / csv_name, diag, traj.weights, config.quantiles)

    enabled = _enabled_checks(config)
    last = -1
    c_last = diag.scales[last]
    entry = {
        "replica": replica,
        "seed": seed,
        "n_experts": traj.n,
        "csv": csv_name,
        "final": {
            "t": float(diag.times[last]),
            "G": float(diag.gains[last]),
            "max_regret": float(diag.r_max[last]),
            "c": _clean(c_last),
            "bound_lemma2": float(diag.bound_lemma2[last]),
            "quantile_regret": {_eps_label(e): float(diag.quantile_regret[e][last]) for e in config.quantiles},
            "quantile_bound": {_eps_label(e): float(diag.quantile_bound[e][last]) for e in config.quantiles},
        },
        "verdicts": {},
        "sup_ratios": {k: _clean(v) for k, v in diag.sup_ratios.items()},
        "stats": {k: (v if isinstance(v, bool) else _clean(v)) for k, v in diag.stats.items()},
    }
    for name in CHECKS:
        v = diag.verdicts[name].as_dict()
        v["enabled"] = enabled[name]
        entry["verdicts"][name] = v
    log.info("replica %d (seed %d): %s", replica, seed,
             {k: v["passed"] for k, v in entry["verdicts"].items() if v["enabled"]})
    return entry


def _median(values):
    values = [v for v in values if v is not None]
    return statistics.median(values) if values else None


def _max(values):
    values = [v for v in values if v is not None]
    return max(values) if values else None


@dataclass
class RunSummary:
    data: dict
    exit_code: int

    def to_json(self):
        return json.dumps(self.data, indent=2, sort_keys=True) + "\n"


def summarize(config: RunConfig, replicas: List[dict]) -> RunSummary:
    enabled = _enabled_checks(config)
    verdicts = {}
    for name in CHECKS:
        failed = [r["replica"] for r in replicas if not r["verdicts"][name]["passed"]]
        verdicts[name] = {
            "enabled": enabled[name],
            "passed": not failed,
            "failed_replicas": failed,
            "first_violation": next(
                (r["verdicts"][name]["first_violation"] for r in replicas if not r["verdicts"][name]["passed"]),
                None),
        }
    exit_code = EXIT_OK
    if any(v["enabled"] and not v["passed"] for v in verdicts.values()):
        exit_code = EXIT_VIOLATION
    data = {
        "version": __version__,
        "schema": 1,
        "config_hash": config.config_hash,
        "policy": {"kind": config.policy.kind, "eta": config.policy.eta},
        "seeds": [r["seed"] for r in replicas],
        "replicas": replicas,
        "verdicts": verdicts,
        "sup_ratios": {
            "drift": _max(r["sup_ratios"]["drift"] for r in replicas),
            "vol": _max(r["sup_ratios"]["vol"] for r in replicas),
        },
        "medians": {
            "G": _median(r["final"]["G"] for r in replicas),
            "max_regret": _median(r["final"]["max_regret"] for r in replicas),
            "c": _median(r["final"]["c"] for r in replicas),
        },
        "statistical": {
            "paper_vol_constant_holds": all(r["stats"]["paper_vol_constant_holds"] for r in replicas),
            "fd_within_bound_fraction_median": _median(r["stats"]["fd_within_bound_fraction"] for r in replicas),
            "drift_fd_mean_abs_error_median": _median(r["stats"]["drift_fd_mean_abs_error"] for r in replicas),
        },
        "exit_code": exit_code,
    }
    return RunSummary(data, exit_code)


def execute(config: RunConfig, out_dir: Optional[str] = None, workers: Optional[int] = None,
            write_files: bool = True) -> RunSummary:
    """Run every replica and (optionally) write CSVs and ``summary.json``.

    Replica ``r`` uses seed ``config.seed + r``.  Results are collected in
    replica order, so output does not depend on worker scheduling.
    """
    out_dir = out_dir or config.output
    workers = workers or config.workers
    if write_files:
        os.makedirs(out_dir, exist_ok=True)
    target = out_dir if write_files else None
    idx = range(config.replicas)
    if workers > 1 and config.replicas > 1:
        with ProcessPoolExecutor(max_workers=min(workers, config.replicas)) as pool:
            entries = list(pool.map(run_replica, [config] * len(idx), idx, [target] * len(idx)))
    else:
        entries = [run_replica(config, r, target) for r in idx]
    summary = summarize(config, entries)
    if write_files:
        with open(Path(out_dir) / "summary.json", "w") as fh:
            fh.write(summary.to_json())
    return summary


def _configure_logging():
    level = os.environ.get("CTHEDGE_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")


def _report(summary: RunSummary, stream=None):
    stream = stream or sys.stderr
    for name, v in summary.data["verdicts"].items():
        status = "skip" if not v["enabled"] else ("PASS" if v["passed"] else "FAIL")
        print(f"{status:4}  {name}", file=stream)
    ratios = summary.data["sup_ratios"]
    print(f"sup c'/V^M = {ratios['drift']}, sup V_i/V^M = {ratios['vol']}", file=stream)


def build_parser():
    parser = argparse.ArgumentParser(prog="cthedge", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name, text in [("run", "simulate and write per-step CSVs"),
                       ("verify", "run all checks without writing files"),
                       ("crp", "run over constant-rebalanced portfolio experts")]:
        p = sub.add_parser(name, help=text)
        p.add_argument("--config", required=True, help="path to a JSON run config")
        p.add_argument("--workers", type=int, default=None, help="parallel replicas")
        if name != "verify":
            p.add_argument("--out", default=None, help="output directory (overrides config)")
    return parser


def main(argv=None):
    _configure_logging()
    args = build_parser().parse_args(argv)
    try:
        config = load_config(args.config)
        if args.workers is not None and args.workers < 1:
            raise ConfigError("--workers must be at least 1")
        if args.command == "verify":
            summary = execute(config, workers=args.workers, write_files=False)
            sys.stdout.write(summary.to_json())
        else:
            if args.command == "crp" and config.crp is None:
                raise ConfigError("crp requires a 'crp' block in the config")
            out = args.out or config.output
            summary = execute(config, out_dir=out, workers=args.workers)
            if config.crp is not None:
                write_crp_csv(Path(out) / "crp_weights.csv",
                              sample_simplex(config.crp.m, config.scenario.n, config.crp.seed))
    except (ConfigError, OSError) as exc:
        print(f"cthedge: error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    _report(summary)
    return summary.exit_code


if __name__ == "__main__":
    sys.exit(main())
