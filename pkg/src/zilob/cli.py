"""Command-line front end: ``zilob {run,impact,granularity,tails,sweep}``.

Outputs go to ``--out DIR`` as ``<subcommand>_<field>.csv`` files, each
starting with ``#`` metadata lines (version, command, full config), plus a
``meta.txt`` that also carries the wall-clock timestamp. Exit codes: 0 on
success, 1 for configuration errors, 2 for runtime failures.
"""

from __future__ import annotations

import argparse
import csv
import datetime as _dt
import itertools
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from .config import RunConfig, load_config
from .deposition import Case, ConfigError, MechanismConfig, derive_seed
from .engine import CsvSink, RunSummary, returns, run
from .fitting import FitError, log_histogram, tail_exponent, write_histogram_csv
from .impact import (ImpactAnalysis, ProbeSet, analyze_surface, build_surface, collect_probes,
                     write_slices_csv, write_surface_csv)
from .metrics import granularity_histogram, sample_granularity, write_granularity_csv

log = logging.getLogger("zilob")

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2


def replica_mechanism(cfg: RunConfig, replica: int) -> MechanismConfig:
    """Replica seeds are derived from the master seed unless there is only one."""
    if cfg.replicas == 1:
        return cfg.mechanism
    return replace(cfg.mechanism, seed=derive_seed(cfg.mechanism.seed, replica))


def _parallel_map(fn: Callable, items: Sequence, jobs: int) -> list:
    if jobs <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, items))


class Output:
    def __init__(self, cfg: RunConfig, command: str):
        self.dir = Path(cfg.output_dir)
        self.dir.mkdir(parents=True, exist_ok=True)
        self.header = cfg.meta_lines(command)
        self.command = command

    def path(self, field: str) -> Path:
        return self.dir / f"{self.command}_{field}.csv"

    def table(self, field: str, header: Sequence[str], rows) -> Path:
        p = self.path(field)
        with open(p, "w", newline="") as fh:
            for line in self.header:
                fh.write(f"# {line}\n")
            w = csv.writer(fh)
            w.writerow(header)
            w.writerows(rows)
        return p

    def meta(self, extra: Sequence[str] = ()) -> None:
        stamp = _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")
        lines = [*self.header, *extra, f"timestamp={stamp}"]
        (self.dir / "meta.txt").write_text("\n".join(lines) + "\n")


# --- run ---------------------------------------------------------------------

SUMMARY_FIELDS = ("mean_spread", "mean_orders_per_side", "mean_bid_orders", "mean_ask_orders",
                  "market_order_fraction", "market_orders", "limit_orders", "cross_match_count",
                  "depletion_count")


def _run_replica(args) -> RunSummary:
    cfg, replica, ts_path = args
    mech = replica_mechanism(cfg, replica)
    sink = CsvSink(ts_path, cfg.decimation, cfg.meta_lines("run") + [f"replica={replica}", f"seed={mech.seed}"])
    summary = run(mech, sinks=[sink])
    summary.series = None
    return summary


def cmd_run(cfg: RunConfig) -> list[RunSummary]:
    out = Output(cfg, "run")
    jobs = []
    for i in range(cfg.replicas):
        field = "timeseries" if cfg.replicas == 1 else f"timeseries_r{i}"
        jobs.append((cfg, i, out.path(field)))
    summaries = _parallel_map(_run_replica, jobs, cfg.jobs)
    rows = []
    for i, s in enumerate(summaries):
        d = s.as_dict()
        rows.append([i, replica_mechanism(cfg, i).seed, s.steps, s.warmup, *(d[f] for f in SUMMARY_FIELDS)])
    out.table("summary", ["replica", "seed", "steps", "warmup", *SUMMARY_FIELDS], rows)
    out.meta()
    for s in summaries:
        print(f"n/side={s.mean_orders_per_side:.2f} <s>={s.mean_spread:.3f} "
              f"market_fraction={s.market_order_fraction:.4f} cross_matches={s.cross_match_count} "
              f"depletions={s.depletion_count}")
    return summaries


# --- impact ------------------------------------------------------------------

def _probe_replica(args) -> ProbeSet:
    cfg, replica = args
    probes, _ = collect_probes(replica_mechanism(cfg, replica), cfg.omega_grid, cfg.probe_period,
                               cfg.n_batches, replica=replica)
    return probes


def impact_analysis(cfg: RunConfig) -> ImpactAnalysis:
    sets = _parallel_map(_probe_replica, [(cfg, i) for i in range(cfg.replicas)], cfg.jobs)
    probes = ProbeSet.concat(sets)
    surface = build_surface(probes, cfg.omega_grid, n_gbins=cfg.g_bins, min_samples=cfg.min_samples)
    return analyze_surface(surface, cfg.max_censored, cfg.collapse_omega_max)


def cmd_impact(cfg: RunConfig) -> ImpactAnalysis:
    out = Output(cfg, "impact")
    analysis = impact_analysis(cfg)
    write_surface_csv(out.path("surface"), analysis.surface, out.header)
    write_slices_csv(out.path("slices"), analysis.slice_rows(), out.header)
    phi, err, cnt = analysis.surface.averaged()
    out.table("averaged", ["omega", "phi", "stderr", "count", "censored_rate"],
              [(int(w), float(p), float(e), int(c), float(r)) for w, p, e, c, r in
               zip(analysis.surface.omega_grid, phi, err, cnt, analysis.surface.censored_rate())])
    verdict = analysis.verdict_lines()
    (out.dir / "impact_verdict.txt").write_text("\n".join(verdict) + "\n")
    out.meta()
    print("\n".join(verdict))
    return analysis


# --- granularity ---------------------------------------------------------------

def cmd_granularity(cfg: RunConfig):
    out = Output(cfg, "granularity")
    samples = []
    for i in range(cfg.replicas):
        samples.extend(sample_granularity(replica_mechanism(cfg, i), cfg.sample_period))
    write_granularity_csv(out.path("samples"), samples, out.header)
    g = np.array([float(s.g) for s in samples if s.valid])
    if len(g) == 0:
        raise FitError("no valid granularity samples (N > 2 never reached)")
    hist = granularity_histogram(g, bins=np.linspace(0, g.max() * (1 + 1e-9), 41))
    write_histogram_csv(out.path("histogram"), hist, out.header)
    stats = [("samples", len(samples)), ("valid", len(g)),
             ("invalid_fraction", 1 - len(g) / max(len(samples), 1)),
             ("mean_g", float(g.mean())), ("median_g", float(np.median(g))),
             ("p_g_below_1", float(np.mean(g < 1)))]
    out.table("summary", ["statistic", "value"], stats)
    out.meta()
    for k, v in stats:
        print(f"{k}={v}")
    return g


# --- tails ---------------------------------------------------------------------

def cmd_tails(cfg: RunConfig):
    out = Output(cfg, "tails")
    rets = []
    for i in range(cfg.replicas):
        s = run(replica_mechanism(cfg, i))
        rets.append(returns(s.series.mid, cfg.lag))
    r = np.concatenate(rets)
    rep = tail_exponent(r, cfg.tail_fraction, cfg.bins_per_decade, seed=cfg.mechanism.seed)
    write_histogram_csv(out.path("histogram"), rep.histogram, out.header)
    out.table("fit", ["method", "gamma", "stderr", "tail_fraction", "n_tail", "x_min", "r_squared"],
              rep.rows())
    out.meta([f"zero_fraction={rep.zero_fraction}", f"power_law={rep.power_law}"])
    print(f"gamma={rep.gamma:.4f} (regression, r2={rep.regression.r_squared:.4f}) "
          f"hill={rep.hill.gamma:.4f}+-{rep.hill.stderr:.3f} zero_fraction={rep.zero_fraction:.4f}")
    return rep


# --- sweep ---------------------------------------------------------------------

SWEEP_HEADER = ("case", "tau", "k", "L", "mean_orders_per_side", "mean_spread", "market_order_fraction",
                "cross_match_count", "market_orders", "depletion_count", "band", "status", "error")


def depth_band(n: float) -> str:
    """Classify mean orders per side against the 50 / 100 thresholds."""
    if n < 40:
        return "n<<50"
    if 50 <= n <= 110:
        return "50<n<100"
    if n > 120:
        return "n>>100"
    return "between"


def sweep_cells(cfg: RunConfig) -> list[MechanismConfig]:
    if not cfg.sweep_case or not cfg.sweep_tau:
        raise ConfigError("sweep", "empty grid: give at least one case and one tau")
    base = cfg.mechanism
    cells = []
    for case, tau in itertools.product(cfg.sweep_case, cfg.sweep_tau):
        case = Case(case)
        if case is Case.CASE2:
            for k in cfg.sweep_k or (base.k,):
                cells.append(replace(base, case=case, tau=tau, k=k))
        else:
            for L in cfg.sweep_L or (base.L,):
                cells.append(replace(base, case=case, tau=tau, L=L))
    return cells


def _sweep_cell(mech: MechanismConfig) -> tuple:
    head = (int(mech.case), mech.tau, mech.k if mech.case is Case.CASE2 else "",
            mech.L if mech.case is not Case.CASE2 else "")
    try:
        s = run(mech.validate())
    except Exception as exc:  # recorded per row; the sweep continues
        return (*head, "", "", "", "", "", "", "", "error", f"{type(exc).__name__}: {exc}")
    return (*head, s.mean_orders_per_side, s.mean_spread, s.market_order_fraction, s.cross_match_count,
            s.market_orders, s.depletion_count, depth_band(s.mean_orders_per_side), "ok", "")


def cmd_sweep(cfg: RunConfig) -> list[tuple]:
    cells = sweep_cells(cfg)
    out = Output(cfg, "sweep")
    rows = _parallel_map(_sweep_cell, cells, cfg.jobs)
    out.table("table", SWEEP_HEADER, rows)
    out.meta()
    for r in rows:
        print(" ".join(str(x) for x in r[:11]))
    return rows


# --- argument parsing ----------------------------------------------------------

COMMANDS = {"run": cmd_run, "impact": cmd_impact, "granularity": cmd_granularity,
            "tails": cmd_tails, "sweep": cmd_sweep}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key = value configuration file")
    common.add_argument("--case", type=int, choices=(1, 2, 3))
    common.add_argument("--pi", type=float)
    common.add_argument("--L", type=int)
    common.add_argument("--k", type=int)
    common.add_argument("--tau", type=int)
    common.add_argument("--steps", type=int)
    common.add_argument("--warmup", type=int)
    common.add_argument("--seed", type=int)
    common.add_argument("--replicas", type=int)
    common.add_argument("--jobs", type=int, help="worker processes for replicas / sweep cells")
    common.add_argument("--out", dest="output_dir")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="zilob", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", parents=[common], help="simulate and write the time series")
    r.add_argument("--decimation", type=int)
    i = sub.add_parser("impact", parents=[common], help="measure the price impact surface")
    i.add_argument("--omega-grid", dest="omega_grid")
    i.add_argument("--omega-max", type=int, help="drop grid volumes above this")
    i.add_argument("--g-bins", dest="g_bins", type=int)
    i.add_argument("--probe-period", dest="probe_period", type=int)
    i.add_argument("--min-samples", dest="min_samples", type=int)
    g = sub.add_parser("granularity", parents=[common], help="sample the granularity distribution")
    g.add_argument("--sample-period", dest="sample_period", type=int)
    t = sub.add_parser("tails", parents=[common], help="fit the return tail exponent")
    t.add_argument("--lag", type=int)
    t.add_argument("--tail-fraction", dest="tail_fraction", type=float)
    s = sub.add_parser("sweep", parents=[common], help="sweep case, tau, k and L and classify book depth")
    s.add_argument("--sweep-case", dest="sweep_case")
    s.add_argument("--sweep-tau", dest="sweep_tau")
    s.add_argument("--sweep-k", dest="sweep_k")
    s.add_argument("--sweep-L", dest="sweep_L")
    return p


def config_from_args(ns: argparse.Namespace) -> RunConfig:
    skip = {"config", "command", "verbose", "omega_max"}
    overrides = {k: v for k, v in vars(ns).items() if k not in skip}
    cfg = load_config(ns.config, overrides)
    omega_max = getattr(ns, "omega_max", None)
    if omega_max is not None:
        grid = tuple(w for w in cfg.omega_grid if w <= omega_max)
        if not grid:
            raise ConfigError("omega_max", f"no grid volume <= {omega_max}")
        cfg = replace(cfg, omega_grid=grid)
    return cfg


def main(argv: Optional[Sequence[str]] = None) -> int:
    ns = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if ns.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s")
    try:
        cfg = config_from_args(ns)
        if ns.command == "sweep":
            sweep_cells(cfg)  # empty grid is a usage error, before any output
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        COMMANDS[ns.command](cfg)
    except (OSError, FitError) as exc:
        print(f"runtime failure: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
