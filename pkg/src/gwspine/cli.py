"""Command line entry point: ``gwspine``.

Subcommands::

    gwspine simulate   [--config F] [--model NAME] [--horizon T] [--n-reps N] ...
    gwspine verify     paper-core | <check>  [--check NAME ...]
    gwspine models list [--json]
    gwspine plot-data  --report report.json [--series NAME ...]

``--seed`` and ``--jobs`` fall back to ``GWSPINE_SEED`` / ``GWSPINE_JOBS``,
then to the config file.  ``verify`` exits with status 1 iff a check fails.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
import time
from pathlib import Path

from . import _backend, farm, models, verify
from .config import ExperimentConfig, ModelRef, SimulateSection
from .errors import ConfigError, GWSpineError, UnknownSeries

SEED_ENV = "GWSPINE_SEED"

log = logging.getLogger("gwspine")

# per-series column names for the wide CSV files
SERIES_COLUMNS = {
    "lln_ks": ("t", "ks_distance"),
    "clt_qq": ("theoretical", "empirical"),
    "w_hist": ("bin_center", "density"),
    "stationary_hist": ("x", "density"),
    "N_pmf": ("k", "frequency"),
}


def _parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML experiment file")
    common.add_argument("--seed", type=int, help=f"master seed (env {SEED_ENV})")
    common.add_argument("--jobs", type=int, help=f"worker threads (env {farm.JOBS_ENV})")
    common.add_argument("--out-dir", help="output directory")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="gwspine", description="Branching particle systems and spine checks")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", parents=[common], help="simulate a catalog model and export CSVs")
    s.add_argument("--model", help="catalog model (overrides the config)")
    s.add_argument("--horizon", type=float)
    s.add_argument("--n-reps", type=int)
    s.add_argument("--snapshot", type=float, action="append", dest="snapshots",
                   help="snapshot time (repeatable)")
    s.add_argument("--stationary-run", type=float, help="also estimate the stationary law")

    v = sub.add_parser("verify", parents=[common], help="run a verification suite or one check")
    v.add_argument("target", nargs="?", help="suite name (paper-core) or a check name")
    v.add_argument("--check", action="append", dest="checks", help="run only this check (repeatable)")

    m = sub.add_parser("models", help="model catalog")
    m.add_argument("action", choices=["list"])
    m.add_argument("--json", action="store_true")

    pd = sub.add_parser("plot-data", parents=[common], help="CSV plot data from a report")
    pd.add_argument("--report", required=True, help="report.json written by verify")
    pd.add_argument("--series", action="append", help="series name (repeatable); default all")
    return p


def _settings(args) -> ExperimentConfig:
    cfg = ExperimentConfig.load(args.config) if getattr(args, "config", None) else ExperimentConfig()
    seed = args.seed
    if seed is None and os.environ.get(SEED_ENV):
        try:
            seed = int(os.environ[SEED_ENV])
        except ValueError:
            raise ConfigError(f"{SEED_ENV} must be an integer") from None
    if seed is not None:
        cfg.seed = seed
    if args.jobs is not None:
        cfg.jobs = args.jobs
    elif os.environ.get(farm.JOBS_ENV):
        cfg.jobs = farm.resolve_jobs(None)
    if args.out_dir:
        cfg.out_dir = args.out_dir
    return cfg


# --------------------------------------------------------------------------
# verify


def _fmt(v) -> str:
    if isinstance(v, str):
        return v
    return f"{v:.4g}"


def format_table(reports, timings=None) -> str:
    rows = [("check", "result", "lhs", "rhs", "z", "failed criteria", "time")]
    for i, r in enumerate(reports):
        failed = [c["name"] for c in r.criteria if not c["passed"]]
        if r.error:
            failed = [r.error]
        t = f"{timings[i]:.1f}s" if timings else ""
        rows.append((r.name, "PASS" if r.passed else "FAIL", _fmt(r.lhs.mean), _fmt(r.rhs.mean),
                     _fmt(r.z), ", ".join(failed) or "-", t))
    widths = [max(len(row[j]) for row in rows) for j in range(len(rows[0]))]
    lines = ["  ".join(c.ljust(w) for c, w in zip(row, widths)).rstrip() for row in rows]
    lines.insert(1, "  ".join("-" * w for w in widths))
    n_fail = sum(not r.passed for r in reports)
    lines.append(f"{len(reports) - n_fail}/{len(reports)} checks passed")
    return "\n".join(lines)


def report_json(reports) -> str:
    return json.dumps([r.to_dict() for r in reports], indent=2, sort_keys=False) + "\n"


def _cmd_verify(args) -> int:
    cfg = _settings(args)
    target = args.target
    if target in verify.SUITES:
        cfg.suite = target
        checks = cfg.build_checks(cfg.jobs)
    elif target is not None:
        full = ExperimentConfig(seed=cfg.seed, jobs=cfg.jobs, suite="paper-core", checks=cfg.checks)
        checks = full.build_checks(cfg.jobs)
        if target not in checks:
            raise ConfigError(f"unknown suite or check {target!r}; known: {sorted(verify.SUITES)} "
                              f"and {sorted(checks)}")
        checks = {target: checks[target]}
    else:
        # an empty check list is valid and yields an empty report
        checks = cfg.build_checks(cfg.jobs)
    if args.checks:
        missing = set(args.checks) - set(checks)
        if missing:
            raise ConfigError(f"unknown checks {sorted(missing)}")
        checks = {k: v for k, v in checks.items() if k in args.checks}

    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    timings = []
    start = [time.perf_counter()]

    def progress(rep):
        now = time.perf_counter()
        timings.append(now - start[0])
        start[0] = now
        log.info("%s: %s (%.1fs)", rep.name, "pass" if rep.passed else "FAIL", timings[-1])

    log.info("backend: %s, jobs: %d", _backend.NAME, farm.resolve_jobs(cfg.jobs))
    reports = verify.run_checks(checks, progress)
    (out / "report.json").write_text(report_json(reports))
    write_plot_data([r.to_dict() for r in reports], out)
    print(format_table(reports, timings))
    print(f"report: {out / 'report.json'}")
    return 0 if all(r.passed for r in reports) else 1


# --------------------------------------------------------------------------
# plot data


def collect_series(report: list[dict], which=None) -> dict[str, dict]:
    """``{"check/series": {"x": [...], "y": [...]}}``; ``which`` filters by
    full name or bare series name."""
    found = {}
    for r in report:
        for s, data in (r.get("series") or {}).items():
            found[f"{r['name']}/{s}"] = (s, data)
    if which:
        sel = {}
        for w in which:
            hits = {k: v for k, v in found.items() if k == w or v[0] == w}
            if not hits:
                raise UnknownSeries(f"series {w!r} not in report; available: {sorted(found)}")
            sel.update(hits)
        found = sel
    return {k: v[1] | {"kind": v[0]} for k, v in found.items()}


def write_plot_data(report: list[dict], out_dir, which=None) -> list[Path]:
    """Long-format ``plot_data.csv`` (series,x,y) plus one wide CSV per series."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    series = collect_series(report, which)
    paths = [out / "plot_data.csv"]
    with open(paths[0], "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["series", "x", "y"])
        for name, data in series.items():
            for x, y in zip(data["x"], data["y"]):
                w.writerow([name, x, y])
    for name, data in series.items():
        cols = SERIES_COLUMNS.get(data["kind"], ("x", "y"))
        p = out / (name.replace("/", "__") + ".csv")
        with open(p, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(cols)
            w.writerows(zip(data["x"], data["y"]))
        paths.append(p)
    return paths


def _cmd_plot_data(args) -> int:
    cfg = _settings(args)
    try:
        report = json.loads(Path(args.report).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read report {args.report}: {exc}") from None
    out = cfg.out_dir if args.out_dir else str(Path(args.report).parent)
    for p in write_plot_data(report, out, args.series):
        print(p)
    return 0


# --------------------------------------------------------------------------
# simulate


def _cmd_simulate(args) -> int:
    from .auxiliary import estimate_stationary
    from .branching import simulate_population

    cfg = _settings(args)
    sec = cfg.simulate or SimulateSection(ModelRef(args.model or "yule_splitted_bm"))
    if args.model:
        sec.model = ModelRef(args.model, sec.model.overrides if sec.model.name == args.model else {})
    if args.horizon is not None:
        sec.horizon = args.horizon
    if args.n_reps is not None:
        sec.n_reps = args.n_reps
    if args.snapshots:
        sec.snapshot_times = list(args.snapshots)
    if args.stationary_run is not None:
        sec.stationary_run = args.stationary_run
    model = sec.model.build()
    snaps = sorted(set(sec.snapshot_times) | {sec.horizon})
    pop = simulate_population(model, sec.horizon, n_reps=sec.n_reps, seed=cfg.seed, domain="cli",
                              obs_times=snaps, max_nodes=sec.max_nodes)
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    pop.write_snapshot(out / "snapshot.csv", snaps)
    files = [out / "snapshot.csv"]
    if sec.tree_dump:
        for i in range(len(pop)):
            p = out / f"tree_{i}.tsv"
            with open(p, "w") as fh:
                pop.tree(i).dump(fh)
            files.append(p)
    summary = {"model": model.name, "params": _jsonable(sec.model.overrides), "seed": cfg.seed,
               "horizon": sec.horizon, "n_reps": sec.n_reps,
               "alive": {repr(t): [int(v) for v in pop.counts_alive(t)] for t in snaps},
               "dead": [int(v) for v in pop.counts_dead(sec.horizon)]}
    if sec.stationary_run:
        law = estimate_stationary(model, sec.stationary_run, seed=cfg.seed)
        law.write_csv(out / "stationary.csv")
        files.append(out / "stationary.csv")
        summary["stationary_moments"] = [m.mean for m in law.moments(4)]
    (out / "summary.json").write_text(json.dumps(summary, indent=2) + "\n")
    files.append(out / "summary.json")
    for f in files:
        print(f)
    return 0


def _jsonable(d):
    return json.loads(json.dumps(d, default=lambda o: list(o) if isinstance(o, tuple) else str(o)))


# --------------------------------------------------------------------------
# models


def _cmd_models(args) -> int:
    rows = []
    for name in models.names():
        spec = models.get(name)
        rows.append({"name": name, "state_space": spec.state_space, "description": spec.description,
                     "defaults": _jsonable(dict(spec.defaults))})
    if args.json:
        print(json.dumps(rows, indent=2))
        return 0
    w = max(len(r["name"]) for r in rows)
    for r in rows:
        print(f"{r['name'].ljust(w)}  [{r['state_space']}]  {r['description']}")
        print(" " * (w + 2) + ", ".join(f"{k}={v}" for k, v in r["defaults"].items()))
    return 0


COMMANDS = {"simulate": _cmd_simulate, "verify": _cmd_verify, "models": _cmd_models,
            "plot-data": _cmd_plot_data}


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if getattr(args, "verbose", False) else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        return COMMANDS[args.command](args)
    except GWSpineError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
