"""Command line interface.

Exit status is 0 on success, 2 for configuration errors and 3 when the
simulation trips an internal invariant.  Unless ``--out`` is given, runs go
under ``$SWARMGUARD_OUT`` (default ``./runs``).
"""
from __future__ import annotations

import csv
import json
import logging
import os
import re
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from functools import wraps
from pathlib import Path

import click
import numpy as np

from .calibration import calibrate_theta
from .engine import run_scenario
from .errors import ConfigError, InvariantViolation
from .scenario import builtin_names, resolve_scenario
from .trace import analyze_run, find_runs

OUT_ENV = "SWARMGUARD_OUT"
EXIT_CONFIG, EXIT_INVARIANT, EXIT_IO = 2, 3, 1

log = logging.getLogger("swarmguard")


def default_out_dir():
    return Path(os.environ.get(OUT_ENV, "runs"))


def _guarded(fn):
    @wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except ConfigError as exc:
            click.echo(f"config error: {exc}", err=True)
            sys.exit(EXIT_CONFIG)
        except InvariantViolation as exc:
            click.echo(f"invariant violation: {exc}", err=True)
            sys.exit(EXIT_INVARIANT)
        except OSError as exc:
            click.echo(f"i/o error: {exc}", err=True)
            sys.exit(EXIT_IO)
    return wrapper


def parse_seed_range(text):
    """``"A..B"`` (inclusive) or a single integer."""
    m = re.fullmatch(r"\s*(\d+)\s*(?:\.\.\s*(\d+)\s*)?", text)
    if not m:
        raise ConfigError(f"seed range must look like A..B, got {text!r}")
    lo = int(m.group(1))
    hi = int(m.group(2)) if m.group(2) is not None else lo
    if hi < lo:
        raise ConfigError(f"empty seed range {text!r}")
    return list(range(lo, hi + 1))


def _load(scenario, seed=None, steps=None):
    scn = resolve_scenario(scenario)
    if seed is not None:
        scn = replace(scn, seed=seed)
    if steps is not None:
        scn = replace(scn, steps=steps)
    return scn


def _latencies(metrics):
    return [a["latency"] for a in metrics["attacks"]]


def _run_one(args):
    scn, out = args
    _, metrics = run_scenario(scn, out_dir=out)
    return metrics


@click.group()
@click.option("-v", "--verbose", count=True, help="More log output.")
@click.version_option(package_name="artifact")
def main(verbose):
    """Resilient spring-damper swarm simulator."""
    logging.basicConfig(level=logging.WARNING - 10 * min(verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")


@main.command()
@click.option("--scenario", required=True,
              help=f"Scenario YAML path or built-in name ({', '.join(builtin_names())}).")
@click.option("--seed", type=int, default=None, help="Override the scenario seed.")
@click.option("--steps", type=int, default=None, help="Override the horizon.")
@click.option("--out", type=click.Path(file_okay=False), default=None, help="Run directory.")
@_guarded
def run(scenario, seed, steps, out):
    """Run one scenario and write trace.jsonl, summary.csv and events.csv."""
    scn = _load(scenario, seed, steps)
    out = Path(out) if out else default_out_dir() / f"{scn.name}-s{scn.seed}"
    _, metrics = run_scenario(scn, out_dir=out)
    click.echo(f"wrote {out}")
    click.echo(json.dumps(metrics, indent=2, sort_keys=True))


@main.command()
@click.option("--scenario", required=True, help="Scenario YAML path or built-in name.")
@click.option("--seeds", default="0..19", show_default=True, help="Inclusive seed range A..B.")
@click.option("--steps", type=int, default=None, help="Override the horizon.")
@click.option("--out", type=click.Path(file_okay=False), default=None, help="Batch directory.")
@click.option("--workers", type=int, default=1, show_default=True, help="Worker processes.")
@_guarded
def batch(scenario, seeds, steps, out, workers):
    """Run a seed range; one run directory per seed plus batch.csv."""
    base = _load(scenario, steps=steps)
    seed_list = parse_seed_range(seeds)
    out = Path(out) if out else default_out_dir() / f"{base.name}-batch"
    jobs = [(replace(base, seed=s), out / f"seed{s:04d}") for s in seed_list]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_run_one, jobs))
    else:
        results = [_run_one(j) for j in jobs]
    # results come back in seed order either way
    with open(out / "batch.csv", "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["seed", "detection_latency", "false_isolations", "signature_detections",
                    "goal_arrival_step"])
        for s, m in zip(seed_list, results):
            lat = ";".join("" if v is None else str(v) for v in _latencies(m))
            w.writerow([s, lat, m["false_isolations"], m["signature_detections"],
                        "" if m["goal_arrival_step"] is None else m["goal_arrival_step"]])
    click.echo(f"wrote {len(results)} runs under {out}")
    lat = [v for m in results for v in _latencies(m) if v is not None]
    missed = sum(v is None for m in results for v in _latencies(m))
    if lat or missed:
        p = np.percentile(lat, [5, 50, 95]) if lat else [float("nan")] * 3
        click.echo(f"detection latency p5/p50/p95: {p[0]:.1f} / {p[1]:.1f} / {p[2]:.1f} steps; "
                   f"undetected attacks: {missed}")
    click.echo(f"false isolations: {sum(m['false_isolations'] for m in results)}")


@main.command()
@click.option("--trace", "trace_dir", required=True, type=click.Path(exists=True, file_okay=False),
              help="A run directory or a directory of runs.")
@click.option("--json", "as_json", is_flag=True, help="Machine-readable output.")
@_guarded
def analyze(trace_dir, as_json):
    """Summarize the events and metrics of finished runs."""
    runs = find_runs(trace_dir)
    if not runs:
        raise ConfigError(f"no run directories (with events.csv) under {trace_dir}")
    reports = [analyze_run(r) for r in runs]
    if as_json:
        click.echo(json.dumps(reports, indent=2, sort_keys=True))
        return
    kinds = sorted({k for r in reports for k in r["event_counts"]})
    header = ["run", "steps", *kinds, "goal_arrival"]
    rows = [[Path(r["run"]).name, r["steps"], *(r["event_counts"].get(k, 0) for k in kinds),
             r["metrics"].get("goal_arrival_step")] for r in reports]
    widths = [max(len(str(x)) for x in col) for col in zip(header, *rows)]
    for row in (header, *rows):
        click.echo("  ".join(str(x).rjust(w) for x, w in zip(row, widths)))


@main.command("calibrate-theta")
@click.option("--tau", type=int, default=2, show_default=True)
@click.option("--window", type=int, default=20, show_default=True)
@click.option("--chains", type=int, default=2000, show_default=True)
@click.option("--steps", type=int, default=3000, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@_guarded
def calibrate_theta_cmd(tau, window, chains, steps, seed):
    """Monte Carlo fit of the alarm-rate variance factor theta."""
    fit = calibrate_theta(tau=tau, window=window, chains=chains, steps=steps, seed=seed)
    click.echo(json.dumps(fit.as_dict(), indent=2))
    click.echo(f"pin with  monitor: {{theta: {fit.theta:.3f}}}", err=True)


if __name__ == "__main__":
    main()
