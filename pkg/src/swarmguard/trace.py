"""Trace persistence and post-hoc analysis.

A run directory holds

``trace.jsonl``
    one JSON object per step with the full record;
``summary.csv``
    one row per (step, vehicle) with plot-friendly scalars;
``events.csv``
    discrete events (attack on/off, isolations, discoveries, signature
    detections with the object estimate, task completions);
``metrics.json``
    run-level summary metrics.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict
from pathlib import Path

import numpy as np

SUMMARY_COLUMNS = ("step", "vehicle", "x", "y", "vx", "vy", "mode", "n_compromised",
                   "a_plus_max", "a_minus_min", "h_min")
EVENT_COLUMNS = ("step", "kind", "observer", "target", "x", "y", "value")


def _finite_or_none(v):
    return None if isinstance(v, float) and not math.isfinite(v) else v


def _monitor_items(record):
    mon = record["monitors"]
    if mon is None:
        return []
    return [((int(i), int(j)), ap, am) for (i, j), ap, am in zip(mon["pairs"], mon["A_plus"], mon["A_minus"])]


def record_to_json(record):
    n = len(record["mode"])
    out = {
        "step": record["step"],
        "vehicles": [{"id": i, "x": record["x"][i].tolist(), "x_hat": record["x_hat"][i].tolist(),
                      "mode": record["mode"][i], "u": record["u"][i].tolist(),
                      "S": record["S"][i], "R": record["R"][i]} for i in range(n)],
        "monitors": {f"{i}->{j}": {"A_plus": ap.tolist(), "A_minus": am.tolist()}
                     for (i, j), ap, am in _monitor_items(record)},
        "signature": {f"{i}->{j}": h for (i, j), h in sorted(record["signature"].items())},
        "events": [{k: _finite_or_none(v) for k, v in asdict(e).items()} for e in record["events"]],
    }
    return json.dumps(out, separators=(",", ":"))


def summary_rows(record):
    by_obs_plus, by_obs_minus, by_obs_h = {}, {}, {}
    for (i, _), ap, am in _monitor_items(record):
        by_obs_plus[i] = max(by_obs_plus.get(i, -np.inf), float(ap.max()))
        by_obs_minus[i] = min(by_obs_minus.get(i, np.inf), float(am.min()))
    for (i, _), h in record["signature"].items():
        by_obs_h[i] = min(by_obs_h.get(i, np.inf), h)
    rows = []
    for i, mode in enumerate(record["mode"]):
        rows.append((record["step"], i, *(repr(float(v)) for v in record["x"][i]), mode, len(record["R"][i]),
                     by_obs_plus.get(i, ""), by_obs_minus.get(i, ""), by_obs_h.get(i, "")))
    return rows


class TraceWriter:
    """Streams records of one run into ``out_dir``."""

    def __init__(self, out_dir):
        self.out_dir = Path(out_dir)
        try:
            self.out_dir.mkdir(parents=True, exist_ok=True)
            self._trace = open(self.out_dir / "trace.jsonl", "w")
            self._summary_f = open(self.out_dir / "summary.csv", "w", newline="")
            self._events_f = open(self.out_dir / "events.csv", "w", newline="")
        except OSError as exc:
            raise OSError(f"cannot write trace files under {self.out_dir}: {exc.strerror}") from exc
        self._summary = csv.writer(self._summary_f)
        self._events = csv.writer(self._events_f)
        self._summary.writerow(SUMMARY_COLUMNS)
        self._events.writerow(EVENT_COLUMNS)

    def write(self, record):
        self._trace.write(record_to_json(record) + "\n")
        self._summary.writerows(summary_rows(record))
        for e in record["events"]:
            self._events.writerow([e.step, e.kind, e.observer, e.target,
                                   *("" if math.isnan(v) else repr(v) for v in (e.x, e.y, e.value))])

    def close(self, metrics=None):
        for f in (self._trace, self._summary_f, self._events_f):
            f.close()
        if metrics is not None:
            (self.out_dir / "metrics.json").write_text(json.dumps(metrics, indent=2, sort_keys=True) + "\n")

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        if not self._trace.closed:
            self.close()


def read_events(path):
    path = Path(path)
    if path.is_dir():
        path = path / "events.csv"
    try:
        with open(path, newline="") as f:
            rows = list(csv.DictReader(f))
    except OSError as exc:
        raise OSError(f"cannot read events from {path}: {exc.strerror}") from exc
    for r in rows:
        r["step"] = int(r["step"])
        r["observer"] = int(r["observer"])
        r["target"] = int(r["target"])
        for k in ("x", "y", "value"):
            r[k] = float(r[k]) if r[k] else float("nan")
    return rows


def analyze_run(run_dir):
    """Event counts and headline metrics of one run directory."""
    run_dir = Path(run_dir)
    events = read_events(run_dir)
    counts = {}
    for e in events:
        counts[e["kind"]] = counts.get(e["kind"], 0) + 1
    metrics = {}
    mpath = run_dir / "metrics.json"
    if mpath.exists():
        metrics = json.loads(mpath.read_text())
    n_steps = 0
    tpath = run_dir / "trace.jsonl"
    if tpath.exists():
        with open(tpath) as f:
            n_steps = sum(1 for _ in f)
    return {"run": str(run_dir), "steps": n_steps, "event_counts": counts, "metrics": metrics}


def find_runs(root):
    root = Path(root)
    if (root / "events.csv").exists():
        return [root]
    return sorted(p.parent for p in root.glob("*/events.csv"))
