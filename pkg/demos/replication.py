"""Run the built-in replication scenario and plot paths and event markers.

    python3 demos/replication.py [--seed 0] [--steps 3000] [--out replication.png]

Needs matplotlib (``pip install artifact[demos]``).
"""
import argparse

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np
from dataclasses import replace

from swarmguard.engine import run_scenario
from swarmguard.scenario import builtin_scenario


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--steps", type=int, default=3000)
    ap.add_argument("--out", default="replication.png")
    args = ap.parse_args()

    scn = replace(builtin_scenario("replication"), seed=args.seed, steps=args.steps)
    paths = []
    world, metrics = run_scenario(scn, callback=lambda w, rec: paths.append(rec["x"][:, :2].copy()))
    paths = np.array(paths)
    attacked = {a.target for a in scn.attacks}

    fig, ax = plt.subplots(figsize=(10, 4))
    pts = world.obstacles
    if len(pts):
        ax.plot(pts[:, 0], pts[:, 1], "k.", ms=2)
    ax.plot(*np.array(scn.objects).T, "g*", ms=12, label="object")
    for i in range(scn.n_vehicles):
        style = "r-" if i in attacked else "b-"
        ax.plot(paths[:, i, 0], paths[:, i, 1], style, lw=0.8)
    for e in world.events:
        if e.kind == "signature":
            ax.plot(e.x, e.y, "mx")
    ax.plot(*scn.goal, "ko", label="goal")
    ax.set_aspect("equal")
    ax.set_title(f"seed {args.seed}: red = tampered broadcasts, x = object estimates")
    ax.legend(loc="upper left")
    fig.tight_layout()
    fig.savefig(args.out, dpi=120)

    for e in world.events:
        if e.kind in ("discover", "signature", "task_complete", "attack_on"):
            print(f"{e.step:5d} {e.kind:14s} observer {e.observer:2d} target {e.target:2d}")
    print("final compromised sets:", metrics["final_compromised"])
    print("wrote", args.out)


if __name__ == "__main__":
    main()
