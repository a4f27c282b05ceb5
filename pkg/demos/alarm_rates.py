"""Alarm-rate traces of the monitors that watch a spoofed vehicle.

    python3 demos/alarm_rates.py [--seed 0] [--out alarm_rates.png]

Needs matplotlib (``pip install artifact[demos]``).
"""
import argparse
from dataclasses import replace

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from swarmguard.engine import World, run_step
from swarmguard.scenario import builtin_scenario


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out", default="alarm_rates.png")
    args = ap.parse_args()

    scn = replace(builtin_scenario("spoof"), seed=args.seed)
    target = scn.attacks[0].target
    world = World(scn)
    elems = scn.monitor.elements
    rates = np.full((scn.steps, 2, len(elems)), np.nan)
    observer = None
    for k in range(scn.steps):
        run_step(world, record=False)
        if observer is None:
            hit = [a.id for a in world.agents if target in a.compromised]
            # follow one fixed observer; before anyone flags, vehicle 1 is a neighbour
            watch = hit[0] if hit else 1
            if hit:
                observer = hit[0]
        else:
            watch = observer
        if world.monitored[watch, target]:
            rates[k, 0] = world.bank.rate_plus[watch, target]
            rates[k, 1] = world.bank.rate_minus[watch, target]

    b = world.bank.bounds
    fig, ax = plt.subplots(figsize=(8, 3.5))
    names = ["x", "y", "vx", "vy"]
    for s, side in enumerate("+-"):
        for c, q in enumerate(elems):
            ax.plot(rates[:, s, c], lw=0.8, ls="-" if s == 0 else ":", label=f"A{side} {names[q]}")
    ax.axhline(b.omega_plus, color="k", ls="--", lw=0.8)
    ax.axhline(b.omega_minus, color="k", ls="--", lw=0.8)
    ax.axhline(b.expected_rate, color="k", lw=0.5)
    ax.axvline(scn.attacks[0].start_step, color="r", lw=0.8)
    ax.set_xlabel("step")
    ax.set_ylabel(f"alarm rate on vehicle {target}")
    ax.legend(fontsize=7, ncol=4)
    fig.tight_layout()
    fig.savefig(args.out, dpi=120)
    print("observers that isolated", target, ":", [a.id for a in world.agents if target in a.compromised])
    print("plotted observer", observer)
    print("wrote", args.out)


if __name__ == "__main__":
    main()
