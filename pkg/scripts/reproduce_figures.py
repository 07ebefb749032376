#!/usr/bin/env python3
"""Regenerate the three headline figures from scratch.

Runs the four scenario presets at one seed, adds a two-attacker defended run
and a worker-scaling sweep, then renders three SVG charts into the output
directory: loss-vs-time convergence, per-round delay, and per-role load
versus worker count. Everything goes through the public CLI so the charts
are reproducible from the shipped artifacts alone.
"""

from __future__ import annotations

import argparse
import os
import sys

from fedmon.cli import main as fedmon

SCENARIOS = ("no-attack", "attack", "defense-coupled", "defense-decoupled")


def run(argv: list) -> None:
    rc = fedmon([str(a) for a in argv])
    if rc != 0:
        sys.exit(rc)


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--seed", type=int, default=1)
    parser.add_argument("--outdir", default="figures")
    args = parser.parse_args()

    repo = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
    os.makedirs(args.outdir, exist_ok=True)

    for name in SCENARIOS:
        run(["run", "--config", os.path.join(repo, "configs", f"{name}.cfg"),
             "--seed", args.seed, "--outdir", args.outdir])

    # second defended run with two attackers; renamed so the chart legend can
    # tell the two defended curves apart (labels come from file names)
    scratch = os.path.join(args.outdir, "two-attackers")
    run(["run", "--config", os.path.join(repo, "configs", "defense-decoupled.cfg"),
         "--seed", args.seed, "--attackers", 2, "--outdir", scratch])
    two = os.path.join(args.outdir, f"defense-decoupled-2-attackers-seed{args.seed}.csv")
    os.replace(os.path.join(scratch, f"defense-decoupled-seed{args.seed}.csv"), two)

    run(["sweep", "scaling", "--seed", args.seed, "--rounds", 150,
         "--outdir", args.outdir])

    csvs = [os.path.join(args.outdir, f"{n}-seed{args.seed}.csv") for n in SCENARIOS]
    run(["plot", "convergence", *csvs,
         os.path.join(args.outdir, f"defense-decoupled-2-attackers-seed{args.seed}.csv"),
         "--out", os.path.join(args.outdir, "convergence.svg")])
    run(["plot", "delay", *csvs,
         "--out", os.path.join(args.outdir, "round-delay.svg")])
    run(["plot", "scaling", os.path.join(args.outdir, "sweep-scaling.json"),
         "--out", os.path.join(args.outdir, "per-role-load.svg")])
    print(f"three figures and their source artifacts written to {args.outdir}/")


if __name__ == "__main__":
    main()
