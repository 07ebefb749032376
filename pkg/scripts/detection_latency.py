#!/usr/bin/env python3
"""Measure detection latency and exclusion behavior across a seed band.

For each seed: run the decoupled defense at defaults, report the round the
attacker was flagged, the first audit window that contained at least three
poisoned rounds (the earliest a median-based score can cross the threshold),
and the honest-worker exclusion rate over all published reliable sets.
"""

from __future__ import annotations

import argparse

from fedmon.config import RunConfig
from fedmon.sim import run_scenario


def first_detectable(metrics, attacker: int, attack_start: int, z: int) -> int | None:
    for entry in metrics.audit_log:
        if entry["worker"] == attacker:
            start, end = entry["window_start"], entry["window_end"]
            poisoned = max(0, end - max(start, attack_start + 1) + 1)
            if 2 * poisoned > z:
                return entry["mround"]
    return None


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--seeds", type=int, default=10, help="seeds 1..N")
    parser.add_argument("--rounds", type=int, default=150)
    args = parser.parse_args()

    excluded = slots = 0
    print(f"{'seed':>4} {'flagged':>8} {'detectable':>11} {'sets':>5} {'honest-excl':>12}")
    for seed in range(1, args.seeds + 1):
        cfg = RunConfig(seed=seed, mode="defense-decoupled", rounds=args.rounds)
        m = run_scenario(cfg)
        attacker = m.attackers[0]
        flag = m.flagged.get(attacker)
        det = first_detectable(m, attacker, cfg.attack_start_round, cfg.window_z)
        honest = [w for w in range(cfg.workers) if w != attacker]
        seed_excl = sum(
            1 for _, members in m.published_sets for w in honest if w not in members
        )
        seed_slots = len(m.published_sets) * len(honest)
        excluded += seed_excl
        slots += seed_slots
        print(f"{seed:>4} {flag!s:>8} {det!s:>11} {len(m.published_sets):>5} "
              f"{seed_excl / seed_slots:>12.2%}")
    print(f"\npooled honest-worker exclusion rate: {excluded / slots:.2%}")


if __name__ == "__main__":
    main()
