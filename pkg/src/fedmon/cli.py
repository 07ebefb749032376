"""Experiment runner: `fedmon run`, `fedmon sweep`, `fedmon plot`.

Flags mirror RunConfig fields; a flat key=value config file can seed any
subset of them, and explicit flags win over the file. All failures exit
nonzero after printing one machine-readable JSON error line on stderr.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import fields

from . import fl, plotting
from .config import MODES, RunConfig, build_config, parse_config_file
from .sim import (
    attacker_sweep,
    audit_log_to_jsonl,
    metrics_to_csv,
    models_to_jsonl,
    run_scenario,
    scaling_sweep,
    summary_to_json,
    trace_to_jsonl,
)


def _add_config_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", metavar="FILE", help="flat key=value config file")
    for f in fields(RunConfig):
        flag = "--" + f.name.replace("_", "-")
        if f.name == "mode":
            parser.add_argument(flag, choices=MODES)
        else:
            parser.add_argument(flag, type=type(f.default), metavar=f.name.upper())


def _gather_overrides(args: argparse.Namespace) -> dict[str, object]:
    out: dict[str, object] = {}
    for f in fields(RunConfig):
        value = getattr(args, f.name, None)
        if value is not None:
            out[f.name] = value
    return out


def _config_from_args(args: argparse.Namespace) -> RunConfig:
    return build_config(args.config, _gather_overrides(args))


def _int_list(raw: str) -> tuple[int, ...]:
    try:
        return tuple(int(tok) for tok in raw.split(",") if tok.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {raw!r}")


def _write(path: str, text: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(text)


def cmd_run(args: argparse.Namespace) -> int:
    cfg = _config_from_args(args)
    outdir = cfg.resolved_outdir()
    os.makedirs(outdir, exist_ok=True)
    metrics = run_scenario(cfg, collect_trace=args.trace)

    base = os.path.join(outdir, f"{cfg.mode}-seed{cfg.seed}")
    _write(base + ".csv", metrics_to_csv(metrics))
    _write(base + ".summary.json", summary_to_json(metrics))
    _write(base + ".audits.jsonl", audit_log_to_jsonl(metrics))
    _write(base + ".models.jsonl", models_to_jsonl(metrics))
    if args.trace:
        _write(base + ".trace.jsonl", trace_to_jsonl(metrics))
    if args.dump_dataset:
        ds = fl.generate_dataset(cfg.seed, cfg.dataset_rows, cfg.workers)
        _write(os.path.join(outdir, f"dataset-seed{cfg.seed}.csv"), fl.dataset_to_csv(ds))

    sys.stdout.write(summary_to_json(metrics))
    return 0


def cmd_sweep(args: argparse.Namespace) -> int:
    overrides = _gather_overrides(args)
    # both sweeps measure the monitored system, so the sweep-level default
    # mode is the decoupled defense; flags and file still win
    file_vals = parse_config_file(args.config) if args.config else {}
    if "mode" not in overrides and "mode" not in file_vals:
        overrides["mode"] = "defense-decoupled"
    cfg = build_config(args.config, overrides)
    outdir = cfg.resolved_outdir()
    os.makedirs(outdir, exist_ok=True)

    if args.kind == "scaling":
        result: object = scaling_sweep(cfg, args.worker_counts)
        out_path = os.path.join(outdir, "sweep-scaling.json")
    else:
        result = attacker_sweep(cfg, args.attacker_counts, args.sweep_seeds)
        out_path = os.path.join(outdir, "sweep-attackers.json")

    text = json.dumps(result, indent=2, sort_keys=True) + "\n"
    _write(out_path, text)
    sys.stdout.write(text)
    return 0


def cmd_plot(args: argparse.Namespace) -> int:
    if args.kind == "convergence":
        plotting.plot_convergence(args.inputs, args.out)
    elif args.kind == "delay":
        plotting.plot_delay(args.inputs, args.out)
    else:
        if len(args.inputs) != 1:
            raise ValueError("scaling plot takes exactly one sweep JSON input")
        plotting.plot_scaling(args.inputs[0], args.out)
    print(f"wrote {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fedmon",
        description="Deterministic simulator for ledger-backed decentralized "
        "federated learning with decoupled update monitoring.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="execute one scenario and write its artifacts")
    _add_config_flags(p_run)
    p_run.add_argument("--trace", action="store_true", help="also dump the event trace as JSONL")
    p_run.add_argument(
        "--dump-dataset", action="store_true", help="also export the generated dataset CSV"
    )
    p_run.set_defaults(func=cmd_run)

    p_sweep = sub.add_parser("sweep", help="run a worker-scaling or attacker-count sweep")
    p_sweep.add_argument("kind", choices=("scaling", "attackers"))
    _add_config_flags(p_sweep)
    p_sweep.add_argument(
        "--worker-counts", type=_int_list, default=(3, 6, 9), metavar="N,N,..."
    )
    p_sweep.add_argument(
        "--attacker-counts", type=_int_list, default=(1, 2), metavar="N,N,..."
    )
    p_sweep.add_argument(
        "--sweep-seeds", type=int, default=5, metavar="N", help="seeds per configuration"
    )
    p_sweep.set_defaults(func=cmd_sweep)

    p_plot = sub.add_parser("plot", help="render an SVG chart from existing artifacts")
    p_plot.add_argument("kind", choices=("convergence", "delay", "scaling"))
    p_plot.add_argument("inputs", nargs="+", help="metrics CSVs (or one sweep JSON for scaling)")
    p_plot.add_argument("--out", required=True, metavar="FILE.svg")
    p_plot.set_defaults(func=cmd_plot)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, OSError) as exc:
        print(json.dumps({"error": str(exc)}), file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
