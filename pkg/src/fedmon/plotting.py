"""SVG chart rendering from run artifacts.

Charts are pure post-processing: they read metrics CSVs and sweep JSON
written by earlier runs and never recompute anything. Rendering is pinned so
that replotting an unchanged input produces byte-identical SVG (fixed hash
salt, no embedded timestamps), which makes figures diffable in review.
"""

from __future__ import annotations

import csv
import json
import os

import matplotlib

matplotlib.use("Agg")
matplotlib.rcParams["svg.hashsalt"] = "fedmon"

import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)

_CSV_COLUMNS = (
    "round",
    "sim_time_ms",
    "e2e_delay_ms",
    "loss",
    "accuracy",
    "reliable_set_size",
    "protected",
)


def read_metrics_csv(path: str) -> dict[str, list[float]]:
    """Load one per-round metrics CSV into column lists (floats)."""
    if not os.path.exists(path):
        raise FileNotFoundError(f"metrics CSV not found: {path}")
    cols: dict[str, list[float]] = {name: [] for name in _CSV_COLUMNS}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        missing = set(_CSV_COLUMNS) - set(reader.fieldnames or ())
        if missing:
            raise ValueError(f"{path}: missing columns {sorted(missing)}")
        for row in reader:
            for name in _CSV_COLUMNS:
                cols[name].append(float(row[name]))
    return cols


def _label(path: str) -> str:
    return os.path.splitext(os.path.basename(path))[0]


def _save(fig, out_path: str) -> None:
    # Date metadata would change on every render; drop it for byte stability.
    fig.savefig(out_path, format="svg", metadata={"Date": None})
    plt.close(fig)


def plot_convergence(csv_paths: list[str], out_path: str) -> None:
    """Loss against simulated wall-clock time, one curve per run."""
    fig, ax = plt.subplots(figsize=(7, 4.5))
    for path in csv_paths:
        cols = read_metrics_csv(path)
        times_s = [t / 1000.0 for t in cols["sim_time_ms"]]
        ax.plot(times_s, cols["loss"], label=_label(path), linewidth=1.2)
    ax.set_xlabel("simulated time (s)")
    ax.set_ylabel("global model loss")
    ax.set_title("Convergence latency by scenario")
    ax.legend(fontsize=8)
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    _save(fig, out_path)


def plot_delay(csv_paths: list[str], out_path: str) -> None:
    """Per-round end-to-end delay against round number, one curve per run."""
    fig, ax = plt.subplots(figsize=(7, 4.5))
    for path in csv_paths:
        cols = read_metrics_csv(path)
        ax.plot(cols["round"], cols["e2e_delay_ms"], label=_label(path), linewidth=1.2)
    ax.set_xlabel("round")
    ax.set_ylabel("end-to-end round delay (ms)")
    ax.set_title("Round latency by scenario")
    ax.legend(fontsize=8)
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    _save(fig, out_path)


def plot_scaling(sweep_json_path: str, out_path: str) -> None:
    """Per-role busy time against worker count, from a scaling sweep JSON."""
    if not os.path.exists(sweep_json_path):
        raise FileNotFoundError(f"sweep JSON not found: {sweep_json_path}")
    with open(sweep_json_path, encoding="utf-8") as fh:
        rows = json.load(fh)
    workers = [r["workers"] for r in rows]
    mon = [r["busy_mon_per_round_ms"] for r in rows]
    fl_ = [r["busy_fl_per_round_ms"] for r in rows]
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(workers, mon, marker="o", label="monitoring miners")
    ax.plot(workers, fl_, marker="s", label="aggregation miners")
    ax.set_xlabel("workers")
    ax.set_ylabel("busy time per round (ms)")
    ax.set_title("Per-role load as the worker population grows")
    ax.set_xticks(workers)
    ax.legend(fontsize=8)
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    _save(fig, out_path)
