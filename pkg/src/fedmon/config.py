"""Run configuration and the flat key=value file format used by presets.

One frozen dataclass carries every knob a run needs: protocol sizes, the
experiment mode, attack settings, detector settings, the latency model, and
output location. Precedence when assembling a config is flags over file over
defaults, and unknown keys are hard errors so a typo cannot silently fall
back to a default.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, fields

MODES = ("no-attack", "attack", "defense-coupled", "defense-decoupled")

# default output directory can be pinned by the environment
OUTDIR_ENV = "FEDMON_OUTDIR"


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    workers: int = 10
    miners: int = 4
    miners_mon: int = 2  # the remaining miners aggregate
    mode: str = "no-attack"

    # attack settings (active in every mode except no-attack)
    attackers: int = 1  # attacker ids are 0..attackers-1
    attack_start_round: int = 30
    attack_magnitude: float = 10.0

    # local training
    epochs: int = 1
    learning_rate: float = 0.12
    batch_size: int = 64

    # run shape
    rounds: int = 150
    dataset_rows: int = 246

    # detector
    window_z: int = 5
    tau: float = 2.0
    max_lag: int = 2
    cadence: int = 1

    # latency model: base +/- uniform jitter, milliseconds
    link_worker_ms: float = 20.0
    link_worker_jitter_ms: float = 5.0
    link_monitor_ms: float = 20.0
    link_monitor_jitter_ms: float = 5.0
    link_miner_ms: float = 10.0
    link_miner_jitter_ms: float = 3.0
    consensus_ms: float = 50.0
    consensus_jitter_ms: float = 10.0
    train_ms: float = 30.0
    verify_per_proof_ms: float = 2.0

    outdir: str = ""  # empty: $FEDMON_OUTDIR if set, else "runs"

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"unknown mode {self.mode!r}; expected one of {', '.join(MODES)}")
        if self.workers < 2:
            raise ValueError("workers must be at least 2")
        if self.miners < 1:
            raise ValueError("miners must be at least 1")
        if not 0 <= self.miners_mon < self.miners:
            raise ValueError("miners_mon must leave at least one aggregation miner")
        if self.defended and self.miners_mon < 1:
            raise ValueError("defense modes need at least one monitoring miner")
        if self.attacks_enabled and not 1 <= self.attackers < self.workers:
            raise ValueError("attackers must be fewer than workers (and at least 1)")
        if self.attack_start_round < 0:
            raise ValueError("attack_start_round must be nonnegative")
        if self.attack_magnitude <= 0:
            raise ValueError("attack_magnitude must be positive")
        if self.epochs < 0:
            raise ValueError("epochs must be nonnegative")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.batch_size < 1:
            raise ValueError("batch_size must be at least 1")
        if self.rounds < 1:
            raise ValueError("rounds must be at least 1")
        if self.dataset_rows < self.workers:
            raise ValueError("dataset_rows must cover at least one row per worker")
        if self.window_z < 1:
            raise ValueError("window_z must be at least 1")
        if self.tau <= 0:
            raise ValueError("tau must be positive")
        if self.max_lag < 0:
            raise ValueError("max_lag must be nonnegative")
        if self.cadence < 1:
            raise ValueError("cadence must be at least 1")
        # freshness and cadence interact: a round stalled on max_lag can only
        # be released by an audit of an already committed round, so the gap
        # between audits must fit inside the staleness budget
        if self.mode == "defense-decoupled" and self.cadence > self.max_lag:
            raise ValueError(
                "defense-decoupled requires cadence <= max_lag, otherwise "
                "aggregation deadlocks waiting for a reliable set whose audit "
                "round can never commit"
            )
        if self.mode == "defense-coupled" and self.cadence - 1 > self.max_lag:
            raise ValueError(
                "defense-coupled requires cadence - 1 <= max_lag so rounds "
                "between audits stay within the freshness bound"
            )
        for base, jitter in (
            ("link_worker_ms", "link_worker_jitter_ms"),
            ("link_monitor_ms", "link_monitor_jitter_ms"),
            ("link_miner_ms", "link_miner_jitter_ms"),
            ("consensus_ms", "consensus_jitter_ms"),
        ):
            b, j = getattr(self, base), getattr(self, jitter)
            if b <= 0:
                raise ValueError(f"{base} must be positive")
            if not 0 <= j < b:
                raise ValueError(f"{jitter} must be in [0, {base}) so delays stay positive")
        if self.train_ms <= 0:
            raise ValueError("train_ms must be positive")
        if self.verify_per_proof_ms <= 0:
            raise ValueError("verify_per_proof_ms must be positive")

    @property
    def attacks_enabled(self) -> bool:
        return self.mode != "no-attack"

    @property
    def defended(self) -> bool:
        return self.mode in ("defense-coupled", "defense-decoupled")

    @property
    def miners_fl(self) -> int:
        return self.miners - self.miners_mon

    def resolved_outdir(self) -> str:
        return self.outdir or os.environ.get(OUTDIR_ENV, "runs")


_FIELDS = {f.name: type(f.default) for f in fields(RunConfig)}


def coerce_value(key: str, raw: str):
    """Parse a raw config string into the field's type. Unknown keys and
    malformed values raise ValueError."""
    if key not in _FIELDS:
        raise ValueError(f"unknown config key: {key}")
    target = _FIELDS[key]
    try:
        if target is int:
            return int(raw)
        if target is float:
            return float(raw)
        return raw
    except ValueError:
        raise ValueError(f"config key {key} expects {target.__name__}, got {raw!r}") from None


def parse_config_file(path: str) -> dict[str, object]:
    """Read a flat key=value file: one pair per line, # comments, blank lines
    ignored."""
    values: dict[str, object] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            stripped = line.strip()
            if not stripped or stripped.startswith("#"):
                continue
            if "=" not in stripped:
                raise ValueError(f"{path}:{lineno}: expected key=value, got {stripped!r}")
            key, _, raw = stripped.partition("=")
            values[key.strip()] = coerce_value(key.strip(), raw.strip())
    return values


def build_config(file_path: str | None = None, overrides: dict[str, object] | None = None) -> RunConfig:
    """Assemble a RunConfig: flag overrides beat file values beat defaults."""
    merged: dict[str, object] = {}
    if file_path is not None:
        merged.update(parse_config_file(file_path))
    for key, value in (overrides or {}).items():
        if key not in _FIELDS:
            raise ValueError(f"unknown config key: {key}")
        merged[key] = value
    return RunConfig(**merged)  # type: ignore[arg-type]
