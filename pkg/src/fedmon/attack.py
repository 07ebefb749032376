"""Untargeted poisoning: compromised workers replace their trained update
with random weights to stall convergence.

Attackers behave protocol-correctly in every other respect: they sign what
they submit with their own valid keys and keep a consistent commitment
history of it. Detection therefore has to come from update content, not from
signature or proof failures.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .fl import PARAM_DIM

MODE_UNTARGETED_RANDOM = "untargeted-random"


@dataclass(frozen=True)
class AttackConfig:
    attacker_ids: frozenset[int] = field(default_factory=frozenset)
    start_round: int = 30
    mode: str = MODE_UNTARGETED_RANDOM
    magnitude: float = 10.0  # ~10x the scale honest trained weights reach here

    def __post_init__(self):
        if self.start_round < 0:
            raise ValueError("start round must be nonnegative")
        if self.magnitude <= 0:
            raise ValueError("magnitude must be positive")
        if self.mode != MODE_UNTARGETED_RANDOM:
            raise ValueError(f"unknown attack mode {self.mode!r}")


def maybe_poison(
    worker_id: int,
    round_no: int,
    honest_lm: np.ndarray,
    cfg: AttackConfig,
    rng: np.random.Generator,
) -> np.ndarray:
    """Poisoned update for an attacker in rounds strictly after the start
    round; the honest update otherwise. Poisoning starts *after* the start
    round, so the start round itself is still honest. The poisoned vector is
    i.i.d. uniform in [-magnitude, +magnitude], independent of the honest
    input."""
    if worker_id not in cfg.attacker_ids or round_no <= cfg.start_round:
        return honest_lm
    return rng.uniform(-cfg.magnitude, cfg.magnitude, PARAM_DIM)
