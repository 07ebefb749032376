"""Monitoring-side logic: random-window audits over committed histories,
behavior scoring, and publication of the reliable worker set.

Scoring is deliberately simple. For each audited round the monitor computes
every worker's update distance ||LM - GM||2 (GM being the model the worker
trained from, resolved by the committed digest in its disclosed record) and
normalizes it by the population median of that round. A worker's score is
the median of its normalized distances over the audited window, so a clean
population scores exactly 1.0 and a random-weight injector scores an order
of magnitude higher. The detector is pluggable in principle; this is the
default and only built-in.

Selection carries memory: once a worker's score exceeds the threshold (or
its proofs fail), it stays excluded until an audit clears it on fresh
evidence. Clearing requires a later window that lies entirely after the
round the flag was published and scores clean, so a window that merely lands
on old pre-incident history can never rehabilitate anyone. A worker that
keeps submitting junk fails every such re-audit and therefore never returns;
a worker flagged on a transient gets back in as soon as an audit of its
post-flag conduct comes up clean.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .merkle import MerklePath, UpdateRecord, leaf_hash, verify_path

INVALID_SCORE = math.inf


class MonitoringAborted(Exception):
    """Raised when every audited worker failed: there is no one to select."""


@dataclass(frozen=True)
class Window:
    start: int  # first audited round, inclusive
    end: int  # last audited round, inclusive

    def rounds(self) -> range:
        return range(self.start, self.end + 1)

    def __len__(self) -> int:
        return self.end - self.start + 1


def choose_window(first_round: int, last_round: int, z: int, rng: np.random.Generator) -> Window:
    """Uniformly placed window of z consecutive committed rounds, clamped to
    the full history when fewer than z rounds exist. Drawn from the monitor's
    own stream; workers learn it only after committing."""
    if last_round < first_round:
        raise ValueError("no committed rounds to audit")
    if z < 1:
        raise ValueError("window size must be >= 1")
    history = last_round - first_round + 1
    size = min(z, history)
    start = first_round + int(rng.integers(0, history - size + 1))
    return Window(start, start + size - 1)


@dataclass
class AuditResult:
    worker_id: int
    window: Window
    records: list[UpdateRecord]
    proofs_valid: bool


def verify_audit(
    worker_id: int,
    window: Window,
    response: list[tuple[UpdateRecord, MerklePath]] | None,
    committed_root: bytes,
    committed_leaf_count: int,
) -> AuditResult:
    """Check a worker's disclosure against its last committed root.

    Valid iff the response covers exactly the requested rounds in order,
    every record belongs to the worker, and every proof folds to the root
    with the geometry the ledger implies. An unresponsive worker (None)
    fails the audit outright.
    """
    if response is None:
        return AuditResult(worker_id, window, [], False)
    rounds = [rec.round for rec, _ in response]
    if rounds != list(window.rounds()):
        return AuditResult(worker_id, window, [r for r, _ in response], False)
    for rec, path in response:
        if rec.worker_id != worker_id:
            return AuditResult(worker_id, window, [r for r, _ in response], False)
        if path.leaf_count != committed_leaf_count:
            return AuditResult(worker_id, window, [r for r, _ in response], False)
        if not verify_path(committed_root, leaf_hash(rec), path):
            return AuditResult(worker_id, window, [r for r, _ in response], False)
    return AuditResult(worker_id, window, [rec for rec, _ in response], True)


@dataclass(frozen=True)
class BehaviorScore:
    worker_id: int
    score: float  # median normalized update distance; +inf for failed audits
    round: int  # monitoring round the score was evaluated at


def score_behavior(
    audits: list[AuditResult],
    resolve_params: Callable[[bytes], np.ndarray],
    round_no: int,
) -> dict[int, BehaviorScore]:
    """Scores for all workers audited in one monitoring round.

    Normalization is population-relative, so all audits of a round share one
    window and are scored together. Workers with failed audits get the +inf
    sentinel and do not contribute to population medians.
    """
    valid = [a for a in audits if a.proofs_valid]
    scores: dict[int, BehaviorScore] = {
        a.worker_id: BehaviorScore(a.worker_id, INVALID_SCORE, round_no)
        for a in audits
        if not a.proofs_valid
    }
    if not valid:
        return scores

    window = valid[0].window
    distances: dict[int, list[float]] = {}
    for a in valid:
        if a.window != window:
            raise ValueError("audits of one monitoring round must share the window")
        distances[a.worker_id] = [
            float(np.linalg.norm(rec.local_params - resolve_params(rec.global_digest)))
            for rec in a.records
        ]

    per_worker_ratios: dict[int, list[float]] = {w: [] for w in distances}
    for i in range(len(window)):
        col = [distances[w][i] for w in distances]
        pop_median = float(np.median(col))
        for w in distances:
            d = distances[w][i]
            if pop_median == 0.0:
                per_worker_ratios[w].append(1.0 if d == 0.0 else INVALID_SCORE)
            else:
                per_worker_ratios[w].append(d / pop_median)

    for w, ratios in per_worker_ratios.items():
        scores[w] = BehaviorScore(w, float(np.median(ratios)), round_no)
    return scores


@dataclass(frozen=True)
class ReliableSet:
    round: int
    workers: frozenset[int]
    protected: bool


def initial_reliable_set(workers: range | list[int]) -> ReliableSet:
    """Before the first publication the system is unprotected and every
    worker participates."""
    return ReliableSet(0, frozenset(workers), False)


def sync_check(reliable_set: ReliableSet, current_fl_round: int, max_lag: int) -> bool:
    """True iff the published set is fresh enough to gate the current FL
    round; False forces aggregation to wait for the monitors."""
    return current_fl_round - reliable_set.round <= max_lag


@dataclass
class SelectionState:
    """Selection memory across monitoring rounds: flags persist until cleared
    by a clean audit of strictly newer conduct."""

    all_workers: frozenset[int]
    tau: float = 2.0
    flag_round: dict[int, int] = field(default_factory=dict)
    current: ReliableSet = None  # type: ignore[assignment]
    protected: bool = False

    def __post_init__(self):
        if self.current is None:
            self.current = initial_reliable_set(sorted(self.all_workers))

    @property
    def flagged(self) -> set[int]:
        return set(self.flag_round)

    def publish(self, scores: dict[int, BehaviorScore], round_no: int, window: Window) -> ReliableSet:
        """Apply the threshold, update flags, and publish the round's
        reliable set.

        A flagged worker is cleared only when the audited window starts after
        the round its flag was published and its score passes the threshold;
        evidence that overlaps the flagged era proves nothing about reform.
        If fewer than 2 unflagged workers pass the threshold, the 2
        lowest-scoring unflagged workers are included anyway: the round must
        proceed.
        """
        if not scores:
            raise MonitoringAborted(f"monitoring round {round_no}: no audits")
        if all(not math.isfinite(s.score) for s in scores.values()):
            raise MonitoringAborted(f"monitoring round {round_no}: every audit failed")

        for w in list(self.flag_round):
            s = scores.get(w)
            if (
                s is not None
                and window.start > self.flag_round[w]
                and math.isfinite(s.score)
                and s.score <= self.tau
            ):
                del self.flag_round[w]
        for w, s in scores.items():
            if not math.isfinite(s.score) or s.score > self.tau:
                # an existing flag keeps its original round: clearing is
                # judged against conduct since the first offense, not since
                # the latest failed audit, or near-threshold workers could
                # never requalify
                self.flag_round.setdefault(w, round_no)

        candidates = sorted(
            (w for w in scores if w not in self.flag_round),
            key=lambda w: (scores[w].score, w),
        )
        passed = [w for w in candidates if scores[w].score <= self.tau]
        if len(passed) < 2:
            passed = candidates[:2]
        if len(passed) < 2:
            # degenerate fallback: nearly everyone is flagged; keep the two
            # least suspicious overall so training can continue at all
            passed = sorted(scores, key=lambda w: (scores[w].score, w))[:2]

        self.protected = True  # first publication reached; never reverts
        self.current = ReliableSet(round_no, frozenset(passed), True)
        return self.current
