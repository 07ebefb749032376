"""Deterministic discrete-event simulation of the two-track training protocol.

One run executes a full experiment on a simulated millisecond clock in one of
four modes:

  no-attack           plain loop: train, submit, aggregate, commit, download
  attack              same loop with poisoned workers and no defense
  defense-coupled     a single pipeline audits and scores workers, then runs
                      the training round, so monitoring sits on the critical
                      path of every round
  defense-decoupled   auditing and scoring run as their own track that
                      overlaps training and only gates aggregation through a
                      freshness check on the published worker set

Every network or compute delay is sampled from a stream keyed by
(link class, round, node, leg), never from a shared sequential stream. The
same logical transfer therefore draws the same delay in every mode and at
every worker count, which makes cross-mode comparisons exact pipeline
arithmetic rather than noise, and makes total busy time conserved across
pipeline arrangements by construction.

Model math runs inside event handlers, but all training randomness is keyed
per (worker, round), so event arrival order cannot change any trained value.
Loss/accuracy bookkeeping is measurement plumbing and costs no simulated
time.
"""

from __future__ import annotations

import heapq
import json
import math
from dataclasses import dataclass, field, replace
from enum import IntEnum

import numpy as np

from . import fl
from .attack import AttackConfig, maybe_poison
from .config import RunConfig
from .ledger import Ledger, PendingBlock, root_payload
from .merkle import UpdateHistory, UpdateRecord
from .monitor import (
    ReliableSet,
    SelectionState,
    choose_window,
    initial_reliable_set,
    score_behavior,
    sync_check,
    verify_audit,
)
from .types import (
    TAG_ATTACK,
    TAG_LATENCY,
    TAG_TRAIN,
    TAG_WINDOW,
    KeyStore,
    derive_rng,
)


class EventKind(IntEnum):
    """Tie-break order for simultaneous events is the enum value, then node,
    then round; the ordering is part of the determinism contract."""

    TRAIN_DONE = 0
    ROOT_SUBMITTED = 1
    AUDIT_REQUEST = 2
    AUDIT_RESPONSE = 3
    UPDATE_SENT = 4
    AGGREGATE_DONE = 5
    CONSENSUS_DONE = 6
    MODEL_DOWNLOADED = 7
    RELIABLE_SET_PUBLISHED = 8


# latency stream classes; part of the rng keying, never reordered
_LINK_WORKER = 0  # worker <-> aggregation miner (upload leg 0, download leg 1)
_LINK_MONITOR = 1  # worker <-> monitoring miner (request leg 0, response leg 1)
_LINK_MINER = 2  # miner <-> miner (share leg 0, set publication leg 1)
_LINK_CONSENSUS = 3


@dataclass(frozen=True)
class RoundRow:
    round: int
    sim_time_ms: float
    e2e_delay_ms: float
    loss: float
    accuracy: float
    reliable_set_size: int
    protected: bool


@dataclass
class RunMetrics:
    mode: str
    seed: int
    rounds: int
    epsilon: float
    rows: list[RoundRow]
    convergence_round: int | None
    convergence_time_ms: float | None
    t_x_round: int | None
    busy_train_ms: float
    busy_fl_ms: float
    busy_mon_ms: float
    flagged: dict[int, int]  # worker -> monitoring round it was first flagged
    published_sets: list[tuple[int, tuple[int, ...]]]
    audit_log: list[dict]
    models: dict[str, list[float]]  # hex digest -> committed global params
    model_digests: list[str]  # committed global model digest per round, in order
    attackers: tuple[int, ...]
    trace: list[tuple[float, str, int, int]] = field(default_factory=list)

    @property
    def final_loss(self) -> float:
        return self.rows[-1].loss

    @property
    def final_accuracy(self) -> float:
        return self.rows[-1].accuracy


def _latency(seed: int, base: float, jitter: float, link: int, round_no: int, node: int, leg: int) -> float:
    rng = derive_rng(seed, TAG_LATENCY, link, round_no, node, leg)
    return base + rng.uniform(-jitter, jitter)


class _Engine:
    def __init__(self, cfg: RunConfig, collect_trace: bool):
        self.cfg = cfg
        self.collect_trace = collect_trace
        self.ds = fl.generate_dataset(cfg.seed, cfg.dataset_rows, cfg.workers)
        self.epsilon = fl.epsilon_anchor(self.ds)
        self.train_cfg = fl.TrainConfig(
            epochs=cfg.epochs,
            learning_rate=cfg.learning_rate,
            batch_size=cfg.batch_size,
            epsilon=self.epsilon,
        )
        self.keystore = KeyStore(cfg.seed)
        for w in range(cfg.workers):
            self.keystore.register("worker", w)
        for m in range(cfg.miners):
            self.keystore.register("miner", m)
        self.ledger = Ledger(self.keystore, n_miners=cfg.miners)
        self.ledger.genesis(fl.init_model(cfg.seed))
        self.histories = {w: UpdateHistory(w) for w in range(cfg.workers)}
        self.attack = (
            AttackConfig(
                attacker_ids=frozenset(range(cfg.attackers)),
                start_round=cfg.attack_start_round,
                magnitude=cfg.attack_magnitude,
            )
            if cfg.attacks_enabled
            else AttackConfig()
        )
        self.selection = SelectionState(frozenset(range(cfg.workers)), tau=cfg.tau)
        self.current_set: ReliableSet = initial_reliable_set(range(cfg.workers))

        self.heap: list[tuple[float, int, int, int, int, tuple]] = []
        self.seq = 0
        self.updates: dict[int, dict[int, np.ndarray]] = {}
        self.pending: dict[int, PendingBlock] = {}
        self.committed_roots: dict[tuple[int, int], bytes] = {}
        self.consensus_time: dict[int, float] = {0: 0.0}
        self.round_stats: dict[int, dict] = {}
        self.waiting_round: int | None = None

        # monitoring track state
        self.mon_state: dict[int, dict] = {}
        self.mon_queue: list[int] = []
        self.mon_in_flight: int | None = None
        self.verifier_free: dict[int, float] = {}

        self.busy_train = 0.0
        self.busy_fl = 0.0
        self.busy_mon = 0.0
        self.streak = 0
        self.convergence_round: int | None = None
        self.convergence_time: float | None = None
        self.t_x: int | None = None
        self.flag_rounds: dict[int, int] = {}
        self.published_sets: list[tuple[int, tuple[int, ...]]] = []
        self.audit_log: list[dict] = []
        self.trace: list[tuple[float, str, int, int]] = []

    # -- event plumbing ------------------------------------------------------

    def _push(self, time: float, kind: EventKind, node: int, round_no: int, payload: tuple = ()):
        self.seq += 1
        heapq.heappush(self.heap, (time, int(kind), node, round_no, self.seq, payload))

    def _delay(self, base: float, jitter: float, link: int, round_no: int, node: int, leg: int) -> float:
        return _latency(self.cfg.seed, base, jitter, link, round_no, node, leg)

    def _worker_leg(self, round_no: int, worker: int, leg: int) -> float:
        return self._delay(self.cfg.link_worker_ms, self.cfg.link_worker_jitter_ms, _LINK_WORKER, round_no, worker, leg)

    def _monitor_leg(self, round_no: int, worker: int, leg: int) -> float:
        return self._delay(self.cfg.link_monitor_ms, self.cfg.link_monitor_jitter_ms, _LINK_MONITOR, round_no, worker, leg)

    def _miner_leg(self, round_no: int, leg: int) -> float:
        return self._delay(self.cfg.link_miner_ms, self.cfg.link_miner_jitter_ms, _LINK_MINER, round_no, 0, leg)

    def _consensus_delay(self, round_no: int) -> float:
        return self._delay(self.cfg.consensus_ms, self.cfg.consensus_jitter_ms, _LINK_CONSENSUS, round_no, 0, 0)

    # -- monitoring round arithmetic ------------------------------------------

    def _is_monitor_round(self, m: int) -> bool:
        """Monitoring examines committed history [1..m]; possible once that
        history is at least one window long, at the configured cadence."""
        if not self.cfg.defended:
            return False
        history = m if self.cfg.mode == "defense-decoupled" else m - 1
        return m % self.cfg.cadence == 0 and history >= self.cfg.window_z

    def _audited_history_end(self, m: int) -> int:
        return m if self.cfg.mode == "defense-decoupled" else m - 1

    # -- run -------------------------------------------------------------------

    def run(self) -> RunMetrics:
        for w in range(self.cfg.workers):
            self._push(0.0, EventKind.MODEL_DOWNLOADED, w, 0)
        while self.heap:
            time, kind, node, round_no, _, payload = heapq.heappop(self.heap)
            kind = EventKind(kind)
            if self.collect_trace:
                self.trace.append((time, kind.name, node, round_no))
            handler = getattr(self, "_on_" + kind.name.lower())
            handler(time, node, round_no, payload)
        return self._finish()

    # -- handlers ---------------------------------------------------------------

    def _on_model_downloaded(self, time: float, worker: int, round_no: int, payload: tuple):
        nxt = round_no + 1
        if nxt > self.cfg.rounds:
            return
        self._push(time + self.cfg.train_ms, EventKind.TRAIN_DONE, worker, nxt)

    def _on_train_done(self, time: float, worker: int, round_no: int, payload: tuple):
        self.busy_train += self.cfg.train_ms
        gm_digest = self.ledger.get_global_model_digest(round_no - 1)
        gm = self.ledger.store.get(gm_digest)
        lm = fl.local_train(
            gm,
            self.ds.shards[worker],
            self.train_cfg,
            derive_rng(self.cfg.seed, TAG_TRAIN, worker, round_no),
        )
        lm = maybe_poison(
            worker,
            round_no,
            lm,
            self.attack,
            derive_rng(self.cfg.seed, TAG_ATTACK, worker, round_no),
        )
        record = UpdateRecord(worker, round_no, lm, gm_digest)
        root = self.histories[worker].append(record)
        sig = self.keystore.sign("worker", worker, root_payload(worker, round_no, root))
        arrival = time + self._worker_leg(round_no, worker, 0)
        # the round's history root rides in the same message as the update
        self._push(arrival, EventKind.ROOT_SUBMITTED, worker, round_no, (root, sig))
        self._push(arrival, EventKind.UPDATE_SENT, worker, round_no, (lm,))

    def _on_root_submitted(self, time: float, worker: int, round_no: int, payload: tuple):
        root, sig = payload
        pending = self.pending.setdefault(round_no, PendingBlock(round_no))
        accepted = self.ledger.record_root(pending, worker, root, sig)
        if accepted:
            self.committed_roots[(worker, round_no)] = root

    def _on_update_sent(self, time: float, worker: int, round_no: int, payload: tuple):
        (lm,) = payload
        per_round = self.updates.setdefault(round_no, {})
        per_round[worker] = lm
        if len(per_round) == self.cfg.workers:
            self._push(time + self._miner_leg(round_no, 0), EventKind.AGGREGATE_DONE, 0, round_no)

    def _on_aggregate_done(self, time: float, node: int, round_no: int, payload: tuple):
        # freshness only binds once monitoring has published at least once;
        # before that the system is explicitly unprotected and nothing exists
        # to be stale against (the first window needs z committed rounds)
        if (
            self.cfg.defended
            and self.current_set.protected
            and not sync_check(self.current_set, round_no, self.cfg.max_lag)
        ):
            # published set too stale: aggregation stalls until the monitors
            # publish, and the wait is charged to the round
            self.waiting_round = round_no
            return
        members = sorted(self.current_set.workers) if self.cfg.defended else list(range(self.cfg.workers))
        gm = fl.aggregate([(self.updates[round_no][w], len(self.ds.shards[w])) for w in members])
        digest = self.ledger.store.put(gm)
        pending = self.pending.setdefault(round_no, PendingBlock(round_no))
        pending.global_model_digest = digest
        loss, accuracy = fl.evaluate(gm, self.ds.X, self.ds.y)
        self.round_stats[round_no] = {
            "loss": loss,
            "accuracy": accuracy,
            "set_size": len(members),
            "protected": self.current_set.protected,
        }
        consensus = self._consensus_delay(round_no)
        self.busy_fl += consensus
        self._push(time + consensus, EventKind.CONSENSUS_DONE, 0, round_no)

    def _on_consensus_done(self, time: float, node: int, round_no: int, payload: tuple):
        self.ledger.propose_and_commit(self.pending[round_no], list(range(self.cfg.miners)), time)
        self.consensus_time[round_no] = time
        del self.updates[round_no]

        stats = self.round_stats[round_no]
        self.streak = self.streak + 1 if stats["loss"] <= self.epsilon else 0
        if self.streak >= 5 and self.convergence_round is None:
            self.convergence_round = round_no
            self.convergence_time = time

        if self.cfg.mode == "defense-coupled" and self._is_monitor_round(round_no + 1) and round_no + 1 <= self.cfg.rounds:
            self._start_monitor_round(time, round_no + 1)
            return  # downloads wait for the pipeline's monitor pass
        self._schedule_downloads(time, round_no)

        if self.cfg.mode == "defense-decoupled" and self._is_monitor_round(round_no):
            if self.mon_in_flight is None:
                self._start_monitor_round(time, round_no)
            else:
                self.mon_queue.append(round_no)

    def _schedule_downloads(self, time: float, round_no: int):
        for w in range(self.cfg.workers):
            self._push(time + self._worker_leg(round_no, w, 1), EventKind.MODEL_DOWNLOADED, w, round_no)

    # -- monitoring track --------------------------------------------------------

    def _start_monitor_round(self, time: float, m: int):
        end = self._audited_history_end(m)
        window = choose_window(1, end, self.cfg.window_z, derive_rng(self.cfg.seed, TAG_WINDOW, m))
        self.mon_in_flight = m
        self.mon_state[m] = {"window": window, "results": {}, "verified_at": 0.0}
        self.verifier_free = {}
        for w in range(self.cfg.workers):
            self._push(time + self._monitor_leg(m, w, 0), EventKind.AUDIT_REQUEST, w, m)

    def _verifier_for(self, worker: int) -> int:
        if self.cfg.mode == "defense-coupled":
            return 0  # single pipeline: one serial verification queue
        return worker % self.cfg.miners_mon

    def _on_audit_request(self, time: float, worker: int, m: int, payload: tuple):
        window = self.mon_state[m]["window"]
        end = self._audited_history_end(m)
        response = self.histories[worker].open_window(window.start, window.end, as_of_round=end)
        self._push(time + self._monitor_leg(m, worker, 1), EventKind.AUDIT_RESPONSE, worker, m, (response,))

    def _on_audit_response(self, time: float, worker: int, m: int, payload: tuple):
        (response,) = payload
        state = self.mon_state[m]
        verifier = self._verifier_for(worker)
        start = max(time, self.verifier_free.get(verifier, 0.0))
        duration = self.cfg.verify_per_proof_ms * len(response)
        self.verifier_free[verifier] = start + duration
        self.busy_mon += duration
        state["verified_at"] = max(state["verified_at"], start + duration)

        end = self._audited_history_end(m)
        committed = self.committed_roots[(worker, end)]
        state["results"][worker] = verify_audit(worker, state["window"], response, committed, end)

        if len(state["results"]) == self.cfg.workers:
            audits = [state["results"][w] for w in sorted(state["results"])]
            scores = score_behavior(audits, self.ledger.store.get, m)
            reliable = self.selection.publish(scores, m, state["window"])
            for w in sorted(self.selection.flagged):
                self.flag_rounds.setdefault(w, m)
            for audit in audits:
                self.audit_log.append(
                    {
                        "mround": m,
                        "worker": audit.worker_id,
                        "window_start": state["window"].start,
                        "window_end": state["window"].end,
                        "proofs_valid": audit.proofs_valid,
                        "score": _json_float(scores[audit.worker_id].score),
                        "included": audit.worker_id in reliable.workers,
                        "records": [
                            {
                                "round": rec.round,
                                "local_params": [float(v) for v in rec.local_params],
                                "global_digest": rec.global_digest.hex(),
                            }
                            for rec in audit.records
                        ],
                    }
                )
            if self.cfg.mode == "defense-coupled":
                publish_at = state["verified_at"]  # same node, no extra leg
            else:
                publish_at = state["verified_at"] + self._miner_leg(m, 1)
            self._push(publish_at, EventKind.RELIABLE_SET_PUBLISHED, 0, m, (reliable,))

    def _on_reliable_set_published(self, time: float, node: int, m: int, payload: tuple):
        (reliable,) = payload
        self.current_set = reliable
        self.published_sets.append((m, tuple(sorted(reliable.workers))))
        if self.t_x is None:
            self.t_x = m
        if self.cfg.mode == "defense-coupled":
            # the pipeline resumes: downloads for the previous round go out now
            self._schedule_downloads(time, m - 1)
            return
        self.mon_in_flight = None
        if self.waiting_round is not None:
            stalled = self.waiting_round
            self.waiting_round = None
            self._push(time, EventKind.AGGREGATE_DONE, 0, stalled)
        if self.mon_queue:
            self._start_monitor_round(time, self.mon_queue.pop(0))

    # -- results ---------------------------------------------------------------

    def _finish(self) -> RunMetrics:
        rows = []
        for r in range(1, self.cfg.rounds + 1):
            stats = self.round_stats[r]
            rows.append(
                RoundRow(
                    round=r,
                    sim_time_ms=self.consensus_time[r],
                    e2e_delay_ms=self.consensus_time[r] - self.consensus_time[r - 1],
                    loss=stats["loss"],
                    accuracy=stats["accuracy"],
                    reliable_set_size=stats["set_size"],
                    protected=stats["protected"],
                )
            )
        models = {
            digest.hex(): [float(v) for v in self.ledger.store.get(digest)]
            for digest in self.ledger.store.digests()
        }
        model_digests = [
            self.ledger.chain[r].global_model_digest.hex()
            for r in range(1, self.cfg.rounds + 1)
        ]
        return RunMetrics(
            mode=self.cfg.mode,
            seed=self.cfg.seed,
            rounds=self.cfg.rounds,
            epsilon=self.epsilon,
            rows=rows,
            convergence_round=self.convergence_round,
            convergence_time_ms=self.convergence_time,
            t_x_round=self.t_x,
            busy_train_ms=self.busy_train,
            busy_fl_ms=self.busy_fl,
            busy_mon_ms=self.busy_mon,
            flagged=dict(sorted(self.flag_rounds.items())),
            published_sets=self.published_sets,
            audit_log=self.audit_log,
            models=models,
            model_digests=model_digests,
            attackers=tuple(sorted(self.attack.attacker_ids)) if self.cfg.attacks_enabled else (),
            trace=self.trace,
        )


def _json_float(x: float) -> float | str:
    return "inf" if math.isinf(x) else float(x)


def run_scenario(cfg: RunConfig, collect_trace: bool = False) -> RunMetrics:
    """Execute one experiment mode end to end and return its metrics."""
    return _Engine(cfg, collect_trace).run()


# -- sweeps ---------------------------------------------------------------------


def scaling_sweep(cfg: RunConfig, worker_counts: tuple[int, ...] = (3, 6, 9)) -> list[dict]:
    """Per-role busy time as the worker population grows, holding everything
    else fixed. Consensus work is keyed per round, so the aggregation side is
    identical across counts by construction; the monitoring side grows with
    the number of audited workers."""
    out = []
    for n in worker_counts:
        metrics = run_scenario(replace(cfg, workers=n))
        out.append(
            {
                "workers": n,
                "busy_mon_per_round_ms": metrics.busy_mon_ms / cfg.rounds,
                "busy_fl_per_round_ms": metrics.busy_fl_ms / cfg.rounds,
                "mean_e2e_delay_ms": float(np.mean([r.e2e_delay_ms for r in metrics.rows])),
            }
        )
    return out


def attacker_sweep(
    cfg: RunConfig, attacker_counts: tuple[int, ...] = (1, 2), n_seeds: int = 5
) -> dict:
    """Convergence time versus attacker count over a seed band, paired by
    seed so each comparison shares data, windows, and latency draws."""
    times: dict[int, list[float | None]] = {}
    rounds: dict[int, list[int | None]] = {}
    for count in attacker_counts:
        times[count] = []
        rounds[count] = []
        for offset in range(n_seeds):
            metrics = run_scenario(replace(cfg, attackers=count, seed=cfg.seed + offset))
            times[count].append(metrics.convergence_time_ms)
            rounds[count].append(metrics.convergence_round)
    summary: dict = {"attacker_counts": list(attacker_counts), "seeds": n_seeds}
    for count in attacker_counts:
        converged = [t for t in times[count] if t is not None]
        summary[str(count)] = {
            "convergence_times_ms": times[count],
            "convergence_rounds": rounds[count],
            "mean_time_ms": float(np.mean(converged)) if converged else None,
        }
    base, other = attacker_counts[0], attacker_counts[-1]
    pairs = [
        (t1, t2)
        for t1, t2 in zip(times[base], times[other])
        if t1 is not None and t2 is not None
    ]
    if pairs:
        ratios = [t2 / t1 for t1, t2 in pairs]
        summary["paired_ratios"] = ratios
        summary["geomean_ratio"] = float(np.exp(np.mean(np.log(ratios))))
        m1 = float(np.mean([t1 for t1, _ in pairs]))
        m2 = float(np.mean([t2 for _, t2 in pairs]))
        summary["mean_ratio"] = m2 / m1
    return summary


# -- serialization ----------------------------------------------------------------

CSV_HEADER = "round,sim_time_ms,e2e_delay_ms,loss,accuracy,reliable_set_size,protected"


def metrics_to_csv(metrics: RunMetrics) -> str:
    lines = [CSV_HEADER]
    for r in metrics.rows:
        lines.append(
            f"{r.round},{r.sim_time_ms!r},{r.e2e_delay_ms!r},{r.loss!r},"
            f"{r.accuracy!r},{r.reliable_set_size},{int(r.protected)}"
        )
    return "\n".join(lines) + "\n"


def summary_to_json(metrics: RunMetrics) -> str:
    payload = {
        "mode": metrics.mode,
        "seed": metrics.seed,
        "rounds": metrics.rounds,
        "epsilon": metrics.epsilon,
        "convergence_round": metrics.convergence_round,
        "convergence_time_ms": metrics.convergence_time_ms,
        "t_x_round": metrics.t_x_round,
        "busy_train_ms": metrics.busy_train_ms,
        "busy_fl_ms": metrics.busy_fl_ms,
        "busy_mon_ms": metrics.busy_mon_ms,
        "final_loss": metrics.final_loss,
        "final_accuracy": metrics.final_accuracy,
        "attackers": list(metrics.attackers),
        "flagged": {str(w): m for w, m in metrics.flagged.items()},
        "published_set_count": len(metrics.published_sets),
    }
    return json.dumps(payload, sort_keys=True) + "\n"


def audit_log_to_jsonl(metrics: RunMetrics) -> str:
    return "".join(json.dumps(entry, sort_keys=True) + "\n" for entry in metrics.audit_log)


def models_to_jsonl(metrics: RunMetrics) -> str:
    return "".join(
        json.dumps({"digest": digest, "params": params}, sort_keys=True) + "\n"
        for digest, params in sorted(metrics.models.items())
    )


def trace_to_jsonl(metrics: RunMetrics) -> str:
    return "".join(
        json.dumps({"time_ms": t, "kind": kind, "node": node, "round": rnd}) + "\n"
        for t, kind, node, rnd in metrics.trace
    )
