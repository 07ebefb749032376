"""Brute-force cross-checks kept deliberately independent of the pipeline.

Everything here recomputes results from raw serialized inputs (dataset CSV,
audit JSON lines, committed model payloads) with its own arithmetic. The only
shared code is parsing of the on-disk formats and the seeded stream contract;
none of the training, scoring, or event-engine internals are imported. If a
pipeline refactor changes any math, these checks break loudly.
"""

from __future__ import annotations

import json
import math

import numpy as np
from scipy.special import expit

from .types import TAG_INIT, TAG_TRAIN, derive_rng

_N_FEATURES = 3
_DIM = 4


def _loss(w: np.ndarray, X: np.ndarray, y: np.ndarray) -> float:
    z = X @ w[:_N_FEATURES] + w[_N_FEATURES]
    return float(np.mean(np.logaddexp(0.0, z) - y * z))


def _grad(w: np.ndarray, X: np.ndarray, y: np.ndarray) -> np.ndarray:
    # expit rather than a hand-rolled sigmoid: trajectory equivalence with
    # the live loop is asserted bit for bit, which requires the identical
    # elementary-function implementation, not one that agrees to a few ulp
    z = X @ w[:_N_FEATURES] + w[_N_FEATURES]
    resid = expit(z) - y
    g = np.empty(_DIM)
    g[:_N_FEATURES] = X.T @ resid / len(y)
    g[_N_FEATURES] = resid.mean()
    return g


def centralized_baseline(
    X: np.ndarray,
    y: np.ndarray,
    learning_rate: float = 0.5,
    tol: float = 1e-8,
    window: int = 100,
    max_steps: int = 200_000,
) -> float:
    """Plateau loss of full-batch gradient descent on the pooled rows,
    iterated until the loss moves less than ``tol`` across ``window`` steps."""
    w = np.zeros(_DIM)
    prev = _loss(w, X, y)
    for step in range(1, max_steps + 1):
        w -= learning_rate * _grad(w, X, y)
        if step % window == 0:
            cur = _loss(w, X, y)
            if abs(prev - cur) < tol:
                return cur
            prev = cur
    return _loss(w, X, y)


def reference_fedavg(
    seed: int,
    X: np.ndarray,
    y: np.ndarray,
    n_workers: int,
    rounds: int,
    learning_rate: float,
    batch_size: int,
    epochs: int,
) -> list[np.ndarray]:
    """Plain sequential federated-averaging loop over round-robin shards.

    Replays the exact per-(worker, round) seeded streams the live system
    uses, so an event engine that leaves the math alone must produce this
    trajectory bit for bit.
    """
    shards = [(X[w::n_workers], y[w::n_workers]) for w in range(n_workers)]
    gm = derive_rng(seed, TAG_INIT).uniform(-0.1, 0.1, _DIM)
    trajectory = []
    for rnd in range(1, rounds + 1):
        locals_ = []
        for worker, (sx, sy) in enumerate(shards):
            rng = derive_rng(seed, TAG_TRAIN, worker, rnd)
            w = gm.copy()
            n = len(sy)
            for _ in range(epochs):
                order = rng.permutation(n)
                for start in range(0, n, batch_size):
                    idx = order[start : start + batch_size]
                    w -= learning_rate * _grad(w, sx[idx], sy[idx])
            locals_.append(w)
        stacked = np.stack(locals_)
        weights = np.array([len(sy) for _, sy in shards], dtype=np.float64)
        gm = np.average(stacked, axis=0, weights=weights)
        trajectory.append(gm.copy())
    return trajectory


def parse_score(raw: float | str) -> float:
    return math.inf if raw == "inf" else float(raw)


def recompute_scores(audit_lines: list[str], model_lines: list[str]) -> list[dict]:
    """Replay the behavior-score arithmetic from serialized run artifacts.

    Input is the audit JSONL (one line per worker per monitoring round) and
    the model JSONL (digest -> committed parameters). Output mirrors the
    logged entries with an independently recomputed score, for exact
    comparison against what the pipeline published.
    """
    params_by_digest = {}
    for line in model_lines:
        row = json.loads(line)
        params_by_digest[row["digest"]] = np.asarray(row["params"], dtype=np.float64)

    by_round: dict[int, list[dict]] = {}
    for line in audit_lines:
        entry = json.loads(line)
        by_round.setdefault(entry["mround"], []).append(entry)

    out = []
    for mround in sorted(by_round):
        entries = by_round[mround]
        valid = [e for e in entries if e["proofs_valid"]]
        dists: dict[int, list[float]] = {}
        for e in valid:
            dists[e["worker"]] = [
                float(
                    np.linalg.norm(
                        np.asarray(rec["local_params"], dtype=np.float64)
                        - params_by_digest[rec["global_digest"]]
                    )
                )
                for rec in e["records"]
            ]
        n_positions = len(valid[0]["records"]) if valid else 0
        ratios: dict[int, list[float]] = {w: [] for w in dists}
        for i in range(n_positions):
            col = [dists[w][i] for w in dists]
            pop = float(np.median(col))
            for w in dists:
                if pop == 0.0:
                    ratios[w].append(1.0 if dists[w][i] == 0.0 else math.inf)
                else:
                    ratios[w].append(dists[w][i] / pop)
        for e in entries:
            w = e["worker"]
            score = float(np.median(ratios[w])) if w in ratios else math.inf
            out.append(
                {
                    "mround": mround,
                    "worker": w,
                    "logged": parse_score(e["score"]),
                    "recomputed": score,
                }
            )
    return out
