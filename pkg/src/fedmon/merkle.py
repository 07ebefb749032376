"""Append-only Merkle commitments over per-round training updates.

Each worker keeps one history. A history leaf binds the worker's local model
for a round to the digest of the global model it trained from, so revealing a
leaf later proves what was actually trained, while the on-ledger footprint per
round stays one 32-byte root.

Tree shape: leaves hashed with a 0x00 prefix, internal nodes with 0x01 over
left||right (domain separation so a disclosed leaf cannot be replayed as an
internal node). A level with an odd node count promotes its last node
unchanged rather than duplicating it. Proofs carry the sibling side flags and
the tree geometry (leaf_index, leaf_count); verification re-derives the shape
and rejects any proof whose flags, length, or index disagree with it, so a
proof cannot be replayed at a different position.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .types import DIGEST_SIZE, hash_bytes, serialize_params

_LEAF_PREFIX = b"\x00"
_NODE_PREFIX = b"\x01"

LEFT = "left"
RIGHT = "right"


@dataclass(frozen=True)
class UpdateRecord:
    """One round's training evidence: the local model produced and the digest
    of the global model it started from."""

    worker_id: int
    round: int
    local_params: np.ndarray
    global_digest: bytes

    def encode(self) -> bytes:
        if len(self.global_digest) != DIGEST_SIZE:
            raise ValueError("global_digest must be a 32-byte digest")
        return (
            struct.pack("<II", self.worker_id, self.round)
            + self.global_digest
            + serialize_params(self.local_params)
        )


def leaf_hash(record: UpdateRecord) -> bytes:
    return hash_bytes(_LEAF_PREFIX + record.encode())


def node_hash(left: bytes, right: bytes) -> bytes:
    return hash_bytes(_NODE_PREFIX + left + right)


def _build_levels(leaves: list[bytes]) -> list[list[bytes]]:
    levels = [list(leaves)]
    while len(levels[-1]) > 1:
        prev = levels[-1]
        nxt = [node_hash(prev[i], prev[i + 1]) for i in range(0, len(prev) - 1, 2)]
        if len(prev) % 2 == 1:
            nxt.append(prev[-1])
        levels.append(nxt)
    return levels


@dataclass(frozen=True)
class MerklePath:
    """Inclusion proof: sibling digests with their side relative to the
    folded node, plus the geometry the fold is checked against."""

    leaf_index: int
    leaf_count: int
    siblings: tuple[tuple[bytes, str], ...]


def verify_path(root: bytes, leaf_digest: bytes, path: MerklePath) -> bool:
    """True iff the leaf with digest ``leaf_digest`` sits at
    ``path.leaf_index`` in the tree of ``path.leaf_count`` leaves whose root
    is ``root``. Any disagreement between the claimed index, the sibling side
    flags, and the tree shape fails verification."""
    if not (0 <= path.leaf_index < path.leaf_count):
        return False
    node = leaf_digest
    idx, count = path.leaf_index, path.leaf_count
    pos = 0
    while count > 1:
        last_and_unpaired = idx == count - 1 and idx % 2 == 0
        if not last_and_unpaired:
            if pos >= len(path.siblings):
                return False
            sibling, side = path.siblings[pos]
            pos += 1
            if idx % 2 == 0:
                if side != RIGHT:
                    return False
                node = node_hash(node, sibling)
            else:
                if side != LEFT:
                    return False
                node = node_hash(sibling, node)
        # else: odd last node, promoted unchanged
        idx //= 2
        count = (count + 1) // 2
    if pos != len(path.siblings):
        return False
    return node == root


class UpdateHistory:
    """A worker's append-only commitment tree, one leaf per training round.

    Rounds start at ``first_round`` and must be appended consecutively;
    leaf i holds round first_round + i.
    """

    def __init__(self, worker_id: int, first_round: int = 1):
        self.worker_id = worker_id
        self.first_round = first_round
        self._records: list[UpdateRecord] = []
        self._levels: list[list[bytes]] = []

    def __len__(self) -> int:
        return len(self._records)

    @property
    def next_round(self) -> int:
        return self.first_round + len(self._records)

    def append(self, record: UpdateRecord) -> bytes:
        """Append one round's record and return the new root."""
        if record.worker_id != self.worker_id:
            raise ValueError(
                f"record for worker {record.worker_id} appended to history of worker {self.worker_id}"
            )
        if record.round != self.next_round:
            raise ValueError(
                f"non-consecutive append: expected round {self.next_round}, got {record.round}"
            )
        self._records.append(record)
        self._levels = _build_levels([leaf_hash(r) for r in self._records])
        return self.root()

    def root(self) -> bytes:
        if not self._records:
            raise ValueError("empty history has no root")
        return self._levels[-1][0]

    def record_for_round(self, rnd: int) -> UpdateRecord:
        return self._records[self._index_of(rnd)]

    def _index_of(self, rnd: int) -> int:
        idx = rnd - self.first_round
        if not (0 <= idx < len(self._records)):
            raise KeyError(f"round {rnd} not in history [{self.first_round}, {self.next_round - 1}]")
        return idx

    def root_at(self, as_of_round: int) -> bytes:
        """Root of the tree as it stood after appending ``as_of_round``."""
        return self._levels_at(as_of_round)[-1][0]

    def _levels_at(self, as_of_round: int) -> list[list[bytes]]:
        n = as_of_round - self.first_round + 1
        if not (1 <= n <= len(self._records)):
            raise KeyError(f"no history snapshot at round {as_of_round}")
        if n == len(self._records):
            return self._levels
        return _build_levels([leaf_hash(r) for r in self._records[:n]])

    def prove(self, rnd: int, as_of_round: int | None = None) -> MerklePath:
        """Inclusion proof for the record of round ``rnd``.

        Proofs are against the tree as of ``as_of_round`` (default: current),
        so a worker can answer an audit of an already-committed root even
        after appending newer rounds.
        """
        if as_of_round is None:
            as_of_round = self.next_round - 1
        levels = self._levels_at(as_of_round)
        idx = self._index_of(rnd)
        count = as_of_round - self.first_round + 1
        if idx >= count:
            raise KeyError(f"round {rnd} is newer than snapshot round {as_of_round}")
        siblings: list[tuple[bytes, str]] = []
        i = idx
        for level in levels[:-1]:
            if i % 2 == 0:
                if i + 1 < len(level):
                    siblings.append((level[i + 1], RIGHT))
            else:
                siblings.append((level[i - 1], LEFT))
            i //= 2
        return MerklePath(idx, count, tuple(siblings))

    def open_window(
        self, start_round: int, end_round: int, as_of_round: int | None = None
    ) -> list[tuple[UpdateRecord, MerklePath]]:
        """Disclose records for rounds [start_round, end_round] with proofs
        against the root as of ``as_of_round`` (default: current)."""
        if end_round < start_round:
            raise ValueError("empty disclosure window")
        return [
            (self.record_for_round(r), self.prove(r, as_of_round))
            for r in range(start_round, end_round + 1)
        ]
