"""Quorum-signed ledger and content-addressed model store.

The chain replaces a central coordinator: each round commits one block
carrying the aggregated model's digest and every worker's signed history
root. Consensus is modeled as strict-majority signature collection over the
block payload; the consensus *cost* is charged by the simulator's latency
model, not recomputed here.

Model payloads normally live off-chain in a content-addressed store, with
only the 32-byte digest on-chain. ``on_chain_model`` switches the size
accounting to embedding the full payload, for comparing ledger growth.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field

import numpy as np

from .types import (
    DIGEST_SIZE,
    ZERO_DIGEST,
    KeyStore,
    Signature,
    deserialize_params,
    hash_bytes,
    params_digest,
    serialize_params,
)


class QuorumError(Exception):
    """Raised when a round cannot collect a strict majority of miner signatures."""


class UnknownDigestError(KeyError):
    """Raised when a digest has no payload in the model store."""


def root_payload(worker_id: int, round_no: int, root: bytes) -> bytes:
    """Bytes a worker signs when submitting its history root for a round."""
    return b"root" + struct.pack("<II", worker_id, round_no) + root


@dataclass(frozen=True)
class Block:
    height: int
    prev_digest: bytes
    global_model_digest: bytes
    merkle_roots: dict[int, tuple[bytes, Signature]]
    signatures: tuple[Signature, ...]
    timestamp: float

    def payload(self) -> bytes:
        """Canonical byte encoding of everything the miners sign. The miner
        signatures themselves are excluded (they are produced over this);
        every other field is covered so any mutation of a committed block is
        either a signature break or a link break."""
        out = [
            struct.pack("<I", self.height),
            struct.pack("<d", self.timestamp),
            self.prev_digest,
            self.global_model_digest,
        ]
        out.append(struct.pack("<I", len(self.merkle_roots)))
        for wid in sorted(self.merkle_roots):
            root, sig = self.merkle_roots[wid]
            out.append(struct.pack("<I", wid) + root + sig.encode())
        return b"".join(out)

    def digest(self) -> bytes:
        return hash_bytes(self.payload())


class ModelStore:
    """Content-addressed off-chain storage: digest -> canonical parameter bytes."""

    def __init__(self):
        self._blobs: dict[bytes, bytes] = {}

    def __len__(self) -> int:
        return len(self._blobs)

    def put(self, params: np.ndarray) -> bytes:
        blob = serialize_params(params)
        digest = hash_bytes(blob)
        self._blobs[digest] = blob
        return digest

    def get(self, digest: bytes) -> np.ndarray:
        blob = self._blobs.get(digest)
        if blob is None:
            raise UnknownDigestError(digest.hex())
        if hash_bytes(blob) != digest:
            raise ValueError(f"store corrupted: payload for {digest.hex()} does not hash to it")
        return deserialize_params(blob)

    def digests(self) -> list[bytes]:
        return list(self._blobs)

    def blob_size(self, digest: bytes) -> int:
        return len(self._blobs[digest])


@dataclass
class PendingBlock:
    """Round state accumulated between aggregation start and commit."""

    round_no: int
    global_model_digest: bytes | None = None
    merkle_roots: dict[int, tuple[bytes, Signature]] = field(default_factory=dict)
    rejected_roots: list[tuple[int, str]] = field(default_factory=list)


class Ledger:
    def __init__(self, keystore: KeyStore, n_miners: int, on_chain_model: bool = False):
        if n_miners < 1:
            raise ValueError("need at least one miner")
        self.keystore = keystore
        self.n_miners = n_miners
        self.quorum = n_miners // 2 + 1
        self.on_chain_model = on_chain_model
        self.chain: list[Block] = []
        self.store = ModelStore()

    # -- block production ---------------------------------------------------

    def genesis(self, init_params: np.ndarray, timestamp: float = 0.0) -> Block:
        """Height-0 trust anchor carrying the initial model. Exempt from the
        quorum rule: it is part of the agreed starting configuration."""
        if self.chain:
            raise ValueError("chain already has a genesis block")
        digest = self.store.put(init_params)
        block = Block(0, ZERO_DIGEST, digest, {}, (), timestamp)
        self.chain.append(block)
        return block

    def record_root(self, pending: PendingBlock, worker_id: int, root: bytes, sig: Signature) -> bool:
        """Register a worker's signed history root for the pending round.
        Returns False (and logs the reason) on bad signature or duplicate."""
        if worker_id in pending.merkle_roots:
            pending.rejected_roots.append((worker_id, "duplicate submission"))
            return False
        if not self.keystore.verify(root_payload(worker_id, pending.round_no, root), sig):
            pending.rejected_roots.append((worker_id, "identity verification failed"))
            return False
        pending.merkle_roots[worker_id] = (root, sig)
        return True

    def propose_and_commit(
        self, pending: PendingBlock, signing_miners: list[int], timestamp: float
    ) -> Block:
        """Assemble the round's block and commit it once a strict majority of
        miners signs the payload. ``signing_miners`` lists the miners online
        for this round."""
        if pending.global_model_digest is None:
            raise ValueError("aggregation has not produced a global model digest")
        if not self.chain:
            raise ValueError("no genesis block")
        header = Block(
            height=len(self.chain),
            prev_digest=self.chain[-1].digest(),
            global_model_digest=pending.global_model_digest,
            merkle_roots=dict(pending.merkle_roots),
            signatures=(),
            timestamp=timestamp,
        )
        payload = header.payload()
        sigs = tuple(self.keystore.sign("miner", m, payload) for m in sorted(set(signing_miners)))
        if len(sigs) < self.quorum:
            raise QuorumError(
                f"round {pending.round_no}: {len(sigs)} signatures < quorum {self.quorum} of {self.n_miners}"
            )
        block = Block(
            header.height,
            header.prev_digest,
            header.global_model_digest,
            header.merkle_roots,
            sigs,
            timestamp,
        )
        self.chain.append(block)
        return block

    # -- reads ---------------------------------------------------------------

    def tip(self) -> Block:
        if not self.chain:
            raise ValueError("empty chain")
        return self.chain[-1]

    def get_global_model_digest(self, height: int) -> bytes:
        if not 0 <= height < len(self.chain):
            raise KeyError(f"no block at height {height} (tip is {len(self.chain) - 1})")
        return self.chain[height].global_model_digest

    def get_global_model(self, height: int) -> np.ndarray:
        return self.store.get(self.get_global_model_digest(height))

    # -- validation ----------------------------------------------------------

    def validate_chain(self) -> None:
        """Full O(n) re-verification: heights, link digests, miner quorums,
        worker root signatures, and content-addressing of model payloads.
        Raises ValueError at the first inconsistency."""
        if not self.chain:
            raise ValueError("empty chain")
        for i, block in enumerate(self.chain):
            if block.height != i:
                raise ValueError(f"height {block.height} at position {i}")
            expected_prev = ZERO_DIGEST if i == 0 else self.chain[i - 1].digest()
            if block.prev_digest != expected_prev:
                raise ValueError(f"broken link at height {i}")
            if i > 0:
                payload = block.payload()
                # every attached signature must verify, not merely a quorum:
                # one corrupt signature on an otherwise intact block is still
                # evidence of tampering
                for s in block.signatures:
                    if not self.keystore.verify(payload, s):
                        raise ValueError(f"block {i}: invalid miner signature from {s.signer_id}")
                if len(block.signatures) < self.quorum:
                    raise ValueError(
                        f"block {i}: {len(block.signatures)} signatures < quorum {self.quorum}"
                    )
                for wid, (root, sig) in block.merkle_roots.items():
                    if not self.keystore.verify(root_payload(wid, i, root), sig):
                        raise ValueError(f"block {i}: bad root signature for worker {wid}")
            try:
                params = self.store.get(block.global_model_digest)
            except UnknownDigestError:
                raise ValueError(f"block {i}: model digest has no stored payload") from None
            if params_digest(params) != block.global_model_digest:
                raise ValueError(f"block {i}: model payload does not match digest")

    # -- accounting and export ------------------------------------------------

    def block_bytes(self, block: Block) -> int:
        """On-chain footprint of one block: payload plus miner signatures,
        plus the full model payload when configured on-chain."""
        size = len(block.payload()) + sum(len(s.encode()) for s in block.signatures)
        if self.on_chain_model:
            size += self.store.blob_size(block.global_model_digest)
        return size

    def dump_chain(self) -> str:
        """One JSON line per block for post-hoc inspection."""
        lines = []
        for b in self.chain:
            lines.append(
                json.dumps(
                    {
                        "height": b.height,
                        "prev": b.prev_digest.hex(),
                        "global_model": b.global_model_digest.hex(),
                        "roots": {str(w): r.hex() for w, (r, _) in sorted(b.merkle_roots.items())},
                        "signers": [s.signer_id for s in b.signatures],
                        "time": b.timestamp,
                    },
                    sort_keys=True,
                )
            )
        return "\n".join(lines) + "\n"
