"""Shared protocol vocabulary: node identities, model parameter encoding,
hashing, signatures, and seeded RNG stream derivation.

The byte layouts defined here are the commitment contract for the whole
protocol: Merkle leaves, ledger blocks and signatures are all computed over
these exact encodings, so they must stay bit-stable.
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass
from enum import Enum

import numpy as np
from cryptography.exceptions import InvalidSignature
from cryptography.hazmat.primitives.asymmetric.ed25519 import (
    Ed25519PrivateKey,
    Ed25519PublicKey,
)

DIGEST_SIZE = 32
ZERO_DIGEST = b"\x00" * DIGEST_SIZE

# RNG stream tags. A stream is derived as SeedSequence([run_seed, tag, *ids]),
# so every consumer draws from its own substream regardless of event order.
TAG_DATASET = 1
TAG_INIT = 2
TAG_TRAIN = 3
TAG_ATTACK = 4
TAG_WINDOW = 5
TAG_LATENCY = 6
TAG_SELECT = 7


def derive_rng(seed: int, *tags: int) -> np.random.Generator:
    """Deterministic generator for the substream identified by ``tags``."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, *tags])))


def hash_bytes(data: bytes) -> bytes:
    """256-bit digest of ``data`` (SHA-256)."""
    return hashlib.sha256(data).digest()


class MinerRole(Enum):
    FL = "FL"
    MON = "MON"


@dataclass(frozen=True)
class Miner:
    id: int
    role: MinerRole


def make_miners(total: int, n_mon: int) -> list[Miner]:
    """Miner pool with ids 0..total-1; the first total-n_mon run aggregation,
    the rest run monitoring. Role sets are disjoint by construction."""
    if not 0 <= n_mon <= total:
        raise ValueError(f"n_mon must be within [0, {total}], got {n_mon}")
    roles = [MinerRole.FL] * (total - n_mon) + [MinerRole.MON] * n_mon
    return [Miner(i, role) for i, role in enumerate(roles)]


def serialize_params(weights: np.ndarray) -> bytes:
    """Canonical model-parameter encoding: u32-LE dimension prefix followed by
    the weights as little-endian IEEE-754 float64 in index order."""
    w = np.ascontiguousarray(weights, dtype=np.float64)
    if w.ndim != 1:
        raise ValueError(f"expected a flat weight vector, got shape {w.shape}")
    if not np.all(np.isfinite(w)):
        raise ValueError("refusing to serialize non-finite weights")
    return struct.pack("<I", w.size) + w.astype("<f8").tobytes()


def deserialize_params(data: bytes) -> np.ndarray:
    if len(data) < 4:
        raise ValueError("truncated parameter encoding")
    (dim,) = struct.unpack("<I", data[:4])
    body = data[4:]
    if len(body) != 8 * dim:
        raise ValueError(f"expected {8 * dim} payload bytes, got {len(body)}")
    return np.frombuffer(body, dtype="<f8").astype(np.float64)


def params_digest(weights: np.ndarray) -> bytes:
    return hash_bytes(serialize_params(weights))


# --- signatures ------------------------------------------------------------

@dataclass(frozen=True)
class Signature:
    signer_kind: str  # "worker" | "miner"
    signer_id: int
    payload_digest: bytes
    data: bytes

    def encode(self) -> bytes:
        kind = b"w" if self.signer_kind == "worker" else b"m"
        return (
            kind
            + struct.pack("<I", self.signer_id)
            + self.payload_digest
            + struct.pack("<I", len(self.data))
            + self.data
        )


class KeyStore:
    """Per-run Ed25519 key registry.

    Private keys are derived from the run seed, so signatures are
    bit-reproducible across identically seeded runs. There is no key
    distribution: every party in a simulated run shares this registry and
    verification reads the registered public keys.
    """

    def __init__(self, seed: int):
        self._seed = seed
        self._private: dict[tuple[str, int], Ed25519PrivateKey] = {}
        self._public: dict[tuple[str, int], Ed25519PublicKey] = {}

    def register(self, kind: str, node_id: int) -> None:
        key = (kind, node_id)
        if key in self._private:
            return
        material = hash_bytes(
            b"fedmon-key" + struct.pack("<q", self._seed) + kind.encode() + struct.pack("<I", node_id)
        )
        priv = Ed25519PrivateKey.from_private_bytes(material)
        self._private[key] = priv
        self._public[key] = priv.public_key()

    def sign(self, kind: str, node_id: int, payload: bytes) -> Signature:
        digest = hash_bytes(payload)
        sig = self._private[(kind, node_id)].sign(payload)
        return Signature(kind, node_id, digest, sig)

    def verify(self, payload: bytes, sig: Signature) -> bool:
        """True iff ``sig`` was produced by its claimed signer over ``payload``.
        Malformed or mismatched signatures report False rather than raising."""
        pub = self._public.get((sig.signer_kind, sig.signer_id))
        if pub is None:
            return False
        if sig.payload_digest != hash_bytes(payload):
            return False
        try:
            pub.verify(sig.data, payload)
        except (InvalidSignature, ValueError):
            return False
        return True
