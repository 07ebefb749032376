"""Deterministic simulator for ledger-backed decentralized federated learning
with decoupled update monitoring."""

__version__ = "0.1.0"
