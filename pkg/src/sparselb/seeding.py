"""Deterministic seed derivation for experiment cells and worker streams.

Python's builtin hash is salted per process, so every derived seed goes
through sha256 of the stringified key parts instead.  Identical keys give
identical seeds on any platform, which is what makes sweeps reproducible
independent of worker scheduling.
"""
from __future__ import annotations

import hashlib

__all__ = ["derive_seed"]


def derive_seed(*parts) -> int:
    key = "|".join(str(p) for p in parts)
    return int.from_bytes(hashlib.sha256(key.encode()).digest()[:8], "big")
