"""Deterministic seed derivation: one global seed, hashed with component tags."""

from __future__ import annotations

import hashlib


def derive_seed(seed: int, tag: str) -> int:
    """Map (seed, tag) to a stable u64, independent of platform and process."""
    digest = hashlib.sha256(f"{seed}/{tag}".encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")
