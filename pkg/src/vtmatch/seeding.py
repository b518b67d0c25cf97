"""Seed derivation: one master seed fans out into named per-stage streams.

Sub-seeds are the first 8 bytes (little-endian) of SHA-256 over
``"<master>:<label>"``, so every stage gets an independent, reproducible
stream and adding a stage never perturbs the others.  Per-trial streams
use numpy's documented sequence-of-ints seeding: stream ``i`` of seed
``s`` is ``default_rng([s, i])``.
"""

import hashlib

import numpy as np


def derive_seed(master: int, label: str) -> int:
    """Return the u64 sub-seed for a named pipeline stage."""
    digest = hashlib.sha256(f"{master}:{label}".encode()).digest()
    return int.from_bytes(digest[:8], "little")


def indexed_rng(seed: int, index: int) -> np.random.Generator:
    """Independent generator for item ``index`` of a seeded collection."""
    return np.random.default_rng([seed, index])
