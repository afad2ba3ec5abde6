"""Deterministic random stream derivation.

Every stochastic decision in a run draws from a stream derived from the
master seed plus a structural path (iteration, slot, purpose).  Streams
are independent of scheduling order, so parallel dispatch and
interrupt/resume cannot perturb the draws.  Derivation goes through
SHA-256 rather than hash() so it is stable across processes and
platforms.
"""

from __future__ import annotations

import hashlib
import random


def derive_seed(master_seed: int, *path: object) -> int:
    """Map (master seed, structural path) to a 64-bit stream seed."""
    key = ":".join([str(master_seed)] + [str(p) for p in path])
    digest = hashlib.sha256(key.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big")


def derive_rng(master_seed: int, *path: object) -> random.Random:
    """A fresh Random seeded for the given structural path."""
    return random.Random(derive_seed(master_seed, *path))
