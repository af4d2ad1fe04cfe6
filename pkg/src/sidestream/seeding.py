"""Per-key RNG derivation so that results do not depend on task scheduling."""

from __future__ import annotations

import hashlib

import numpy as np


def _word(part) -> int:
    digest = hashlib.sha256(str(part).encode()).digest()
    return int.from_bytes(digest[:8], "little")


def derive_seed(master: int, *parts) -> int:
    """A 63-bit seed that depends only on ``master`` and the key ``parts``."""
    ss = np.random.SeedSequence(int(master), spawn_key=tuple(_word(p) for p in parts))
    return int(ss.generate_state(1, dtype=np.uint64)[0]) >> 1


def derive_rng(master: int, *parts) -> np.random.Generator:
    return np.random.default_rng(derive_seed(master, *parts))
