"""Deterministic random stream derivation.

All randomness in the package flows from one user-facing 64-bit seed per
command.  Sub-streams are derived by hashing the root seed together with a
path of string labels, so adding a consumer never shifts the draws seen by
an existing one.  The Philox bit generator is counter-based, which keeps
independently derived streams statistically independent.
"""

from __future__ import annotations

import hashlib

import numpy as np


def derive_key(root_seed: int, *parts: object) -> int:
    """Hash (root_seed, parts...) into a 128-bit Philox key."""
    text = "|".join([str(int(root_seed))] + [str(p) for p in parts])
    digest = hashlib.sha256(text.encode("utf-8")).digest()
    return int.from_bytes(digest[:16], "little")


def generator(root_seed: int, *parts: object) -> np.random.Generator:
    """Independent Generator for the sub-stream named by `parts`."""
    return np.random.Generator(np.random.Philox(key=derive_key(root_seed, *parts)))
