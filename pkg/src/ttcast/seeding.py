"""Deterministic seed derivation.

Every random decision in the pipeline draws from a generator seeded by
(root seed, unit identity) so that results do not depend on execution
order, process boundaries between stages, or thread count.  String parts
are hashed with SHA-256 (stable across platforms and Python versions,
unlike hash()).
"""
from __future__ import annotations

import hashlib

import numpy as np


def _part_to_int(part: int | str) -> int:
    if isinstance(part, bool):  # bool is an int subclass; reject to avoid surprises
        raise TypeError("seed parts must be int or str, not bool")
    if isinstance(part, int):
        return part
    digest = hashlib.sha256(part.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big")


def derive_seed(root: int, *parts: int | str) -> int:
    """Map (root, *parts) to a 64-bit seed, stably."""
    entropy = [_part_to_int(root)] + [_part_to_int(p) for p in parts]
    seq = np.random.SeedSequence(entropy)
    return int(seq.generate_state(1, np.uint64)[0])


class SeedRegistry:
    """Derives seeds and remembers them so a run manifest can list every one."""

    def __init__(self, root: int):
        self.root = int(root)
        self.issued: dict[str, int] = {}

    def get(self, *parts: int | str) -> int:
        key = ".".join(str(p) for p in parts)
        seed = derive_seed(self.root, *parts)
        self.issued[key] = seed
        return seed

    def as_dict(self) -> dict[str, int]:
        out = {"root": self.root}
        out.update(dict(sorted(self.issued.items())))
        return out
