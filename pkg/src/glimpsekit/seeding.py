"""Labelled derivation of independent random streams from one root seed."""
from __future__ import annotations

import hashlib

import numpy as np


def _label_words(label: str) -> list[int]:
    digest = hashlib.sha256(label.encode("utf-8")).digest()
    return [int.from_bytes(digest[i:i + 4], "little") for i in range(0, 16, 4)]


def derive_rng(seed: int, label: str, *index: int) -> np.random.Generator:
    """Generator for the stream named ``label`` (optionally sub-indexed) under ``seed``."""
    entropy = [int(seed) & 0xFFFFFFFF, int(seed) >> 32, *_label_words(label), *(int(i) for i in index)]
    return np.random.default_rng(np.random.SeedSequence(entropy))


def derive_seed(seed: int, label: str, *index: int) -> int:
    return int(derive_rng(seed, label, *index).integers(2**63))
