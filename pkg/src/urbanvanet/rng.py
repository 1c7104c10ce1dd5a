"""Labelled random substreams derived from one root seed.

Each subsystem draws from its own stream keyed by a stable hash of its
label, so adding a new consumer never shifts another subsystem's draws.
"""

from __future__ import annotations

import zlib

import numpy as np


def label_key(label: str) -> int:
    return zlib.crc32(label.encode("utf-8"))


def substream(seed: int, label: str) -> np.random.Generator:
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=(label_key(label),))
    return np.random.Generator(np.random.PCG64(ss))
