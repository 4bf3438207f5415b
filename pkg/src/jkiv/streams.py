"""Deterministic random-number streams for replicated and parallel work.

Every unit of work (a Monte Carlo replication, a bootstrap run, a
cross-validation fold assignment) derives its generator as a pure function
of ``(master seed, stream label, index...)``.  Streams are backed by the
counter-based Philox generator, so results do not depend on scheduling or
on the number of workers.
"""

from __future__ import annotations

import zlib

import numpy as np

_MASK64 = (1 << 64) - 1


def stream_code(label: str) -> int:
    """Stable 32-bit code for a stream label."""
    return zlib.crc32(label.encode("utf-8"))


def child_sequence(seed: int, label: str, *indices: int) -> np.random.SeedSequence:
    """SeedSequence for the work unit identified by (seed, label, indices)."""
    entropy = [int(seed) & _MASK64, stream_code(label)]
    entropy.extend(int(i) & _MASK64 for i in indices)
    return np.random.SeedSequence(entropy)


def child_rng(seed: int, label: str, *indices: int) -> np.random.Generator:
    """Independent generator for the work unit (seed, label, indices)."""
    return np.random.Generator(np.random.Philox(child_sequence(seed, label, *indices)))


def child_seed(seed: int, label: str, *indices: int) -> int:
    """64-bit integer seed derived from (seed, label, indices).

    Used to hand a plain integer to a component that manages its own
    streams (e.g. the bootstrap spec of a single replication).
    """
    return int(child_sequence(seed, label, *indices).generate_state(1, np.uint64)[0])
