"""Seeded random streams keyed by purpose, replicate and method"""
import hashlib

import numpy as np


def stream_hash(*keys):
    """Stable 64-bit id for a tuple of keys (independent of PYTHONHASHSEED)"""
    digest = hashlib.blake2b(repr(tuple(str(key) for key in keys)).encode('utf-8'), digest_size=8)
    return int.from_bytes(digest.digest(), 'little')


class SeededRng:
    """
    A random stream identified by (seed, stream_id).

    Each instance owns its numpy Generator; never share one across threads.
    Child streams are derived from keys, so the stream a work unit sees only
    depends on what the unit is, not on when or where it runs.
    """

    def __init__(self, seed, stream_id=0):
        self.seed = int(seed) & 0xFFFFFFFFFFFFFFFF
        self.stream_id = int(stream_id) & 0xFFFFFFFFFFFFFFFF
        self._generator = None

    @property
    def generator(self):
        if self._generator is None:
            sequence = np.random.SeedSequence(entropy=self.seed, spawn_key=(self.stream_id,))
            self._generator = np.random.default_rng(sequence)
        return self._generator

    def derive(self, *keys):
        """Child stream for the given keys, e.g. derive('bootstrap', b)"""
        return SeededRng(self.seed, stream_hash(self.stream_id, *keys))

    def random_state(self):
        """Legacy RandomState for scikit-learn helpers, drawn from this stream"""
        return np.random.RandomState(int(self.generator.integers(0, 2**32 - 1)))

    def __repr__(self):
        return f"SeededRng(seed={self.seed}, stream_id={self.stream_id})"
