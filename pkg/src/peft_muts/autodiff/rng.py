"""Seeded random streams.

Backed by NumPy's PCG64, whose output is specified bit-for-bit and therefore
identical across platforms for a given seed.  Child streams are derived with
``SeedSequence`` keyed on a label so adding a new consumer never perturbs an
existing one.
"""

import os
import zlib

import numpy as np


class Rng:
    def __init__(self, seed, _key=()):
        self.seed = int(seed)
        self._key = tuple(_key)
        self._gen = np.random.Generator(np.random.PCG64(np.random.SeedSequence([self.seed, *self._key])))

    def child(self, label):
        """Independent stream for ``label`` (string or int)."""
        tag = label if isinstance(label, int) else zlib.crc32(str(label).encode())
        return Rng(self.seed, self._key + (tag,))

    def __getattr__(self, name):
        # random, normal, uniform, permutation, integers, ...
        return getattr(self._gen, name)

    def __repr__(self):
        return f"Rng(seed={self.seed}, key={self._key})"


def default_seed(fallback=0):
    value = os.environ.get("PMTS_SEED")
    return int(value) if value not in (None, "") else fallback
