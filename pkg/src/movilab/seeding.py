"""Seed derivation.

Every random stream is keyed by ``(master_seed, *counters)`` through numpy's
``SeedSequence`` spawn keys, e.g. ``(replicate, 0)`` for the Garnet of
replicate ``replicate`` and ``(replicate, 1 + SCHEME_IDS.index(scheme))``
for the sampling stream of a scheme on it.  Distinct keys give independent
streams, and a stream does not depend on which other streams were used.
"""
import numpy as np


def derive_seed(master_seed: int, *counters: int) -> int:
    seq = np.random.SeedSequence(int(master_seed), spawn_key=tuple(int(c) for c in counters))
    return int(seq.generate_state(1, dtype=np.uint64)[0])
