"""Seed derivation so that every stochastic stage owns an independent stream."""
import zlib

import numpy as np


def _tag_key(tag):
    return zlib.crc32(str(tag).encode("utf-8"))


def derive_seed_sequence(master_seed, tag, *indices):
    """SeedSequence keyed by (master seed, purpose tag, indices)."""
    key = (_tag_key(tag),) + tuple(int(i) for i in indices)
    return np.random.SeedSequence(entropy=int(master_seed), spawn_key=key)


def derive_rng(master_seed, tag, *indices):
    """Generator for one purpose; unrelated tags give unrelated streams."""
    return np.random.default_rng(derive_seed_sequence(master_seed, tag, *indices))


def derive_int_seed(master_seed, tag, *indices):
    """63-bit integer seed, convenient for headers and file names."""
    state = derive_seed_sequence(master_seed, tag, *indices).generate_state(2, np.uint32)
    return int((int(state[0]) << 31) ^ int(state[1])) & ((1 << 63) - 1)


def as_generator(rng):
    """Accept None, an int seed, a SeedSequence or a Generator."""
    if isinstance(rng, np.random.Generator):
        return rng
    return np.random.default_rng(rng)
