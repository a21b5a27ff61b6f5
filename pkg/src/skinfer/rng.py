"""Seeded random streams.

Generator: numpy ``PCG64`` fed by ``SeedSequence(seed, spawn_key=(k,))``
where ``k`` is a fixed integer per named stream.  Stream scheme version 1;
changing the table below invalidates golden files.
"""

import numpy as np

RNG_SCHEME = "pcg64-seedseq-v1"

STREAMS = {
    "gillespie": 1,
    "observations": 2,
    "volunteers": 3,
    "network": 4,
    "initial": 5,
}

SEED_MAX = 2**64 - 1


def make_rng(seed: int, stream: str = "gillespie", replica: int = 0) -> np.random.Generator:
    seed = int(seed)
    if not 0 <= seed <= SEED_MAX:
        raise ValueError(f"seed must be a 64-bit unsigned integer, got {seed}")
    ss = np.random.SeedSequence(seed, spawn_key=(STREAMS[stream], int(replica)))
    return np.random.Generator(np.random.PCG64(ss))
