"""Seeded random streams.

All randomness goes through numpy's PCG64 bit generator. A stream is named by
a base seed plus a tuple of integer tags; the pair is fed to ``SeedSequence``
as ``(entropy, spawn_key)``, so distinct tag tuples give statistically
independent streams and the same (seed, tags) gives the same stream on every
platform.
"""

import numpy as np

# stream tags (the first three are fixed by the world layout)
ENCODER = 0
VOCAB = 1
TRUTH_PROMPT = 2
TEMPLATE_PROMPT = 3
SPLIT = 4
NOISE = 5
METHOD_INIT = 6
SHUFFLE = 7
PROBE = 8
CONFUSION = 9
SELECTION = 10
FD_CHECK = 11

SPLIT_TAGS = {"train": 0, "test": 1, "pool": 2}


def stream(seed, *tags):
    """Generator for the stream named by ``seed`` and ``tags``."""
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(int(t) for t in tags))
    return np.random.Generator(np.random.PCG64(ss))
