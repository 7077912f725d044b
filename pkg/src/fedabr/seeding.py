"""Named, reproducible random substreams derived from one master seed.

Every source of randomness in the project (trace synthesis, weight init,
client selection, exploration, episode offsets) pulls its generator from
`substream`, so any component can be re-run in isolation and still see
exactly the bits it saw inside a full experiment.
"""

from __future__ import annotations

import zlib

import numpy as np


def _token_to_int(token: str | int) -> int:
    if isinstance(token, int):
        return token
    # crc32 is stable across processes (unlike hash()), which keeps
    # substreams reproducible between runs.
    return zlib.crc32(token.encode("utf-8"))


def substream(master_seed: int, *path: str | int) -> np.random.Generator:
    """Generator for the substream identified by `path` under `master_seed`."""
    entropy = [int(master_seed)] + [_token_to_int(p) for p in path]
    return np.random.default_rng(np.random.SeedSequence(entropy))
