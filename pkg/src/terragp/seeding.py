"""Named random streams derived from a single 64-bit seed.

Every source of randomness in the toolkit draws from its own stream so
that subsystems are independently reproducible: re-running data
synthesis with the same seed gives the same terrain even if an
unrelated component consumed extra random numbers.
"""

from __future__ import annotations

import zlib

import numpy as np

SYNTH = "synth"
NOISE_INJECT = "noise-inject"
INDUCING_INIT = "inducing-init"
BATCH_SHUFFLE = "batch-shuffle"
INIT = "init"

_MASK64 = 0xFFFFFFFFFFFFFFFF
_MASK32 = 0xFFFFFFFF


def stream_rng(seed: int, stream: str, *extra: int) -> np.random.Generator:
    """Return a Generator for `stream`, independent of all other streams.

    `extra` integers split a stream further (e.g. one sub-stream per
    sweep cell) without coupling the draws.
    """
    key = (zlib.crc32(stream.encode("utf-8")),) + tuple(
        int(e) & _MASK32 for e in extra
    )
    ss = np.random.SeedSequence(entropy=int(seed) & _MASK64, spawn_key=key)
    return np.random.default_rng(ss)
