"""Named, counter-based random streams.

Every random quantity in a run comes from one of a few independent streams
keyed by ``(seed, chain, stream)``.  The streams use the Philox counter-based
bit generator, so the draws a stream produces depend only on its key and on
how many values have been taken from it, never on thread scheduling or on the
number of workers.
"""
from __future__ import annotations

import numpy as np

STREAM_IDS = {
    "phi": 1,       # main-chain phi proposals and acceptances
    "aux": 2,       # auxiliary SAMC chain
    "theta": 3,     # main-chain theta updates
    "tuning": 4,    # pilot runs used to pick step sizes
    "grid": 5,      # auxiliary grid construction
    "misc": 6,
}


def stream(seed: int, name: str, chain: int = 0) -> np.random.Generator:
    """Return the generator for stream ``name`` of chain ``chain``."""
    try:
        sid = STREAM_IDS[name]
    except KeyError:
        raise ValueError(f"unknown stream {name!r}") from None
    ss = np.random.SeedSequence([int(seed), int(chain), sid])
    return np.random.Generator(np.random.Philox(ss))
