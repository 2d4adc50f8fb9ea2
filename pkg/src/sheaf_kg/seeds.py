"""Named, reproducible random sub-streams.

Every source of randomness in the package derives from a single user seed
through a named sub-stream, so that e.g. adding one more negative sample
per batch cannot perturb parameter initialization.
"""

import numpy as np

_STREAM_IDS = {
    "init": 1,
    "shuffle": 2,
    "negatives": 3,
    "synth": 4,
    "queries": 5,
    "resize": 6,
}


def substream(seed: int, name: str) -> np.random.Generator:
    """Return a generator for the named sub-stream of ``seed``.

    The same (seed, name) pair always yields an identical stream; distinct
    names yield statistically independent streams.
    """
    try:
        key = _STREAM_IDS[name]
    except KeyError:
        raise KeyError(f"unknown random stream {name!r}; known: {sorted(_STREAM_IDS)}") from None
    return np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(key,)))
