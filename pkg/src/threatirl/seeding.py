"""Seed handling: one global seed split into independent per-stage streams."""

from __future__ import annotations

import numpy as np

# Stage identifiers for substreams. Append only; reordering changes outputs.
STAGES = {
    "field": 0,
    "field_b": 1,
    "dataset": 2,
    "model_init": 3,
    "dql": 4,
    "rollout": 5,
    "synth": 6,
}


def substream(seed: int, *key: int | str) -> np.random.Generator:
    """Return a generator for ``(seed, key...)``.

    Streams are derived with ``SeedSequence`` spawn keys, so the draw
    sequence of one stage never depends on how many numbers another stage
    consumed.
    """
    spawn_key = tuple(STAGES[k] if isinstance(k, str) else int(k) for k in key)
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=spawn_key)
    return np.random.Generator(np.random.PCG64(ss))
