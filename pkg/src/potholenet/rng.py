"""Deterministic random streams.

Every random draw in the package goes through :func:`make_rng`, which builds
a ``numpy.random.Generator`` on the Philox4x64-10 counter-based bit generator.
The 128-bit key is derived with ``numpy.random.SeedSequence`` from
``entropy=seed`` and a ``spawn_key`` made of the purpose tag and the integer
indices, so a stream is a pure function of ``(seed, purpose, *indices)``:

    SeedSequence(entropy=seed, spawn_key=(crc32(purpose), *indices))
        -> generate_state(2, uint64) -> Philox(key=state)

Two calls with equal arguments return generators producing identical draws,
independent of call order or of any other stream.
"""

from __future__ import annotations

import zlib

import numpy as np


def make_rng(seed: int, purpose: str, *indices: int) -> np.random.Generator:
    tag = zlib.crc32(purpose.encode("utf-8"))
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=(tag, *(int(i) for i in indices)))
    key = ss.generate_state(2, dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))
