"""Deterministic RNG derivation.

Every stochastic choice in the package draws from a generator derived from
(master seed, purpose tag, counters...), so any step can be reproduced in
isolation and resumed runs stay bit-identical to straight-through runs.
"""

from __future__ import annotations

import zlib

import numpy as np


def derive_rng(*keys) -> np.random.Generator:
    """PCG64 generator keyed by a tuple of ints and/or short strings."""
    ints = []
    for k in keys:
        if isinstance(k, str):
            ints.append(zlib.crc32(k.encode("utf-8")))
        else:
            ints.append(int(k) & 0xFFFFFFFF)
    return np.random.default_rng(ints)
