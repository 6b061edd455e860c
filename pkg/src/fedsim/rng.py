"""Keyed counter-based random streams.

Every stochastic draw in a simulation comes from a Philox generator keyed
by ``(master_seed, client, round, purpose)``. Because the key carries the
logical coordinates of the draw, the values are independent of event
processing order: two protocol runs that share a master seed see the same
device capabilities for the same (client, round) cell, which is what makes
paired protocol comparisons valid.
"""

from __future__ import annotations

import numpy as np

from .errors import ValidationError

# Purpose tags, each mapped to a fixed key component. Append only:
# renumbering silently changes every stream.
_PURPOSES = {
    "init": 0,
    "datagen": 1,
    "partition": 2,
    "population": 3,
    "disturbance": 4,
    "bandwidth": 5,
    "shuffle": 6,
    "noise": 7,
    "sample": 8,
}

# Pseudo client id for draws made by the server rather than a device.
SERVER = 0x7FFFFFFF


def stream(master_seed: int, client: int, rnd: int, purpose: str) -> np.random.Generator:
    """Return the generator for one (client, round, purpose) cell.

    The same key always yields the same stream, and distinct keys yield
    statistically independent streams.
    """
    if purpose not in _PURPOSES:
        raise ValidationError(f"unknown stream purpose: {purpose!r}")
    if master_seed < 0 or client < 0 or rnd < 0:
        raise ValidationError("stream key components must be non-negative")
    seq = np.random.SeedSequence(
        entropy=master_seed, spawn_key=(client, rnd, _PURPOSES[purpose])
    )
    return np.random.Generator(np.random.Philox(seq))
