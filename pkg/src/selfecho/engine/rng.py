"""Deterministic random streams.

All stochastic pieces of the pipeline (weight init, batch shuffling,
dropout, padding noise, phase init) draw from PCG64 generators created
here, so identical seeds reproduce identical runs bit for bit on a
single thread.
"""

from __future__ import annotations

import numpy as np


def seeded_rng(seed: int) -> np.random.Generator:
    """Deterministic uniform/normal stream for a given seed."""
    return np.random.Generator(np.random.PCG64(int(seed)))


def derive_rng(seed: int, *tags: int) -> np.random.Generator:
    """Independent child stream for (seed, tags); stable across runs."""
    ss = np.random.SeedSequence([int(seed), *[int(t) & 0xFFFFFFFF for t in tags]])
    return np.random.Generator(np.random.PCG64(ss))


def rng_state(rng: np.random.Generator) -> dict:
    """JSON-serializable snapshot of a generator's position."""
    state = rng.bit_generator.state
    return {
        "bit_generator": state["bit_generator"],
        "state": {k: str(v) for k, v in state["state"].items()},
        "has_uint32": state["has_uint32"],
        "uinteger": state["uinteger"],
    }


def restore_rng(snapshot: dict) -> np.random.Generator:
    """Rebuild a generator from ``rng_state`` output."""
    if snapshot["bit_generator"] != "PCG64":
        raise ValueError(f"unsupported bit generator {snapshot['bit_generator']!r}")
    bg = np.random.PCG64()
    bg.state = {
        "bit_generator": "PCG64",
        "state": {k: int(v) for k, v in snapshot["state"].items()},
        "has_uint32": int(snapshot["has_uint32"]),
        "uinteger": int(snapshot["uinteger"]),
    }
    return np.random.Generator(bg)
