"""Seeded random streams.

Every stream is a numpy ``Generator`` built from a ``SeedSequence`` whose
entropy is ``(seed, *key)``, so independent consumers (assignment, simulated
rewards, probability-of-assignment estimates) never share draws.
"""

from __future__ import annotations

import logging
import secrets

import numpy as np

logger = logging.getLogger(__name__)

ASSIGNMENT = 0
REWARDS = 1
PROB_OPTIMAL = 2
REPLICATION = 3


def stream(seed: int, *key: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, *key])))


def derive_seed(seed: int, *key: int) -> int:
    """A 63-bit child seed, stable for a given ``(seed, key)``."""
    return int(np.random.SeedSequence([seed, *key]).generate_state(1, np.uint64)[0] >> np.uint64(1))


def fresh_seed() -> int:
    seed = secrets.randbits(63)
    logger.info("no seed supplied; generated seed %d", seed)
    return seed


def dump_state(rng: np.random.Generator) -> dict:
    """JSON-safe copy of a PCG64 generator state (128-bit words as hex)."""
    st = rng.bit_generator.state
    if st["bit_generator"] != "PCG64":
        raise ValueError(f"unsupported bit generator {st['bit_generator']}")
    return {
        "bit_generator": "PCG64",
        "state": format(st["state"]["state"], "x"),
        "inc": format(st["state"]["inc"], "x"),
        "has_uint32": int(st["has_uint32"]),
        "uinteger": int(st["uinteger"]),
    }


def load_state(doc: dict) -> np.random.Generator:
    if doc.get("bit_generator") != "PCG64":
        raise ValueError("unsupported bit generator")
    bg = np.random.PCG64()
    bg.state = {
        "bit_generator": "PCG64",
        "state": {"state": int(doc["state"], 16), "inc": int(doc["inc"], 16)},
        "has_uint32": int(doc["has_uint32"]),
        "uinteger": int(doc["uinteger"]),
    }
    return np.random.Generator(bg)
