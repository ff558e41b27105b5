"""
Splittable seed derivation.

Every random stream in the toolkit is keyed by the master seed plus the structural
indices of the job that consumes it (schema, seed index, strategy, phase, replica...).
The derived seed is the first 8 bytes of SHA-256 over the canonical key string, so a
job's stream does not depend on which worker runs it or in which order.
"""

import hashlib

import numpy as np


def derive_seed(master_seed: int, *keys: object) -> int:
    """
    Derive a 63-bit seed from a master seed and structural keys.

    Args:
        master_seed: The run-level seed
        *keys: Structural indices (ints or strings) identifying the consumer

    Returns:
        Non-negative integer seed, stable across processes and platforms
    """
    material = "|".join([str(int(master_seed))] + [str(k) for k in keys])
    digest = hashlib.sha256(material.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big") >> 1


def rng_for(master_seed: int, *keys: object) -> np.random.Generator:
    """Return a numpy Generator seeded with derive_seed(master_seed, *keys)."""
    return np.random.default_rng(derive_seed(master_seed, *keys))
