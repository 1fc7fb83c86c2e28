"""Deterministic stream derivation from a single master seed.

Every random draw in the repository comes from a Generator obtained via
`stream(master_seed, *tags)`.  Streams are independent of call order, so
any component can be re-run in isolation and reproduce its draws.
"""

import hashlib

import numpy as np


def derive_seed(master_seed, *tags):
    """Hash (master_seed, tags...) into a 64-bit seed."""
    h = hashlib.sha256()
    h.update(str(int(master_seed)).encode())
    for tag in tags:
        h.update(b"/")
        h.update(str(tag).encode())
    return int.from_bytes(h.digest()[:8], "little")


def stream(master_seed, *tags):
    """Independent numpy Generator keyed by (master_seed, tags...)."""
    return np.random.Generator(np.random.PCG64(derive_seed(master_seed, *tags)))
