"""Stable seed derivation shared by every module that draws random numbers."""

import hashlib

import numpy as np

_MASK = (1 << 63) - 1


def derive_seed(*parts) -> int:
    """Hash an arbitrary tuple of seed parts into a stable non-negative 63-bit seed.

    Unlike ``hash()``, the result does not depend on the interpreter's hash
    randomization, so it is safe to persist and to recompute in other processes.
    """
    key = "\x1f".join(repr(p) for p in parts).encode("utf-8")
    digest = hashlib.blake2b(key, digest_size=8).digest()
    return int.from_bytes(digest, "little") & _MASK


def rng_for(*parts) -> np.random.Generator:
    return np.random.default_rng(derive_seed(*parts))
