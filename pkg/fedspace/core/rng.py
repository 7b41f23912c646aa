"""Named, seeded random streams.

Every random draw in a simulation comes from a stream keyed by
``(seed, *names)``, e.g. ``(seed, "client", round, client_id)``. Streams with
different keys are statistically independent, and the same key always yields
the same sequence, so work can be reordered or run in threads without
changing results.
"""

import hashlib

import numpy as np
import torch

StreamKey = int | str


def _key_to_int(key: StreamKey) -> int:
    if isinstance(key, bool):
        raise TypeError("stream keys must be int or str, not bool")
    if isinstance(key, int):
        if key < 0:
            raise ValueError(f"stream keys must be non-negative, got {key}")
        return key
    digest = hashlib.sha256(key.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")


def seed_sequence(seed: int, *keys: StreamKey) -> np.random.SeedSequence:
    """Build the SeedSequence for a named stream."""
    return np.random.SeedSequence(entropy=seed, spawn_key=tuple(_key_to_int(k) for k in keys))


def derive_rng(seed: int, *keys: StreamKey) -> np.random.Generator:
    """NumPy generator for the stream ``(seed, *keys)``."""
    return np.random.Generator(np.random.PCG64(seed_sequence(seed, *keys)))


def derive_torch_generator(seed: int, *keys: StreamKey) -> torch.Generator:
    """CPU torch generator for the stream ``(seed, *keys)``."""
    words = seed_sequence(seed, *keys).generate_state(2, dtype=np.uint32)
    value = (int(words[0]) << 32 | int(words[1])) & (2**63 - 1)
    generator = torch.Generator(device="cpu")
    generator.manual_seed(value)
    return generator
