"""Named random streams derived from a single integer seed.

Each consumer asks for a stream by name, so adding a new consumer never
shifts the draws seen by existing ones.
"""

import hashlib

import numpy as np


def _name_key(name: str) -> int:
    digest = hashlib.blake2b(name.encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little")


def stream(seed: int, name: str) -> np.random.Generator:
    """Return an independent generator for ``(seed, name)``."""
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=(_name_key(name),))
    return np.random.Generator(np.random.PCG64(ss))


class Streams:
    def __init__(self, seed: int, prefix: str = ""):
        self.seed = int(seed)
        self.prefix = prefix

    def __call__(self, name: str) -> np.random.Generator:
        return stream(self.seed, f"{self.prefix}{name}")

    def child(self, prefix: str) -> "Streams":
        return Streams(self.seed, f"{self.prefix}{prefix}/")
