"""Named random sub-streams derived from one root seed."""
import zlib

import numpy as np

STREAMS = ("vmd-init", "search", "model-init", "dropout", "shuffle")


def substream(root_seed: int, name: str, *extra: int) -> np.random.Generator:
    """Generator for stream ``name``; independent of which other streams are drawn."""
    key = (zlib.crc32(name.encode()),) + tuple(int(e) for e in extra)
    return np.random.default_rng(np.random.SeedSequence(int(root_seed), spawn_key=key))


def subseed(root_seed: int, name: str, *extra: int) -> int:
    return int(substream(root_seed, name, *extra).integers(0, 2 ** 31 - 1))
