"""Named random sub-streams derived from one master seed."""
import hashlib

import numpy as np

STREAMS = ("imbalance", "test", "train", "smote", "classifier", "folds", "repeat")


def derive_seed(master: int, name: str) -> int:
    """Stable 63-bit seed for stream ``name``; independent of Python's hash salt."""
    digest = hashlib.sha256(f"{int(master)}/{name}".encode()).digest()
    return int.from_bytes(digest[:8], "little") >> 1


def stream(master: int, name: str) -> np.random.Generator:
    return np.random.default_rng(derive_seed(master, name))
