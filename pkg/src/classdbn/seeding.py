"""Master-seed fan-out.

Every stage gets its own generator seeded from ``sha256("<master>:<stage>")``
so a single stage can be rerun in isolation and still see the same stream.
"""

import hashlib

import numpy as np


def derive_seed(master: int, stage: str) -> int:
    digest = hashlib.sha256(f"{int(master)}:{stage}".encode()).digest()
    return int.from_bytes(digest[:8], "little") >> 1


def stage_rng(master: int, stage: str) -> np.random.Generator:
    return np.random.default_rng(derive_seed(master, stage))
