"""Replication seed derivation."""

import numpy as np


def split_seed(master: int, replication: int) -> int:
    """64-bit seed for replication ``r`` of a master seed.

    Uses numpy's ``SeedSequence`` hashing, which is specified bit-for-bit and
    therefore stable across platforms and numpy versions.
    """
    ss = np.random.SeedSequence([int(master) % 2**64, int(replication)])
    return int(ss.generate_state(1, np.uint64)[0])


def seed_list(master: int, n: int) -> list[int]:
    return [split_seed(master, r) for r in range(n)]
