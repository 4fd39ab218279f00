"""Per-type, per-level server buckets kept in id order."""

from __future__ import annotations

from bisect import bisect_left, insort


class LevelIndex:
    """``buckets[m][l]`` is the sorted list of type-m servers with ``l`` tasks.

    Supports uniform picks inside a class and lookup of the server at a given
    rank in (queue length, server id) order within a type.
    """

    def __init__(self, queue_len, server_type, M: int):
        top = max(queue_len, default=0) + 2
        self.buckets = [[[] for _ in range(top)] for _ in range(M)]
        for j, (l, m) in enumerate(zip(queue_len, server_type)):
            self.buckets[m][l].append(j)   # ids visited in increasing order

    def size(self, m: int, l: int) -> int:
        row = self.buckets[m]
        return len(row[l]) if l < len(row) else 0

    def move(self, j: int, m: int, old: int, new: int) -> None:
        row = self.buckets[m]
        if new >= len(row):
            row.extend([] for _ in range(new - len(row) + 2))
        b = row[old]
        del b[bisect_left(b, j)]
        insort(row[new], j)

    def pick(self, m: int, l: int, u: float) -> int:
        """Server of class ``(m, l)`` selected by a uniform ``u`` in [0, 1)."""
        b = self.buckets[m][l]
        return b[min(int(u * len(b)), len(b) - 1)]

    def at_rank(self, m: int, n: int) -> tuple[int, int]:
        """``(server, level)`` of the ``n``-th type-m server by (length, id)."""
        for l, b in enumerate(self.buckets[m]):
            if n < len(b):
                return b[n], l
            n -= len(b)
        raise IndexError("rank out of range")

    def level_counts(self, m: int) -> list[int]:
        return [len(b) for b in self.buckets[m]]
