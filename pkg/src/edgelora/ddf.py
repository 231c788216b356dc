"""Exact duplicate-detection filter kept by the application server.

A frame's identity is (dev_addr, fcnt, mic) so a replayed counter with
different content is still caught. The store is an open-addressed hash set
whose table is preallocated for the configured capacity: no false positives,
no false negatives, no rehashing, amortized O(1) per operation independent of
fill level. Hitting the capacity bound is a scenario-sizing bug and raises
loudly.
"""

from __future__ import annotations

from dataclasses import dataclass

DEFAULT_CAPACITY = 1 << 20


class DdfCapacityError(RuntimeError):
    pass


@dataclass(frozen=True)
class DdfKey:
    dev_addr: int
    fcnt: int
    mic: bytes

    def packed(self) -> bytes:
        return self.dev_addr.to_bytes(4, "little") \
            + self.fcnt.to_bytes(2, "little") + self.mic


class Ddf:
    def __init__(self, capacity: int = DEFAULT_CAPACITY):
        if capacity < 1:
            raise ValueError("capacity must be positive")
        self.capacity = capacity
        table_size = 8
        while table_size < 2 * capacity:  # load factor stays <= 0.5
            table_size <<= 1
        self._mask = table_size - 1
        self._table: list[bytes | None] = [None] * table_size
        self._size = 0
        self.fresh_count = 0
        self.duplicate_count = 0

    def __len__(self) -> int:
        return self._size

    def check_and_insert(self, key: DdfKey) -> bool:
        """Returns True for a duplicate, False (and inserts) for a fresh key."""
        packed = key.packed()
        table = self._table
        mask = self._mask
        idx = hash(packed) & mask
        while True:
            slot = table[idx]
            if slot is None:
                if self._size >= self.capacity:
                    raise DdfCapacityError(
                        f"duplicate filter full at {self.capacity} entries")
                table[idx] = packed
                self._size += 1
                self.fresh_count += 1
                return False
            if slot == packed:
                self.duplicate_count += 1
                return True
            idx = (idx + 1) & mask

    def mark_covered(self, keys: list[DdfKey]) -> int:
        """Bulk insert for aggregate coverage; returns how many were fresh."""
        fresh = 0
        for key in keys:
            if not self.check_and_insert(key):
                fresh += 1
        return fresh

    def stats(self) -> dict[str, int]:
        return {
            "size": self._size,
            "fresh": self.fresh_count,
            "duplicate": self.duplicate_count,
            "capacity": self.capacity,
        }
