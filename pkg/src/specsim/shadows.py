"""Speculation shadow tracking.

A shadow is a pending event that makes every younger instruction speculative:
an unresolved conditional branch (C-shadow) or a store whose address is not
yet known and may therefore alias a younger load (D-shadow). Shadows take
effect on the visibility point strictly in sequence order: the point sits
just below the oldest unresolved shadow, and instructions at or below it are
bound to commit.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional


@dataclass
class Shadow:
    seq: int
    kind: str  # "C" or "D"
    resolved: bool = False


class ShadowLedger:
    """Ordered record of unresolved shadows plus the visibility point.

    ``visibility_seq`` is (oldest unresolved shadow seq) - 1, or None when no
    shadow is unresolved (every in-flight instruction is bound to commit).
    Sequence numbers are monotone and never reused, so plain integer
    comparison orders shadows.
    """

    def __init__(self, capacity: int):
        self.capacity = capacity
        self.shadows: list[Shadow] = []  # seq-ordered

    @property
    def visibility_seq(self) -> Optional[int]:
        for sh in self.shadows:
            if not sh.resolved:
                return sh.seq - 1
        return None

    def full(self) -> bool:
        return len(self.shadows) >= self.capacity

    def register_shadow(self, seq: int, kind: str) -> int:
        """Insert a shadow; returns its id (the seq itself, ids never repeat)."""
        if kind not in ("C", "D"):
            raise ValueError(f"bad shadow kind {kind!r}")
        vis = self.visibility_seq
        if vis is not None and seq <= vis:
            raise ValueError(f"seq {seq} is already bound to commit")
        if self.full():
            raise RuntimeError("shadow ledger full")
        for sh in self.shadows:
            if sh.seq == seq and sh.kind == kind:
                raise ValueError(f"duplicate shadow ({seq}, {kind})")
        self.shadows.append(Shadow(seq, kind))
        self.shadows.sort(key=lambda s: s.seq)
        return seq

    def resolve_shadow(self, seq: int) -> Optional[int]:
        """Mark a shadow resolved and return the new visibility_seq.

        Shadows take effect on visibility in order: resolving a younger
        shadow while an older one is pending does not move the point.
        """
        for sh in self.shadows:
            if sh.seq == seq:
                if sh.resolved:
                    raise ValueError(f"shadow {seq} already resolved")
                sh.resolved = True
                break
        else:
            raise KeyError(f"unknown shadow {seq}")
        # Drop the resolved prefix; fully-resolved shadows never matter again.
        while self.shadows and self.shadows[0].resolved:
            self.shadows.pop(0)
        return self.visibility_seq

    def is_speculative(self, seq: int) -> bool:
        vis = self.visibility_seq
        return vis is not None and seq > vis

    def squash(self, squash_seq: int):
        """Remove shadows younger than the squash point."""
        self.shadows = [sh for sh in self.shadows if sh.seq <= squash_seq]

    def clear(self):
        self.shadows = []

    def snapshot(self) -> list[tuple[int, str, bool]]:
        return [(sh.seq, sh.kind, sh.resolved) for sh in self.shadows]
