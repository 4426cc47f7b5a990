"""Epoch-based reclamation for unlinked tree nodes.

A node that has been marked deleted and physically unlinked may still be
referenced by operations whose traversal started before the unlink.
Threads therefore pin the current epoch for the duration of each
operation, retired nodes are bucketed by the epoch of their retirement,
and a bucket is reclaimed only once the global epoch has advanced twice
past it, which implies every operation that could have seen the node has
finished.  The epoch only advances when every pinned thread has caught
up with it.

Reclaiming a node poisons its child pointers and flags it, so any buggy
late access blows up loudly instead of silently wandering through freed
structure.  The actual memory is returned by the garbage collector once
the last reference drops; poisoning is what severs the reference chains.

``arena`` mode never reclaims: retired nodes are kept alive and intact.
The checker and replay builds use it so that even pathological
interleavings can never observe a poisoned node.
"""

from __future__ import annotations

import threading

__all__ = ["EpochReclaimer", "POISON"]


class _Poison:
    def __repr__(self):
        return "<poison: reclaimed node>"


POISON = _Poison()

_GRACE = 2  # epochs a retired node must age before reclamation


class EpochReclaimer:

    def __init__(self, mode: str = "epoch", sweep_interval: int = 64):
        assert mode in ("epoch", "arena")
        self.mode = mode
        self.epoch = 0
        self._pins: dict = {}          # thread key -> epoch pinned at
        self._buckets: dict = {}       # retirement epoch -> [nodes]
        self._arena: list = []
        self._since_sweep = 0
        self._sweep_interval = sweep_interval
        self._advance_guard = threading.Lock()
        self.retired_count = 0
        self.reclaimed_count = 0

    # -- per-operation protocol -----------------------------------------

    def pin(self, tkey) -> None:
        if self.mode == "arena":
            return
        self._pins[tkey] = self.epoch

    def unpin(self, tkey) -> None:
        if self.mode == "arena":
            return
        del self._pins[tkey]

    def retire(self, node) -> None:
        """Hand over a node that is marked deleted and already unlinked.

        Safe to call while still holding the unlinking locks: the caller
        is pinned, so the node cannot age out before the caller finishes.
        """
        assert node.deleted, "retire() on a node not marked deleted"
        self.retired_count += 1
        if self.mode == "arena":
            self._arena.append(node)
            return
        self._buckets.setdefault(self.epoch, []).append(node)
        self._since_sweep += 1
        if self._since_sweep >= self._sweep_interval:
            self.try_advance()

    # -- epoch machinery --------------------------------------------------

    def try_advance(self) -> bool:
        """Advance the epoch if every pinned thread has caught up.

        Non-blocking: if another thread is mid-advance we just skip, the
        work is amortized anyway.
        """
        if not self._advance_guard.acquire(blocking=False):
            return False
        try:
            self._since_sweep = 0
            e = self.epoch
            # list() snapshots concurrently mutating pins; a pin that
            # appears mid-check pinned at e or later, never earlier
            if any(p != e for p in list(self._pins.values())):
                return False
            self.epoch = e + 1
            self._sweep()
            return True
        finally:
            self._advance_guard.release()

    def _sweep(self) -> None:
        horizon = self.epoch - _GRACE
        for ep in [ep for ep in self._buckets if ep <= horizon]:
            for node in self._buckets.pop(ep):
                self._reclaim(node)

    def _reclaim(self, node) -> None:
        node.reclaimed = True
        node.left = POISON
        node.right = POISON
        self.reclaimed_count += 1

    def drain(self) -> int:
        """Quiescent-only: reclaim everything retired so far."""
        if self.mode == "arena":
            return 0
        assert not self._pins, "drain() while operations are still pinned"
        before = self.reclaimed_count
        for _ in range(_GRACE + 1):
            self.try_advance()
        return self.reclaimed_count - before

    def pending(self) -> int:
        if self.mode == "arena":
            return len(self._arena)
        return sum(len(b) for b in self._buckets.values())
