"""Conditional read-write lock with a single-word state encoding.

The lock state lives in one integer word:

* ``0``      free
* ``1``      held by a writer
* ``2 * k``  held by ``k`` readers

All transitions are compare-and-swap steps on that word (0 -> 1 for a
write acquire, even w -> w + 2 for a read acquire, and the reverse for
releases).  CPython has no user-level CAS, so each lock carries a tiny
guard mutex and the compare+store runs under it.  The guard is never
held across user code, only for the few instructions of the transition,
so the observable behaviour is that of the CAS word.  One deliberate
consequence: reader/reader CAS races cannot spuriously fail here, which
only removes Contended outcomes, never adds behaviours.

On top of the raw word the lock offers conditional acquisition: a
predicate is evaluated before and after the acquire, and the lock is
released again if the second evaluation fails.  Callers use this to
take a lock only while some observed field value still holds.
"""

from __future__ import annotations

import threading
import time
from enum import Enum

__all__ = ["LockMode", "LockOutcome", "CondRwLock", "SpinPolicy"]


class LockMode(Enum):
    READ = "read"
    WRITE = "write"


class LockOutcome(Enum):
    """Result of a conditional lock attempt.

    ACQUIRED            lock is held and the condition held on both checks.
    CONTENDED           the CAS failed or the current mode excludes us;
                        nothing is held, the caller may retry or give up.
    CONDITION_VIOLATED  the guarding predicate failed before or after the
                        acquire; nothing is held and retrying is pointless
                        until the caller re-reads the world.
    """

    ACQUIRED = "acquired"
    CONTENDED = "contended"
    CONDITION_VIOLATED = "condition_violated"


class SpinPolicy:
    """Bounded retry policy for Contended outcomes.

    ``attempts`` caps how many CAS attempts are made before the caller
    gives up and restarts from scratch.  Between attempts we pause with
    a short pass-loop plus ``sleep(0)``.  The pause must stay cheap and
    must never be a timed sleep: the caller may already hold other
    locks, and sleeping while holding a lock stretches hold times by
    orders of magnitude, which turns transient collisions into stable
    livelock.  Patience belongs at the restart level, where nothing is
    held.  Condition violations are never retried.
    """

    __slots__ = ("attempts", "max_pause")

    def __init__(self, attempts: int = 8, max_pause: int = 64):
        assert attempts >= 1
        self.attempts = attempts
        self.max_pause = max_pause

    def pause(self, round_: int) -> None:
        for _ in range(min(1 << round_, self.max_pause)):
            pass
        time.sleep(0)


DEFAULT_SPIN = SpinPolicy()
SINGLE_ATTEMPT = SpinPolicy(attempts=1)


class CondRwLock:
    __slots__ = ("_word", "_guard", "acquire_count")

    def __init__(self):
        self._word = 0
        self._guard = threading.Lock()
        # successful acquisitions, read or write; cheap because it is
        # bumped while the guard is already held
        self.acquire_count = 0

    # -- raw word transitions -------------------------------------------

    @property
    def word(self) -> int:
        return self._word

    def is_write_locked(self) -> bool:
        return self._word == 1

    def reader_count(self) -> int:
        w = self._word
        return 0 if w & 1 else w >> 1

    def try_write_lock(self) -> bool:
        """CAS 0 -> 1.  Single attempt, False on any contention."""
        with self._guard:
            if self._word != 0:
                return False
            self._word = 1
            self.acquire_count += 1
            return True

    def try_read_lock(self) -> bool:
        """CAS even w -> w + 2.  Single attempt, False while a writer holds."""
        with self._guard:
            w = self._word
            if w & 1:
                return False
            self._word = w + 2
            self.acquire_count += 1
            return True

    def unlock_write(self) -> None:
        with self._guard:
            assert self._word == 1, "unlock_write without a held write lock"
            self._word = 0

    def unlock_read(self) -> None:
        with self._guard:
            w = self._word
            assert w >= 2 and not w & 1, "unlock_read without a held read lock"
            self._word = w - 2

    def unlock(self, mode: LockMode) -> None:
        if mode is LockMode.WRITE:
            self.unlock_write()
        else:
            self.unlock_read()

    # -- conditional acquisition ----------------------------------------

    def try_lock_with_condition(self, mode: LockMode, condition) -> LockOutcome:
        """One conditional acquire attempt.

        The predicate runs before the CAS (cheap fast-out while the value
        has already moved on) and again after a successful CAS.  The
        second check is the one that matters: between the first check and
        the acquire the world may change, but once the lock is held the
        guarded field can no longer move, so a passing re-check is
        definitive.  On a failed re-check the lock is released before
        returning, so CONDITION_VIOLATED and CONTENDED both leave nothing
        held.
        """
        if not condition():
            return LockOutcome.CONDITION_VIOLATED
        ok = self.try_write_lock() if mode is LockMode.WRITE else self.try_read_lock()
        if not ok:
            return LockOutcome.CONTENDED
        if not condition():
            self.unlock(mode)
            return LockOutcome.CONDITION_VIOLATED
        return LockOutcome.ACQUIRED

    def lock_with_spin(self, mode: LockMode, condition,
                       policy: SpinPolicy = DEFAULT_SPIN) -> LockOutcome:
        """Retry CONTENDED outcomes up to ``policy.attempts`` times.

        Returns the first non-contended outcome, or CONTENDED once the
        attempt budget is spent.  The caller is expected to restart its
        whole operation in that case rather than block.
        """
        out = self.try_lock_with_condition(mode, condition)
        round_ = 0
        while out is LockOutcome.CONTENDED and round_ + 1 < policy.attempts:
            policy.pause(round_)
            round_ += 1
            out = self.try_lock_with_condition(mode, condition)
        return out

    def __repr__(self):
        w = self._word
        if w == 0:
            state = "free"
        elif w == 1:
            state = "write-held"
        else:
            state = "%d readers" % (w >> 1)
        return "<CondRwLock %s>" % state
