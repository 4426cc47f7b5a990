"""Word-encoding, conditional acquisition, and exclusion tests for
CondRwLock."""

import itertools
import threading

import pytest
from hypothesis import given, strategies as st

from cobst.rwlock import (CondRwLock, LockMode, LockOutcome, SpinPolicy,
                          SINGLE_ATTEMPT)


TRUE = lambda: True  # noqa: E731
FALSE = lambda: False  # noqa: E731


# -- frozen word-encoding examples ---------------------------------------

def test_write_acquire_from_free():
    lk = CondRwLock()
    assert lk.try_write_lock()
    assert lk.word == 1
    assert lk.is_write_locked()


def test_write_contended_on_writer():
    lk = CondRwLock()
    assert lk.try_write_lock()
    assert not lk.try_write_lock()
    assert lk.word == 1


def test_write_contended_on_readers():
    lk = CondRwLock()
    assert lk.try_read_lock()
    assert lk.try_read_lock()
    assert lk.word == 4
    assert not lk.try_write_lock()
    assert lk.word == 4


def test_read_acquire_encoding():
    lk = CondRwLock()
    assert lk.try_read_lock()
    assert lk.word == 2
    assert lk.try_read_lock()
    assert lk.word == 4
    assert lk.reader_count() == 2


def test_read_contended_on_writer():
    lk = CondRwLock()
    assert lk.try_write_lock()
    assert not lk.try_read_lock()
    assert lk.word == 1
    assert lk.reader_count() == 0


def test_unlock_write_transition():
    lk = CondRwLock()
    lk.try_write_lock()
    lk.unlock_write()
    assert lk.word == 0


def test_unlock_read_transitions():
    lk = CondRwLock()
    lk.try_read_lock()
    lk.try_read_lock()
    lk.unlock_read()
    assert lk.word == 2
    lk.unlock_read()
    assert lk.word == 0


def test_unlock_write_without_hold_asserts():
    lk = CondRwLock()
    with pytest.raises(AssertionError):
        lk.unlock_write()


def test_unlock_write_mode_mismatch_asserts():
    lk = CondRwLock()
    lk.try_read_lock()
    with pytest.raises(AssertionError):
        lk.unlock_write()


def test_unlock_read_without_hold_asserts():
    lk = CondRwLock()
    with pytest.raises(AssertionError):
        lk.unlock_read()
    lk.try_write_lock()
    with pytest.raises(AssertionError):
        lk.unlock_read()


def test_unlock_dispatches_by_mode():
    lk = CondRwLock()
    lk.try_write_lock()
    lk.unlock(LockMode.WRITE)
    lk.try_read_lock()
    lk.unlock(LockMode.READ)
    assert lk.word == 0


def test_acquire_count_tracks_successes_only():
    lk = CondRwLock()
    lk.try_write_lock()
    lk.try_write_lock()          # contended, not counted
    lk.unlock_write()
    lk.try_read_lock()
    assert lk.acquire_count == 2


# -- conditional acquisition ----------------------------------------------

def test_cond_acquire_plain():
    lk = CondRwLock()
    assert lk.try_lock_with_condition(LockMode.WRITE, TRUE) is LockOutcome.ACQUIRED
    assert lk.word == 1


def test_cond_fails_before_acquire():
    lk = CondRwLock()
    calls = []
    out = lk.try_lock_with_condition(LockMode.WRITE,
                                     lambda: calls.append(1) and False)
    assert out is LockOutcome.CONDITION_VIOLATED
    assert lk.word == 0
    assert len(calls) == 1       # no second evaluation, no acquire


def test_cond_fails_after_acquire_releases():
    # the predicate flips between the pre-check and the post-check; the
    # lock must come back released
    lk = CondRwLock()
    answers = [True, False]
    out = lk.try_lock_with_condition(LockMode.READ, lambda: answers.pop(0))
    assert out is LockOutcome.CONDITION_VIOLATED
    assert lk.word == 0
    assert answers == []


def test_cond_contended_checks_before_cas():
    lk = CondRwLock()
    lk.try_write_lock()
    out = lk.try_lock_with_condition(LockMode.READ, TRUE)
    assert out is LockOutcome.CONTENDED
    assert lk.word == 1
    # a false condition wins over contention: the caller must restart,
    # not retry
    out = lk.try_lock_with_condition(LockMode.READ, FALSE)
    assert out is LockOutcome.CONDITION_VIOLATED


def test_failed_outcomes_leave_word_unchanged():
    lk = CondRwLock()
    lk.try_read_lock()
    before = lk.word
    assert lk.try_lock_with_condition(LockMode.WRITE, TRUE) is LockOutcome.CONTENDED
    assert lk.word == before
    assert lk.try_lock_with_condition(LockMode.WRITE, FALSE) is LockOutcome.CONDITION_VIOLATED
    assert lk.word == before


# -- bounded spin -----------------------------------------------------------

def test_spin_gives_up_after_budget():
    lk = CondRwLock()
    lk.try_write_lock()
    pauses = []

    class Counting(SpinPolicy):
        def pause(self, round_):
            pauses.append(round_)

    out = lk.lock_with_spin(LockMode.WRITE, TRUE, Counting(attempts=5))
    assert out is LockOutcome.CONTENDED
    assert pauses == [0, 1, 2, 3]   # attempts - 1 pauses between 5 tries


def test_spin_succeeds_when_freed_mid_way():
    lk = CondRwLock()
    lk.try_write_lock()

    class Freeing(SpinPolicy):
        def pause(self, round_):
            if round_ == 1:
                lk.unlock_write()

    out = lk.lock_with_spin(LockMode.WRITE, TRUE, Freeing(attempts=8))
    assert out is LockOutcome.ACQUIRED
    assert lk.word == 1


def test_spin_never_retries_condition_violation():
    lk = CondRwLock()
    calls = []

    def cond():
        calls.append(1)
        return False

    out = lk.lock_with_spin(LockMode.WRITE, cond, SpinPolicy(attempts=50))
    assert out is LockOutcome.CONDITION_VIOLATED
    assert len(calls) == 1


def test_single_attempt_policy():
    lk = CondRwLock()
    lk.try_read_lock()
    assert lk.lock_with_spin(LockMode.WRITE, TRUE, SINGLE_ATTEMPT) \
        is LockOutcome.CONTENDED


# -- encoding round-trip property -------------------------------------------

@given(st.lists(st.booleans(), max_size=60))
def test_reader_word_is_twice_net_acquires(flags):
    # True = acquire, False = release one held reader (skipped when none
    # held); afterwards word == 2 * (acquires - releases)
    lk = CondRwLock()
    held = 0
    for acquire in flags:
        if acquire:
            assert lk.try_read_lock()
            held += 1
        elif held:
            lk.unlock_read()
            held -= 1
    assert lk.word == 2 * held
    assert lk.reader_count() == held


@given(st.lists(st.sampled_from(["w+", "w-", "r+", "r-"]), max_size=40))
def test_word_matches_reference_automaton(ops):
    # replay any op sequence against the plain integer automaton; illegal
    # releases are skipped, acquires may fail and must match the automaton
    lk = CondRwLock()
    word = 0
    for op in ops:
        if op == "w+":
            assert lk.try_write_lock() == (word == 0)
            if word == 0:
                word = 1
        elif op == "r+":
            assert lk.try_read_lock() == (word != 1)
            if word != 1:
                word += 2
        elif op == "w-" and word == 1:
            lk.unlock_write()
            word = 0
        elif op == "r-" and word >= 2:
            lk.unlock_read()
            word -= 2
        assert lk.word == word


# -- exhaustive two-thread model check ---------------------------------------

def _interleavings(a, b):
    """All merges of two sequences, as pick-from-a boolean tuples."""
    n, m = len(a), len(b)
    for picks in itertools.combinations(range(n + m), n):
        order = []
        ai = iter(a)
        bi = iter(b)
        pick_set = set(picks)
        for i in range(n + m):
            order.append(next(ai) if i in pick_set else next(bi))
        yield order


MODEL_OPS = ("tw", "tr", "un")


def test_two_thread_model_check():
    """Every interleaving of every pair of 3-op thread programs agrees
    with a reference automaton, and no state has a writer coexist with
    any other holder."""
    for prog_a in itertools.product(MODEL_OPS, repeat=3):
        for prog_b in itertools.product(MODEL_OPS, repeat=3):
            a = [("A", op) for op in prog_a]
            b = [("B", op) for op in prog_b]
            for order in _interleavings(a, b):
                lk = CondRwLock()
                word = 0
                held = {"A": [], "B": []}
                for tid, op in order:
                    if op == "tw":
                        got = lk.try_write_lock()
                        assert got == (word == 0)
                        if got:
                            word = 1
                            held[tid].append("w")
                    elif op == "tr":
                        got = lk.try_read_lock()
                        assert got == (word != 1)
                        if got:
                            word += 2
                            held[tid].append("r")
                    elif held[tid]:
                        kind = held[tid].pop()
                        lk.unlock(LockMode.WRITE if kind == "w" else LockMode.READ)
                        word = 0 if kind == "w" else word - 2
                    assert lk.word == word
                    writers = sum(g == "w" for g in held["A"] + held["B"])
                    total = len(held["A"]) + len(held["B"])
                    assert not (writers and total > 1)
                    assert writers <= 1


# -- real threads -------------------------------------------------------------

def test_mutual_exclusion_under_real_threads():
    """Writers bump a shared counter by two in two steps under the write
    lock; readers snapshot it under the read lock.  Any exclusion bug
    shows up as an odd snapshot."""
    lk = CondRwLock()
    counter = [0]
    odd_seen = []
    rounds = 4000

    def writer():
        done = 0
        while done < rounds:
            if lk.try_write_lock():
                counter[0] += 1
                counter[0] += 1
                lk.unlock_write()
                done += 1

    def reader():
        done = 0
        while done < rounds:
            if lk.try_read_lock():
                if counter[0] % 2:
                    odd_seen.append(counter[0])
                lk.unlock_read()
                done += 1

    threads = [threading.Thread(target=writer) for _ in range(2)]
    threads += [threading.Thread(target=reader) for _ in range(2)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert odd_seen == []
    assert counter[0] == 2 * 2 * rounds
    assert lk.word == 0
