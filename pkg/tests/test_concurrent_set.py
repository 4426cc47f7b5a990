"""Conditional lock helpers, single-threaded equivalence, stats, and
reclamation behaviour of the concurrent set."""

import threading

import pytest
from hypothesis import given, settings, strategies as st

from cobst.concurrent_set import (ConcurrentSet, K_CREATE, K_LOCK, K_READ,
                                  K_WRITE, try_lock_edge, try_lock_edge_ref,
                                  try_lock_edge_val, try_lock_state)
from cobst.reclaim import POISON, EpochReclaimer
from cobst.rwlock import LockMode, LockOutcome, SpinPolicy
from cobst.tree_core import (DATA, LEFT, RIGHT, ROUTING, Node, SequentialBst,
                             dump_tree, validate_structure)


def two_level_tree():
    """parent 10 with children 5 and 15, hanging off a set's root."""
    s = ConcurrentSet()
    for k in (10, 5, 15):
        s.insert(k)
    parent = s.root.left
    return s, parent, parent.left, parent.right


# -- edge lock by reference ------------------------------------------------

def test_edge_ref_acquires_on_match():
    _, parent, child, _ = two_level_tree()
    assert try_lock_edge_ref(parent, LEFT, child) is LockOutcome.ACQUIRED
    assert parent.left_lock.word == 1


def test_edge_ref_rejects_deleted_node():
    _, parent, child, _ = two_level_tree()
    parent.deleted = True
    assert try_lock_edge_ref(parent, LEFT, child) is LockOutcome.CONDITION_VIOLATED
    assert parent.left_lock.word == 0


def test_edge_ref_rejects_swung_child():
    _, parent, child, _ = two_level_tree()
    parent.left = Node(5)               # same key, different node
    assert try_lock_edge_ref(parent, LEFT, child) is LockOutcome.CONDITION_VIOLATED


def test_edge_ref_expected_null():
    s = ConcurrentSet()
    s.insert(10)
    parent = s.root.left
    assert try_lock_edge_ref(parent, RIGHT, None) is LockOutcome.ACQUIRED
    parent.right_lock.unlock_write()
    parent.right = Node(15)
    assert try_lock_edge_ref(parent, RIGHT, None) is LockOutcome.CONDITION_VIOLATED


def test_edge_ref_contended_when_held():
    _, parent, child, _ = two_level_tree()
    parent.left_lock.try_write_lock()
    assert try_lock_edge_ref(parent, LEFT, child) is LockOutcome.CONTENDED


# -- edge lock by value -------------------------------------------------------

def test_edge_val_acquires_on_key_match():
    _, parent, _, _ = two_level_tree()
    assert try_lock_edge_val(parent, LEFT, 5) is LockOutcome.ACQUIRED


def test_edge_val_tolerates_node_replacement():
    # the twin-delete enabler: a new node carrying the same key satisfies
    # the value condition even though the reference changed
    _, parent, _, _ = two_level_tree()
    parent.left = Node(5)
    assert try_lock_edge_val(parent, LEFT, 5) is LockOutcome.ACQUIRED
    assert parent.left_lock.word == 1


def test_edge_val_rejects_null_child():
    _, parent, _, _ = two_level_tree()
    parent.left = None
    assert try_lock_edge_val(parent, LEFT, 5) is LockOutcome.CONDITION_VIOLATED


def test_edge_val_rejects_key_mismatch():
    _, parent, _, _ = two_level_tree()
    assert try_lock_edge_val(parent, LEFT, 7) is LockOutcome.CONDITION_VIOLATED


def test_edge_val_rejects_deleted_parent():
    _, parent, _, _ = two_level_tree()
    parent.deleted = True
    assert try_lock_edge_val(parent, LEFT, 5) is LockOutcome.CONDITION_VIOLATED


# -- state lock -----------------------------------------------------------------

def test_state_lock_write_on_expected_state():
    _, parent, _, _ = two_level_tree()
    assert try_lock_state(parent, LockMode.WRITE, DATA) is LockOutcome.ACQUIRED
    assert parent.state_lock.word == 1


def test_state_lock_rejects_state_mismatch():
    _, parent, _, _ = two_level_tree()
    assert try_lock_state(parent, LockMode.WRITE, ROUTING) \
        is LockOutcome.CONDITION_VIOLATED


def test_state_lock_rejects_deleted():
    _, parent, _, _ = two_level_tree()
    parent.deleted = True
    assert try_lock_state(parent, LockMode.READ, DATA) \
        is LockOutcome.CONDITION_VIOLATED


def test_state_lock_read_is_shared():
    _, parent, _, _ = two_level_tree()
    assert try_lock_state(parent, LockMode.READ, DATA) is LockOutcome.ACQUIRED
    assert try_lock_state(parent, LockMode.READ, DATA) is LockOutcome.ACQUIRED
    assert parent.state_lock.word == 4
    assert try_lock_state(parent, LockMode.WRITE, DATA) is LockOutcome.CONTENDED


# -- edge dispatch ------------------------------------------------------------------

def test_edge_dispatch_picks_side_by_key_order():
    _, parent, left, right = two_level_tree()
    assert try_lock_edge(parent, left) is LockOutcome.ACQUIRED
    assert parent.left_lock.word == 1 and parent.right_lock.word == 0
    assert try_lock_edge(parent, right, by="val") is LockOutcome.ACQUIRED
    assert parent.right_lock.word == 1


def test_edge_dispatch_equal_keys_assert():
    _, parent, _, _ = two_level_tree()
    with pytest.raises(AssertionError):
        try_lock_edge(parent, Node(parent.val))


def test_edge_dispatch_rejects_unknown_variant():
    _, parent, left, _ = two_level_tree()
    with pytest.raises(ValueError):
        try_lock_edge(parent, left, by="stamp")


# -- single-threaded equivalence -------------------------------------------------

ops_strategy = st.lists(
    st.tuples(st.sampled_from(["insert", "delete", "contains"]),
              st.integers(min_value=0, max_value=15)),
    max_size=100)


@settings(max_examples=150, deadline=None)
@given(ops_strategy)
def test_single_thread_matches_oracle(ops):
    s = ConcurrentSet(track_unlinked=True, debug_checks=True)
    oracle = set()
    for op, k in ops:
        if op == "insert":
            assert s.insert(k) == (k not in oracle)
            oracle.add(k)
        elif op == "delete":
            assert s.delete(k) == (k in oracle)
            oracle.discard(k)
        else:
            assert s.contains(k) == (k in oracle)
    assert s.snapshot_keys() == sorted(oracle)
    rep = validate_structure(s)
    assert rep.ok, rep.problems


@settings(max_examples=100, deadline=None)
@given(ops_strategy)
def test_single_thread_builds_same_shape_as_sequential(ops):
    # driven by one thread the concurrent code must perform the exact
    # structural steps of the sequential algorithm
    con = ConcurrentSet(debug_checks=True)
    seq = SequentialBst()
    for op, k in ops:
        assert getattr(con, op)(k) == getattr(seq, op)(k)
    assert dump_tree(con) == dump_tree(seq)


def test_run_op_reports_outcome():
    s = ConcurrentSet()
    out = s.run_op("insert", 5)
    assert (out.op, out.key, out.result, out.restarts) == ("insert", 5, True, 0)
    out = s.run_op("insert", 5)
    assert out.result is False
    out = s.run_op("contains", 5)
    assert out.result is True and out.restarts == 0


def test_run_op_rejects_unknown_op():
    s = ConcurrentSet()
    with pytest.raises(ValueError):
        s.run_op("pop", 1)


def test_insert_promotes_existing_routing_node():
    s = ConcurrentSet()
    for k in (2, 1, 3):
        s.insert(k)
    s.delete(2)
    node2 = s.root.left
    assert node2.state == ROUTING
    assert s.insert(2) is True
    assert s.root.left is node2
    assert node2.state == DATA


def test_key_validation_at_api_boundary():
    s = ConcurrentSet()
    with pytest.raises(ValueError):
        s.insert(2 ** 63 - 1)
    with pytest.raises(TypeError):
        s.contains("x")
    with pytest.raises(TypeError):
        s.delete(1.5)


# -- stats and wait-freedom ---------------------------------------------------------

def test_contains_acquires_no_locks():
    s = ConcurrentSet()
    for k in (10, 5, 15, 3, 7):
        s.insert(k)
    for k in range(20):
        s.contains(k)
    snap = s.stats_snapshot()
    assert snap["acquisitions"]["contains"] == 0
    assert snap["ops"]["contains"] == 20
    # updates do lock; the counters must attribute them to updates only
    assert snap["acquisitions"]["insert"] > 0


def test_stats_track_per_thread_and_merge():
    s = ConcurrentSet()
    s.run_op("insert", 1, tkey="a")
    s.run_op("insert", 2, tkey="b")
    s.run_op("delete", 1, tkey="b")
    assert s.stats("a").ops["insert"] == 1
    assert s.stats("b").completed == 2
    snap = s.stats_snapshot()
    assert snap["completed"] == 3
    assert snap["ops"] == {"contains": 0, "insert": 2, "delete": 1}
    assert s.total_completed() == 3


# -- reclamation ----------------------------------------------------------------------

def test_unlinked_nodes_reclaimed_after_drain():
    s = ConcurrentSet(track_unlinked=True)
    for k in (10, 5, 15):
        s.insert(k)
    s.delete(5)
    s.delete(15)                        # unlinks leaf 15 and demoted parents
    ghosts = list(s.unlinked)
    assert ghosts and all(g.deleted for g in ghosts)
    assert all(not g.reclaimed for g in ghosts) or s.reclaimer.pending() == 0
    s.reclaimer.drain()
    assert s.reclaimer.pending() == 0
    assert all(g.reclaimed for g in ghosts)
    assert all(g.left is POISON and g.right is POISON for g in ghosts)
    assert validate_structure(s).ok


def test_arena_mode_never_reclaims():
    s = ConcurrentSet(track_unlinked=True, reclaim="arena")
    for k in (10, 5):
        s.insert(k)
    s.delete(5)
    s.reclaimer.drain()
    assert s.reclaimer.pending() == len(s.unlinked) == 1
    ghost = s.unlinked[0]
    assert not ghost.reclaimed
    assert ghost.left is not POISON


def test_retired_node_stays_intact_while_a_reader_is_pinned():
    s = ConcurrentSet(track_unlinked=True)
    for k in (10, 5):
        s.insert(k)
    s.reclaimer.pin("slow-reader")
    s.delete(5)
    ghost = s.unlinked[0]
    for _ in range(10):
        s.reclaimer.try_advance()       # cannot advance past the pin
    assert not ghost.reclaimed
    assert ghost.deleted                # observable as logically deleted
    s.reclaimer.unpin("slow-reader")
    s.reclaimer.drain()
    assert ghost.reclaimed


def test_retire_requires_deleted_mark():
    r = EpochReclaimer()
    with pytest.raises(AssertionError):
        r.retire(Node(5))


def test_epoch_advances_only_when_pins_caught_up():
    r = EpochReclaimer()
    r.pin("t1")
    assert r.try_advance()              # t1 pinned at current epoch: fine
    assert not r.try_advance()          # now t1 lags one epoch behind
    r.unpin("t1")
    assert r.try_advance()


# -- instrumentation ---------------------------------------------------------------

def test_real_mode_generators_never_yield():
    s = ConcurrentSet()
    g = s.op_gen("insert", 5)
    with pytest.raises(StopIteration) as stop:
        next(g)
    assert stop.value.value.result is True


def test_instrumented_insert_yields_frozen_checkpoint_sequence():
    s = ConcurrentSet(instrumented=True)
    points = []
    g = s.op_gen("insert", 5, tkey=0)
    try:
        while True:
            points.append(g.send(None))
    except StopIteration as stop:
        out = stop.value
    assert out.result is True
    kinds = [p.kind for p in points]
    names = [p.name for p in points]
    # one traversal read (root), the edge lock, the parent state read
    # lock, the node allocation, the link write
    assert kinds == [K_READ, K_LOCK, K_LOCK, K_CREATE, K_WRITE]
    assert names == ["traverse.left", "insert.edge", "insert.parent_state",
                     "insert.node", "insert.link"]


def test_instrumented_contains_yields_reads_only():
    s = ConcurrentSet(instrumented=True)
    s.run_op("insert", 5, tkey=0)
    points = []
    g = s.op_gen("contains", 5, tkey=1)
    try:
        while True:
            points.append(g.send(None))
    except StopIteration as stop:
        out = stop.value
    assert out.result is True
    assert [p.kind for p in points] == [K_READ, K_READ]
    assert s.stats_snapshot()["acquisitions"]["contains"] == 0


def test_lock_event_hook_sees_outcomes():
    events = []
    s = ConcurrentSet(on_lock_event=lambda tkey, point, out: events.append(out))
    s.insert(5)
    assert events.count(LockOutcome.ACQUIRED) == 2   # edge + parent state
    s.insert(5)                                      # present: no locking
    assert len(events) == 2


def test_lock_order_tracker_rejects_upward_then_downward():
    # white-box: feed the order tracker a shallower-then-deeper pair,
    # which the algorithm never produces
    s = ConcurrentSet(debug_checks=True)
    s.insert(10)
    node = s.root.left
    from cobst.concurrent_set import _ALWAYS, _AttemptCtx
    ctx = _AttemptCtx("t")
    st = s.stats("t")

    def run(gen):
        while True:
            try:
                next(gen)
            except StopIteration as stop:
                return stop.value

    out = run(s._lock(ctx, "t", st, "delete", node.state_lock, LockMode.READ,
                      _ALWAYS, "state", "x", level=-1))
    assert out is LockOutcome.ACQUIRED
    with pytest.raises(AssertionError):
        run(s._lock(ctx, "t", st, "delete", node.left_lock, LockMode.WRITE,
                    _ALWAYS, "edge_ref", "y", level=0))
    s._release_all(ctx)


def test_custom_spin_policy_accepted():
    s = ConcurrentSet(spin=SpinPolicy(attempts=1))
    assert s.insert(5) and s.contains(5)


# -- short real-thread smoke -----------------------------------------------------------

@pytest.mark.parametrize("reclaim", ["epoch", "arena"])
def test_concurrent_smoke(reclaim):
    s = ConcurrentSet(track_unlinked=True, reclaim=reclaim)
    errors = []
    barrier = threading.Barrier(4)

    def worker(seed):
        import random
        rng = random.Random(seed)
        barrier.wait()
        try:
            for _ in range(800):
                k = rng.randrange(32)
                op = rng.choice(("insert", "delete", "contains"))
                getattr(s, op)(k)
        except BaseException as e:  # noqa: BLE001
            errors.append(repr(e))

    threads = [threading.Thread(target=worker, args=(i,)) for i in range(4)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert errors == []
    rep = validate_structure(s)
    assert rep.ok, rep.problems
    snap = s.stats_snapshot()
    assert snap["completed"] == 4 * 800
    assert snap["acquisitions"]["contains"] == 0
