"""Concurrent set over the partially-external BST.

Every operation is optimistic: an unsynchronized traversal finds the
relevant nodes, then the operation takes the smallest possible set of
conditional locks, re-verifies that the world still looks the way the
traversal saw it, and commits.  Any lock outcome other than ACQUIRED
aborts the attempt, releases everything, and restarts from a fresh
traversal.  Reads (``contains``) take no locks at all and never restart.

Lock granularity is per-field: each node has one lock per outgoing
child edge and one for its state/deleted pair.  Edge locks are only
ever taken exclusively; state locks are taken shared by operations that
merely need the state pinned and exclusively by the ones changing it.
Edge locks come in two conditional flavours: by reference (the child
pointer must still be the expected object) and by value (the child must
hold the expected key, tolerating replacement of the node by an equal
one).  Within one attempt locks are acquired from deeper nodes towards
the root, which rules out deadlock; an optional debug tracker asserts
that ordering.

Deletion is two-stage: a node is first marked ``deleted`` (the logical
point of no return) and then unlinked, both under the same locks.
Readers that already hold a reference may still observe the node as
DATA afterwards; that is deliberate and linearizable, because such
reads overlap the deletion.  Unlinked nodes go to the epoch reclaimer.

The operation bodies are written as generators.  In normal use the
yields are disabled and the generator is drained in a tight loop, so
real threads pay almost nothing.  A set built with ``instrumented=True``
yields a checkpoint descriptor before every shared read, committed
write, node creation and lock attempt, which is what the deterministic
schedule harness steps on.  Post-lock re-verification reads do not
yield: no other thread can run between a lock grant and its re-check in
any schedule, so suspending there would only inflate the interleaving
space without adding behaviours.
"""

from __future__ import annotations

import itertools
import random
import threading
import time
from dataclasses import dataclass

from .reclaim import EpochReclaimer
from .rwlock import (CondRwLock, LockMode, LockOutcome, SpinPolicy,
                     DEFAULT_SPIN)
from .tree_core import (DATA, LEFT, PLUS_INF, RIGHT, ROUTING, Node,
                        TraversalResult, validate_key)

__all__ = [
    "ConcurrentSet", "OpOutcome", "ThreadStats",
    "try_lock_edge_ref", "try_lock_edge_val", "try_lock_state", "try_lock_edge",
    "Site", "LockPoint",
    "K_READ", "K_WRITE", "K_LOCK", "K_CREATE",
]

# checkpoint kinds, as seen by the schedule harness
K_READ = "read"
K_WRITE = "write"
K_LOCK = "lock"
K_CREATE = "create"


class Site:
    """Constant descriptor of one instrumented program point."""

    __slots__ = ("kind", "name")

    def __init__(self, kind: str, name: str):
        self.kind = kind
        self.name = name

    def __repr__(self):
        return "<%s %s>" % (self.kind, self.name)


class LockPoint:
    """Checkpoint for one pending lock attempt.

    Unlike the constant Sites this is allocated per attempt because the
    harness needs the concrete lock, the requested mode and the guard
    predicate to decide whether the attempt could even succeed right
    now (the predicate only performs reads, so peeking is free of side
    effects).
    """

    __slots__ = ("kind", "family", "name", "lock", "mode", "cond")

    def __init__(self, family: str, name: str, lock: CondRwLock,
                 mode: LockMode, cond):
        self.kind = K_LOCK
        self.family = family
        self.name = name
        self.lock = lock
        self.mode = mode
        self.cond = cond

    def would_block(self) -> bool:
        """True if attempting now could only end in CONTENDED.

        A false condition short-circuits the attempt before the CAS, so
        such attempts are never blocked, they fail fast with
        CONDITION_VIOLATED.
        """
        if not self.cond():
            return False
        w = self.lock.word
        return w == 1 if self.mode is LockMode.READ else w != 0

    def __repr__(self):
        return "<lock %s %s %s>" % (self.name, self.mode.value, self.lock)


# traversal and case-selection reads; these mirror the reads the
# sequential algorithm performs, which is exactly the set of points
# where interleavings can differ
S_TRAV_LEFT = Site(K_READ, "traverse.left")
S_TRAV_RIGHT = Site(K_READ, "traverse.right")
S_CONT_STATE = Site(K_READ, "contains.state")
S_INS_STATE = Site(K_READ, "insert.state")
S_DEL_STATE = Site(K_READ, "delete.state")
S_DEL_LEFT = Site(K_READ, "delete.left")
S_DEL_RIGHT = Site(K_READ, "delete.right")
S_DEL_PSTATE = Site(K_READ, "delete.parent_state")
S_DEL_SIBLING = Site(K_READ, "delete.sibling")

# committed structural writes
W_INS_LINK = Site(K_WRITE, "insert.link")
W_INS_PROMOTE = Site(K_WRITE, "insert.promote")
W_DEL_DEMOTE = Site(K_WRITE, "delete.demote")
W_DEL_MARK = Site(K_WRITE, "delete.mark")
W_DEL_MARK_PARENT = Site(K_WRITE, "delete.mark_parent")
W_DEL_SPLICE = Site(K_WRITE, "delete.splice")
W_DEL_UNLINK_LEAF = Site(K_WRITE, "delete.unlink_leaf")
W_DEL_UNLINK_PAIR = Site(K_WRITE, "delete.unlink_pair")

C_INS_NODE = Site(K_CREATE, "insert.node")

_ALWAYS = lambda: True  # noqa: E731  (plain, unconditional acquisition)

RESTART = object()       # attempt verdict: release everything, traverse again

# Randomized backoff between restarts, while no locks are held.  Timed
# sleeps are safe here precisely because the attempt released everything;
# they are what breaks the symmetry when two threads keep colliding on
# the same pair of locks.
_BACKOFF_BASE_S = 5e-5
_BACKOFF_CAP_S = 2e-3
_BACKOFF_MAX_EXP = 5


# -- conditional lock helpers ------------------------------------------
#
# Single-attempt public forms.  The guard predicates re-read the node
# fields on every call, which is the whole point: they run once before
# the CAS and once after, and only the post-acquire evaluation is
# authoritative.

def _edge_ref_cond(node: Node, side: int, expected):
    if side == LEFT:
        return lambda: node.left is expected and not node.deleted
    return lambda: node.right is expected and not node.deleted


def _edge_val_cond(node: Node, side: int, expected_key: int):
    if side == LEFT:
        def cond():
            c = node.left
            return c is not None and c.val == expected_key and not node.deleted
    else:
        def cond():
            c = node.right
            return c is not None and c.val == expected_key and not node.deleted
    return cond


def _state_cond(node: Node, expected_state: str):
    return lambda: node.state == expected_state and not node.deleted


def try_lock_edge_ref(node: Node, side: int, expected) -> LockOutcome:
    """One attempt at the edge lock, valid only while the child pointer
    is still ``expected`` (identity) and the node is not deleted."""
    return node.edge_lock(side).try_lock_with_condition(
        LockMode.WRITE, _edge_ref_cond(node, side, expected))


def try_lock_edge_val(node: Node, side: int, expected_key: int) -> LockOutcome:
    """One attempt at the edge lock, valid while the child holds
    ``expected_key``.  Tolerates the child node being swapped for a
    different node carrying the same key, which a reference lock would
    spuriously reject."""
    return node.edge_lock(side).try_lock_with_condition(
        LockMode.WRITE, _edge_val_cond(node, side, expected_key))


def try_lock_state(node: Node, mode: LockMode, expected_state: str) -> LockOutcome:
    """One attempt at the node's state lock, valid while the state is
    still ``expected_state`` and the node is not deleted."""
    return node.state_lock.try_lock_with_condition(
        mode, _state_cond(node, expected_state))


def try_lock_edge(node: Node, child: Node, by: str = "ref") -> LockOutcome:
    """Lock the edge from ``node`` to ``child``, picking the side from
    the key order.  ``by`` selects reference or value validation."""
    assert child.val != node.val, "parent and child cannot share a key"
    side = LEFT if child.val < node.val else RIGHT
    if by == "ref":
        return try_lock_edge_ref(node, side, child)
    if by == "val":
        return try_lock_edge_val(node, side, child.val)
    raise ValueError("by must be 'ref' or 'val', got %r" % (by,))


class ThreadStats:
    __slots__ = ("ops", "completed", "restarts", "acquisitions",
                 "cond_violations", "contended_aborts")

    def __init__(self):
        self.ops = {"contains": 0, "insert": 0, "delete": 0}
        self.completed = 0
        self.restarts = 0
        # successful lock acquisitions attributed to the operation type;
        # the contains column staying at zero is the wait-free-read
        # evidence the tests assert on
        self.acquisitions = {"contains": 0, "insert": 0, "delete": 0}
        self.cond_violations = {}    # lock family -> count
        self.contended_aborts = {}   # lock family -> count


@dataclass
class OpOutcome:
    op: str
    key: int
    result: bool
    restarts: int


class _AttemptCtx:
    """Per-attempt lock bookkeeping: what we hold (for the all-or-nothing
    release) and the last lock level (for the deadlock-order assert)."""

    __slots__ = ("tkey", "held", "last_level")

    def __init__(self, tkey):
        self.tkey = tkey
        self.held = []
        self.last_level = None


class ConcurrentSet:
    """Linearizable set of integer keys with wait-free membership tests.

    Thread safe without any external locking.  ``contains`` never takes
    a lock and never restarts; ``insert`` and ``delete`` lock only the
    couple of nodes they modify.  Construction options:

    instrumented    operations yield checkpoint descriptors for the
                    deterministic schedule harness; lock attempts become
                    single-shot (no spinning) so schedules stay exact
    trace           a list to append structural trace events to
                    (created/state/mark/edge tuples, commit order)
    recorder        invocation/response recorder with ``invoke``/``respond``
    on_lock_event   callback (tkey, point, outcome) after each attempt
    reclaim         "epoch" (default) or "arena" (never free)
    track_unlinked  keep every unlinked node in ``self.unlinked`` so
                    validation can prove they stay unreachable
    debug_checks    assert the child-before-parent lock ordering
    """

    def __init__(self, *, instrumented: bool = False, trace: list | None = None,
                 recorder=None, on_lock_event=None, reclaim: str = "epoch",
                 track_unlinked: bool = False, debug_checks: bool = False,
                 spin: SpinPolicy = DEFAULT_SPIN):
        self._ids = itertools.count()
        self.root = Node(PLUS_INF, DATA, next(self._ids))
        self._instr = instrumented
        self._trace = trace
        self._recorder = recorder
        self._on_lock_event = on_lock_event
        self.reclaimer = EpochReclaimer(mode=reclaim)
        self.track_unlinked = track_unlinked
        self.unlinked: list[Node] = []
        self._debug = debug_checks
        self._spin = spin
        self._stats: dict = {}
        # who currently holds which lock, for the harness's wait-for
        # diagnostics; only maintained when instrumented
        self.lock_holders: dict | None = {} if instrumented else None

    # -- public set interface -------------------------------------------

    def contains(self, v) -> bool:
        return self._drain(self._contains_gen(v, threading.get_ident())).result

    def insert(self, v) -> bool:
        return self._drain(self._insert_gen(v, threading.get_ident())).result

    def delete(self, v) -> bool:
        return self._drain(self._delete_gen(v, threading.get_ident())).result

    def run_op(self, op: str, v, tkey=None) -> OpOutcome:
        """Run one operation to completion and return the full outcome,
        including how many times it had to restart."""
        return self._drain(self.op_gen(op, v, tkey))

    def op_gen(self, op: str, v, tkey=None):
        """The stepping form used by the schedule harness: a generator
        that yields at every checkpoint when the set is instrumented.
        ``tkey`` identifies the logical thread for stats and epoch
        pinning; it defaults to the real thread id."""
        if tkey is None:
            tkey = threading.get_ident()
        if op == "contains":
            return self._contains_gen(v, tkey)
        if op == "insert":
            return self._insert_gen(v, tkey)
        if op == "delete":
            return self._delete_gen(v, tkey)
        raise ValueError("unknown operation %r" % (op,))

    @staticmethod
    def _drain(gen) -> OpOutcome:
        while True:
            try:
                next(gen)
            except StopIteration as stop:
                return stop.value

    # -- introspection (quiescent callers only) ---------------------------

    def snapshot_keys(self) -> list[int]:
        out = []
        stack = [self.root]
        while stack:
            n = stack.pop()
            if n is None:
                continue
            if n.state == DATA and n.val != PLUS_INF:
                out.append(n.val)
            stack.append(n.left)
            stack.append(n.right)
        out.sort()
        return out

    def stats(self, tkey=None) -> ThreadStats:
        if tkey is None:
            tkey = threading.get_ident()
        return self._thread_stats(tkey)

    def stats_snapshot(self) -> dict:
        """Merged per-thread counters."""
        total = ThreadStats()
        for st in list(self._stats.values()):
            total.completed += st.completed
            total.restarts += st.restarts
            for k in total.ops:
                total.ops[k] += st.ops[k]
                total.acquisitions[k] += st.acquisitions[k]
            for d_to, d_from in ((total.cond_violations, st.cond_violations),
                                 (total.contended_aborts, st.contended_aborts)):
                for k, n in d_from.items():
                    d_to[k] = d_to.get(k, 0) + n
        return {
            "completed": total.completed,
            "restarts": total.restarts,
            "ops": total.ops,
            "acquisitions": total.acquisitions,
            "cond_violations": total.cond_violations,
            "contended_aborts": total.contended_aborts,
        }

    def total_completed(self) -> int:
        return sum(st.completed for st in list(self._stats.values()))

    # -- internals ---------------------------------------------------------

    def _thread_stats(self, tkey) -> ThreadStats:
        st = self._stats.get(tkey)
        if st is None:
            st = self._stats[tkey] = ThreadStats()
        return st

    def _make_node(self, v: int) -> Node:
        node = Node(v, DATA, next(self._ids))
        if self._trace is not None:
            self._trace.append(("create", node.id, v, DATA))
        return node

    def _trace_state(self, node: Node, new_state: str) -> None:
        if self._trace is not None:
            self._trace.append(("state", node.id, new_state))

    def _trace_mark(self, node: Node) -> None:
        if self._trace is not None:
            self._trace.append(("mark", node.id))

    def _trace_edge(self, parent: Node, side: int, child) -> None:
        if self._trace is not None:
            self._trace.append(("edge", parent.id, side,
                                None if child is None else child.id))

    def _note_unlinked(self, node: Node) -> None:
        if self.track_unlinked:
            self.unlinked.append(node)
        self.reclaimer.retire(node)

    def _backoff(self, n: int) -> None:
        """Sleep a random, exponentially growing amount after the n-th
        restart of one operation.  Called with no locks held."""
        limit = min(_BACKOFF_BASE_S * (1 << min(n - 1, _BACKOFF_MAX_EXP)),
                    _BACKOFF_CAP_S)
        time.sleep(random.uniform(0.0, limit))

    def _release_all(self, ctx: _AttemptCtx) -> None:
        held = ctx.held
        holders = self.lock_holders
        while held:
            lock, mode = held.pop()
            lock.unlock(mode)
            if holders is not None:
                holders[id(lock)].remove(ctx.tkey)

    def _lock(self, ctx: _AttemptCtx, tkey, st: ThreadStats, optag: str,
              lock: CondRwLock, mode: LockMode, cond, family: str,
              name: str, level: int):
        """One bounded-attempt conditional acquisition (generator).

        Yields a single LockPoint checkpoint when instrumented; spinning
        on contention happens inside one checkpoint because a failed CAS
        re-attempt reads nothing new about the tree.
        """
        if self._debug:
            assert ctx.last_level is None or level <= ctx.last_level, \
                "lock order violated: level %d after %d at %s" % (
                    level, ctx.last_level, name)
            ctx.last_level = level
        if self._instr:
            point = LockPoint(family, name, lock, mode, cond)
            yield point
            out = lock.try_lock_with_condition(mode, cond)
        else:
            point = None
            out = lock.lock_with_spin(mode, cond, self._spin)
        if out is LockOutcome.ACQUIRED:
            ctx.held.append((lock, mode))
            st.acquisitions[optag] += 1
            if self.lock_holders is not None:
                self.lock_holders.setdefault(id(lock), []).append(tkey)
        elif out is LockOutcome.CONDITION_VIOLATED:
            st.cond_violations[family] = st.cond_violations.get(family, 0) + 1
        else:
            st.contended_aborts[family] = st.contended_aborts.get(family, 0) + 1
        if self._on_lock_event is not None:
            self._on_lock_event(tkey, point if point is not None else name, out)
        return out

    def _traverse_gen(self, v: int):
        """Unsynchronized descent; the only checkpoints are the child
        pointer reads, one per step down."""
        instr = self._instr
        gprev = None
        prev = None
        curr = self.root
        while curr is not None:
            cv = curr.val
            if cv == v:
                break
            gprev = prev
            prev = curr
            if v < cv:
                if instr:
                    yield S_TRAV_LEFT
                curr = curr.left
            else:
                if instr:
                    yield S_TRAV_RIGHT
                curr = curr.right
        return TraversalResult(gprev, prev, curr)

    # -- contains ----------------------------------------------------------

    def _contains_gen(self, v, tkey):
        validate_key(v)
        st = self._thread_stats(tkey)
        st.ops["contains"] += 1
        rec = self._recorder
        self.reclaimer.pin(tkey)
        try:
            if rec is not None:
                rec.invoke(tkey, "contains", v)
            tr = yield from self._traverse_gen(v)
            if tr.curr is None:
                result = False
            else:
                if self._instr:
                    yield S_CONT_STATE
                result = tr.curr.state == DATA
        finally:
            self.reclaimer.unpin(tkey)
        if rec is not None:
            rec.respond(tkey, "contains", v, result)
        st.completed += 1
        return OpOutcome("contains", v, result, 0)

    # -- insert ------------------------------------------------------------

    def _insert_gen(self, v, tkey):
        validate_key(v)
        st = self._thread_stats(tkey)
        st.ops["insert"] += 1
        rec = self._recorder
        restarts = 0
        self.reclaimer.pin(tkey)
        try:
            if rec is not None:
                rec.invoke(tkey, "insert", v)
            while True:
                verdict = yield from self._insert_attempt(v, tkey, st)
                if verdict is RESTART:
                    restarts += 1
                    st.restarts += 1
                    if not self._instr:
                        self._backoff(restarts)
                    continue
                result = verdict
                break
        finally:
            self.reclaimer.unpin(tkey)
        if rec is not None:
            rec.respond(tkey, "insert", v, result)
        st.completed += 1
        return OpOutcome("insert", v, result, restarts)

    def _insert_attempt(self, v, tkey, st):
        instr = self._instr
        ctx = _AttemptCtx(tkey)
        try:
            tr = yield from self._traverse_gen(v)
            curr, prev = tr.curr, tr.prev
            if curr is not None:
                if instr:
                    yield S_INS_STATE
                state = tr.set_once("curr_state", curr.state)
                if state == DATA:
                    # present already; lock-free and final even if the
                    # node is concurrently being deleted, the read just
                    # linearizes before that deletion
                    return False
                # routing node holds the key structurally: claim it
                out = yield from self._lock(
                    ctx, tkey, st, "insert", curr.state_lock, LockMode.WRITE,
                    _state_cond(curr, ROUTING), "state", "insert.promote_state",
                    level=0)
                if out is not LockOutcome.ACQUIRED:
                    return RESTART
                if instr:
                    yield W_INS_PROMOTE
                curr.state = DATA
                self._trace_state(curr, DATA)
                return True
            # key absent: hang a fresh leaf off prev, guarded by the edge
            # still being empty and prev still being live
            side = LEFT if v < prev.val else RIGHT
            out = yield from self._lock(
                ctx, tkey, st, "insert", prev.edge_lock(side), LockMode.WRITE,
                _edge_ref_cond(prev, side, None), "edge_ref", "insert.edge",
                level=0)
            if out is not LockOutcome.ACQUIRED:
                return RESTART
            # shared hold on prev's state: blocks a concurrent demotion or
            # deletion of prev between our deleted re-check and the link
            out = yield from self._lock(
                ctx, tkey, st, "insert", prev.state_lock, LockMode.READ,
                _ALWAYS, "state_plain", "insert.parent_state", level=-1)
            if out is not LockOutcome.ACQUIRED:
                return RESTART
            if prev.deleted:   # fresh read under the lock
                return RESTART
            if instr:
                yield C_INS_NODE
            node = self._make_node(v)
            if instr:
                yield W_INS_LINK
            prev.set_child(side, node)
            self._trace_edge(prev, side, node)
            return True
        finally:
            self._release_all(ctx)

    # -- delete ------------------------------------------------------------

    def _delete_gen(self, v, tkey):
        validate_key(v)
        st = self._thread_stats(tkey)
        st.ops["delete"] += 1
        rec = self._recorder
        restarts = 0
        self.reclaimer.pin(tkey)
        try:
            if rec is not None:
                rec.invoke(tkey, "delete", v)
            while True:
                verdict = yield from self._delete_attempt(v, tkey, st)
                if verdict is RESTART:
                    restarts += 1
                    st.restarts += 1
                    if not self._instr:
                        self._backoff(restarts)
                    continue
                result = verdict
                break
        finally:
            self.reclaimer.unpin(tkey)
        if rec is not None:
            rec.respond(tkey, "delete", v, result)
        st.completed += 1
        return OpOutcome("delete", v, result, restarts)

    def _delete_attempt(self, v, tkey, st):
        instr = self._instr
        ctx = _AttemptCtx(tkey)
        try:
            tr = yield from self._traverse_gen(v)
            curr, prev = tr.curr, tr.prev
            if curr is None:
                return False
            if instr:
                yield S_DEL_STATE
            state = tr.set_once("curr_state", curr.state)
            if state != DATA:
                return False
            if instr:
                yield S_DEL_LEFT
            left = tr.set_once("curr_left", curr.left)
            if instr:
                yield S_DEL_RIGHT
            right = tr.set_once("curr_right", curr.right)

            if left is not None and right is not None:
                return (yield from self._delete_two_children(ctx, tkey, st, curr))
            if left is not None or right is not None:
                child = left if left is not None else right
                return (yield from self._delete_one_child(
                    ctx, tkey, st, v, prev, curr, child,
                    LEFT if left is not None else RIGHT))
            # leaf: which unlink shape applies depends on the parent kind
            if instr:
                yield S_DEL_PSTATE
            pstate = tr.set_once("prev_state", prev.state)
            if pstate == DATA:
                return (yield from self._delete_leaf_data_parent(
                    ctx, tkey, st, v, prev))
            side = LEFT if v < prev.val else RIGHT
            if instr:
                yield S_DEL_SIBLING
            sibling = tr.set_once(
                "sibling", prev.right if side == LEFT else prev.left)
            return (yield from self._delete_leaf_routing_parent(
                ctx, tkey, st, v, tr.gprev, prev, sibling))
        finally:
            self._release_all(ctx)

    def _delete_two_children(self, ctx, tkey, st, curr):
        """Both children present: the node only loses its membership and
        stays as routing structure."""
        instr = self._instr
        out = yield from self._lock(
            ctx, tkey, st, "delete", curr.state_lock, LockMode.WRITE,
            _state_cond(curr, DATA), "state", "delete.demote_state", level=0)
        if out is not LockOutcome.ACQUIRED:
            return RESTART
        # the state lock keeps leaf deletions below us out, but a child
        # may have been spliced away before we got the lock; re-check
        if curr.left is None or curr.right is None:
            return RESTART
        if instr:
            yield W_DEL_DEMOTE
        curr.state = ROUTING
        self._trace_state(curr, ROUTING)
        return True

    def _delete_one_child(self, ctx, tkey, st, v, prev, curr, child, child_side):
        """Exactly one child: splice it up into our parent's slot.

        Lock order is strictly deeper-first: the edge below curr, the
        edge above curr, then curr's state.
        """
        instr = self._instr
        side = LEFT if v < prev.val else RIGHT
        out = yield from self._lock(
            ctx, tkey, st, "delete", curr.edge_lock(child_side), LockMode.WRITE,
            _edge_ref_cond(curr, child_side, child), "edge_ref",
            "delete.splice_child_edge", level=1)
        if out is not LockOutcome.ACQUIRED:
            return RESTART
        out = yield from self._lock(
            ctx, tkey, st, "delete", prev.edge_lock(side), LockMode.WRITE,
            _edge_ref_cond(prev, side, curr), "edge_ref",
            "delete.splice_parent_edge", level=0)
        if out is not LockOutcome.ACQUIRED:
            return RESTART
        out = yield from self._lock(
            ctx, tkey, st, "delete", curr.state_lock, LockMode.WRITE,
            _state_cond(curr, DATA), "state", "delete.splice_state", level=0)
        if out is not LockOutcome.ACQUIRED:
            return RESTART
        # fresh re-check that curr still has exactly this one child: the
        # other slot may have been filled by an insert before our state
        # lock landed
        other = curr.right if child_side == LEFT else curr.left
        if other is not None:
            return RESTART
        if instr:
            yield W_DEL_MARK
        curr.deleted = True
        self._trace_mark(curr)
        if instr:
            yield W_DEL_SPLICE
        prev.set_child(side, child)
        self._trace_edge(prev, side, child)
        self._note_unlinked(curr)
        return True

    def _delete_leaf_data_parent(self, ctx, tkey, st, v, prev):
        """Leaf under a DATA parent: just empty the parent's slot.

        The edge is locked by value, so it does not matter whether the
        leaf we traversed to was replaced by another node with the same
        key in the meantime; we re-read the current occupant under the
        lock and delete that one.
        """
        instr = self._instr
        side = LEFT if v < prev.val else RIGHT
        out = yield from self._lock(
            ctx, tkey, st, "delete", prev.edge_lock(side), LockMode.WRITE,
            _edge_val_cond(prev, side, v), "edge_val", "delete.leaf_edge",
            level=0)
        if out is not LockOutcome.ACQUIRED:
            return RESTART
        curr = prev.child(side)   # fresh: the locked occupant, maybe a twin
        out = yield from self._lock(
            ctx, tkey, st, "delete", curr.state_lock, LockMode.WRITE,
            _state_cond(curr, DATA), "state", "delete.leaf_state", level=0)
        if out is not LockOutcome.ACQUIRED:
            return RESTART
        if curr.left is not None or curr.right is not None:
            return RESTART     # grew children since the traversal
        out = yield from self._lock(
            ctx, tkey, st, "delete", prev.state_lock, LockMode.READ,
            _state_cond(prev, DATA), "state", "delete.leaf_parent_state",
            level=-1)
        if out is not LockOutcome.ACQUIRED:
            return RESTART
        if instr:
            yield W_DEL_MARK
        curr.deleted = True
        self._trace_mark(curr)
        if instr:
            yield W_DEL_UNLINK_LEAF
        prev.set_child(side, None)
        self._trace_edge(prev, side, None)
        self._note_unlinked(curr)
        return True

    def _delete_leaf_routing_parent(self, ctx, tkey, st, v, gprev, prev, sibling):
        """Leaf under a ROUTING parent: the parent must go too, or it
        would be left with a single child.  The sibling moves up into
        the grandparent's slot, taking both nodes out in one pointer
        swing."""
        instr = self._instr
        assert gprev is not None, "routing parent cannot be the root"
        side = LEFT if v < prev.val else RIGHT
        pside = LEFT if prev.val < gprev.val else RIGHT
        out = yield from self._lock(
            ctx, tkey, st, "delete", prev.edge_lock(side), LockMode.WRITE,
            _edge_val_cond(prev, side, v), "edge_val", "delete.pair_edge",
            level=0)
        if out is not LockOutcome.ACQUIRED:
            return RESTART
        curr = prev.child(side)   # fresh occupant under the value lock
        out = yield from self._lock(
            ctx, tkey, st, "delete", curr.state_lock, LockMode.WRITE,
            _state_cond(curr, DATA), "state", "delete.pair_state", level=0)
        if out is not LockOutcome.ACQUIRED:
            return RESTART
        if curr.left is not None or curr.right is not None:
            return RESTART
        out = yield from self._lock(
            ctx, tkey, st, "delete",
            prev.edge_lock(LEFT if side == RIGHT else RIGHT), LockMode.WRITE,
            _edge_ref_cond(prev, LEFT if side == RIGHT else RIGHT, sibling),
            "edge_ref", "delete.pair_sibling_edge", level=0)
        if out is not LockOutcome.ACQUIRED:
            return RESTART
        out = yield from self._lock(
            ctx, tkey, st, "delete", gprev.edge_lock(pside), LockMode.WRITE,
            _edge_ref_cond(gprev, pside, prev), "edge_ref",
            "delete.pair_parent_edge", level=-1)
        if out is not LockOutcome.ACQUIRED:
            return RESTART
        out = yield from self._lock(
            ctx, tkey, st, "delete", prev.state_lock, LockMode.WRITE,
            _state_cond(prev, ROUTING), "state", "delete.pair_parent_state",
            level=-1)
        if out is not LockOutcome.ACQUIRED:
            return RESTART
        if instr:
            yield W_DEL_MARK_PARENT
        prev.deleted = True
        self._trace_mark(prev)
        if instr:
            yield W_DEL_MARK
        curr.deleted = True
        self._trace_mark(curr)
        if instr:
            yield W_DEL_UNLINK_PAIR
        gprev.set_child(pside, sibling)
        self._trace_edge(gprev, pside, sibling)
        self._note_unlinked(prev)
        self._note_unlinked(curr)
        return True
