"""Random history generation for checker tests.

Linearizable histories are built by construction: pick a linearization
order, replay it against the sequential set semantics to fix the return
values, then wrap each operation in an invocation/response interval that
contains its linearization point.  Corrupted histories append one
operation on a reserved key whose recorded return value contradicts the
set semantics outright, so they are non-linearizable by construction.
"""

import random

from cobst.history import INV, RES, History, HistoryEvent

# never used by generated workloads; corruption appends ops on this key
RESERVED_KEY = 99


def make_linearizable_history(rng: random.Random, *, threads: int = 3,
                              max_ops: int = 6, key_range: int = 4) -> History:
    n_ops = rng.randint(1, max_ops)
    order = []
    state: set = set()
    for _ in range(n_ops):
        op = rng.choice(("insert", "delete", "contains"))
        key = rng.randrange(key_range)
        if op == "insert":
            ret = key not in state
            state.add(key)
        elif op == "delete":
            ret = key in state
            state.discard(key)
        else:
            ret = key in state
        order.append((op, key, ret))

    # linearization points sit at even slots; invocations and responses
    # spread into the gaps around them, constrained per thread
    free = {t: 0 for t in range(threads)}
    events = []
    seq = 0
    assigned = []
    for i, (op, key, ret) in enumerate(order):
        point = 10 * (i + 1)
        # responses reach at most point + 9, so every thread is free again
        # by the next linearization point and this never picks from empty
        candidates = [t for t in range(threads) if free[t] <= point]
        t = rng.choice(candidates)
        inv_at = rng.randint(max(free[t], point - 9), point)
        res_at = point + rng.randint(0, 9)
        free[t] = res_at + 1
        assigned.append((inv_at, t, INV, op, key, None))
        assigned.append((res_at, t, RES, op, key, ret))
    assigned.sort(key=lambda a: a[0])
    for at, t, kind, op, key, ret in assigned:
        events.append(HistoryEvent(seq, t, kind, op, key, ret))
        seq += 1

    # optionally leave a suffix of operations pending; a prefix of a
    # linearizable history is still linearizable
    if rng.random() < 0.3 and events:
        events = events[:rng.randint(1, len(events))]
    return History(events)


CORRUPTIONS = ("insert_false", "contains_true", "delete_true")


def corrupt_history(rng: random.Random, h: History) -> History:
    """Append one contradictory operation on the reserved key.

    The reserved key is never touched by generated workloads, so the
    appended return value is impossible in every completion and every
    order: the result cannot linearize.
    """
    kind = rng.choice(CORRUPTIONS)
    events = list(h.events)
    seq = (events[-1].seq + 1) if events else 0
    # a fresh thread id never has an open operation
    t = max((e.thread for e in events), default=-1) + 1
    if kind == "insert_false":
        op, ret = "insert", False
    elif kind == "contains_true":
        op, ret = "contains", True
    else:
        op, ret = "delete", True
    events.append(HistoryEvent(seq, t, INV, op, RESERVED_KEY, None))
    events.append(HistoryEvent(seq + 1, t, RES, op, RESERVED_KEY, ret))
    return History(events)
