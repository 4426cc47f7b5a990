"""Deterministic schedule replay and bounded interleaving exploration.

An instrumented set yields a checkpoint descriptor before every shared
read, committed write, node creation and lock attempt.  The harness
holds one operation-pipeline generator per logical thread and advances
exactly one of them at a time, so a schedule (a sequence of thread ids)
fully determines the execution: same script in, same history, trace and
final tree out.

Checkpoint granularity matters.  Suspension happens before the access
the checkpoint announces; granting a thread one step performs that
access and runs it up to the announcement of its next one.  Traversal
child-pointer reads, case-selection field reads, committed writes and
node creations each get a checkpoint because interleavings genuinely
differ there.  Lock attempts get exactly one checkpoint regardless of
spinning (a failed CAS retry learns nothing new about the tree), and
post-lock re-verification reads get none, because no other thread can
run between a grant and its re-check anyway.

A thread whose pending checkpoint is a lock attempt that could only end
CONTENDED (predicate currently true, word held incompatibly) is called
blocked.  Scripted runs treat stepping a blocked thread as a script
error and name the holder; random and exhaustive runs skip blocked
threads, which prunes futile contention restarts but loses no committed
behaviours, since such an attempt cannot modify the tree.

Every unfinished thread being blocked at once is a real state, not a
bug: two sibling leaf deletions under one routing parent each hold
their own victim's edge and need the other's, two same-level locks
taken in opposite orders.  Real executions get out of it because lock
attempts are bounded: both attempts fail by contention, the restarts
release everything, and the randomized backoff lets one of them win
the next round.  The harness models the same resolution: when nobody
is runnable it grants one blocked thread (rotating fairly so no single
thread aborts forever), whose single-shot attempt fails CONTENDED and
restarts, unblocking the rest.  A generous per-run grant cap guards
against pathological schedules that keep recreating the stand-off.
"""

from __future__ import annotations

import math
import random
import re
from dataclasses import dataclass, field

from .concurrent_set import ConcurrentSet, K_LOCK, OpOutcome
from .history import History, HistoryRecorder, check_observable_correctness, \
    is_linearizable
from .tree_core import StructureReport, validate_structure

__all__ = [
    "ScheduleScript", "RunReport", "ScriptError", "ScheduleBlockedError",
    "ExplorationBoundError", "ExplorationReport",
    "run_script", "random_schedule", "explore_small",
    "parse_script", "emit_script",
    "script_parallel_inserts", "script_twin_replacement",
    "script_edge_conflict_restart",
]

SETUP_THREAD = -1


class ScriptError(ValueError):
    pass


class ScheduleBlockedError(RuntimeError):
    """A scripted step granted a thread whose pending lock attempt can
    only fail by contention.  Carries the wait-for chain."""

    def __init__(self, chain: str):
        super().__init__(chain)
        self.chain = chain


class ExplorationBoundError(RuntimeError):
    pass


@dataclass
class ScheduleScript:
    """Everything a deterministic run needs.

    setup      keys inserted (and recorded) before any stepping
    programs   logical thread id -> list of (op, key) pairs, run in order
    steps      (thread id, checkpoint grants) directives; once they are
               exhausted the run drains round-robin until every thread
               finishes
    """
    setup: list = field(default_factory=list)
    programs: dict = field(default_factory=dict)
    steps: list = field(default_factory=list)

    def validate(self) -> None:
        if len(set(self.setup)) != len(self.setup):
            raise ScriptError("setup keys must be distinct")
        if not self.programs:
            raise ScriptError("script has no threads")
        for tid, ops in self.programs.items():
            if not isinstance(tid, int) or tid < 0:
                raise ScriptError("thread ids must be non-negative ints, got %r" % (tid,))
            for op, key in ops:
                if op not in ("insert", "delete", "contains"):
                    raise ScriptError("unknown op %r in thread %d" % (op, tid))
                if not isinstance(key, int):
                    raise ScriptError("non-integer key %r in thread %d" % (key, tid))
        for tid, n in self.steps:
            if tid not in self.programs:
                raise ScriptError("schedule step for unknown thread %r" % (tid,))
            if n < 1:
                raise ScriptError("schedule grants must be positive")


_UNPRIMED = object()


class _Worker:
    """One logical thread: a generator chaining its operations, plus the
    checkpoint it is currently suspended at."""

    __slots__ = ("tid", "gen", "pending", "finished", "outcomes")

    def __init__(self, tid: int, set_: ConcurrentSet, ops):
        self.tid = tid
        self.outcomes: list[OpOutcome] = []
        self.gen = self._pipeline(set_, ops)
        self.pending = _UNPRIMED
        self.finished = False

    def _pipeline(self, set_, ops):
        for op, key in ops:
            out = yield from set_.op_gen(op, key, tkey=self.tid)
            self.outcomes.append(out)

    def grant(self):
        """Perform the announced access and run to the next checkpoint.

        The first grant additionally runs the pipeline up to its first
        checkpoint; nothing shared happens in that stretch (operations
        announce their very first read before performing it), so one
        grant still performs exactly one access.
        """
        assert not self.finished, "grant() on a finished worker"
        try:
            if self.pending is _UNPRIMED:
                self.pending = next(self.gen)
            performed = self.pending
            self.pending = self.gen.send(None)
        except StopIteration:
            self.finished = True
            performed = None if self.pending is _UNPRIMED else self.pending
            self.pending = None
        return performed

    def blocked(self) -> bool:
        p = self.pending
        return (p is not _UNPRIMED and p is not None
                and p.kind == K_LOCK and p.would_block())


@dataclass
class RunReport:
    script: ScheduleScript
    history: History
    trace: list
    outcomes: dict                 # tid -> [OpOutcome]
    realized: list                 # thread id per grant, script plus drain
    cv_by_family: dict
    contended_by_family: dict
    acquisitions_by_op: dict       # op type -> successful lock acquisitions
    final_keys: list
    structure: StructureReport
    locks_clean: bool

    @property
    def restarts(self) -> dict:
        return {tid: sum(o.restarts for o in outs)
                for tid, outs in self.outcomes.items()}

    def kv_lines(self) -> list[str]:
        lines = ["steps=%d" % len(self.realized)]
        for tid in sorted(self.outcomes):
            for i, o in enumerate(self.outcomes[tid]):
                lines.append("thread.%d.result.%d=%s"
                             % (tid, i, "true" if o.result else "false"))
            lines.append("thread.%d.restarts=%d"
                         % (tid, sum(o.restarts for o in self.outcomes[tid])))
        for fam in sorted(self.cv_by_family):
            lines.append("cv.%s=%d" % (fam, self.cv_by_family[fam]))
        for fam in sorted(self.contended_by_family):
            lines.append("contended.%s=%d" % (fam, self.contended_by_family[fam]))
        lines.append("final=%s" % ",".join(str(k) for k in self.final_keys))
        lines.append("structure=%s" % ("ok" if self.structure.ok else "broken"))
        lines.append("locks=%s" % ("free" if self.locks_clean else "HELD"))
        return lines

    def __str__(self):
        out = ["run of %d thread(s), %d grants"
               % (len(self.outcomes), len(self.realized))]
        for tid in sorted(self.outcomes):
            ops = ", ".join("%s(%d) -> %s" % (o.op, o.key, str(o.result).lower())
                            for o in self.outcomes[tid])
            out.append("  thread %d: %s  [restarts %d]"
                       % (tid, ops, sum(o.restarts for o in self.outcomes[tid])))
        out.append("  final keys: {%s}" % ", ".join(str(k) for k in self.final_keys))
        out.append("  " + str(self.structure))
        return "\n".join(out)


def _collect_locks_free(set_: ConcurrentSet) -> bool:
    nodes = []
    stack = [set_.root]
    while stack:
        n = stack.pop()
        if n is None or not hasattr(n, "left_lock"):
            continue
        nodes.append(n)
        stack.append(n.left)
        stack.append(n.right)
    nodes.extend(set_.unlinked)
    return all(n.left_lock.word == 0 and n.right_lock.word == 0
               and n.state_lock.word == 0 for n in nodes)


def _wait_chain(set_: ConcurrentSet, workers: dict, start_tid: int) -> str:
    hops = []
    tid = start_tid
    for _ in range(len(workers) + 1):
        w = workers[tid]
        p = w.pending
        holders = set_.lock_holders.get(id(p.lock), []) if set_.lock_holders else []
        holders = [h for h in holders if h != tid]
        if not holders:
            hops.append("thread %d waits on %r (holder unknown)" % (tid, p))
            break
        holder = holders[0]
        hops.append("thread %d waits on %r held by thread %s" % (tid, p, holder))
        if holder in workers and workers[holder].blocked():
            if holder == start_tid:
                hops.append("(cycle)")
                break
            tid = holder
            continue
        break
    return "; ".join(hops)


def run_script(script: ScheduleScript, *, on_blocked: str = "error",
               check_structure: bool = True) -> RunReport:
    """Execute a script deterministically and report everything.

    ``on_blocked`` decides what a scripted grant to a blocked or
    finished thread means: "error" raises (the script is wrong),
    "reassign" deterministically hands the grant to the lowest-id
    runnable unblocked thread instead, which is what randomly generated
    schedules use.
    """
    if on_blocked not in ("error", "reassign"):
        raise ValueError("on_blocked must be 'error' or 'reassign'")
    script.validate()
    trace: list = []
    recorder = HistoryRecorder()
    set_ = ConcurrentSet(instrumented=True, trace=trace, recorder=recorder,
                         reclaim="arena", track_unlinked=True, debug_checks=True)
    for k in script.setup:
        out = set_.run_op("insert", k, tkey=SETUP_THREAD)
        if not out.result:
            raise ScriptError("setup insert(%d) returned false" % k)

    workers = {tid: _Worker(tid, set_, ops)
               for tid, ops in sorted(script.programs.items())}
    realized: list[int] = []
    total_ops = len(script.setup) + sum(len(p) for p in script.programs.values())
    grant_cap = 10_000 + 1_000 * total_ops
    forced = 0   # mutual-block resolutions so far, for fair rotation

    def runnable_unblocked():
        return [t for t, w in sorted(workers.items())
                if not w.finished and not w.blocked()]

    def grant(tid):
        workers[tid].grant()
        realized.append(tid)
        if len(realized) > grant_cap:
            raise RuntimeError(
                "run exceeded %d grants without finishing; the schedule "
                "keeps recreating contention" % grant_cap)

    def force_one_blocked():
        # everyone unfinished is blocked: perform one bounded lock
        # attempt, which fails CONTENDED and restarts that thread,
        # releasing its locks; rotate so no thread aborts forever
        nonlocal forced
        stuck = [t for t, w in sorted(workers.items()) if not w.finished]
        grant(stuck[forced % len(stuck)])
        forced += 1

    for tid, n in script.steps:
        for _ in range(n):
            w = workers[tid]
            problem = ("finished" if w.finished
                       else "blocked" if w.blocked() else None)
            if problem is None:
                grant(tid)
                continue
            if on_blocked == "error":
                if problem == "finished":
                    raise ScriptError(
                        "schedule grants a step to finished thread %d" % tid)
                raise ScheduleBlockedError(_wait_chain(set_, workers, tid))
            others = [t for t in runnable_unblocked() if t != tid]
            if others:
                grant(others[0])
            elif any(not w2.finished for w2 in workers.values()):
                force_one_blocked()
            else:
                break

    # drain: round-robin by thread id, one grant per turn, skip blocked
    while True:
        todo = [t for t, w in sorted(workers.items()) if not w.finished]
        if not todo:
            break
        progressed = False
        for tid in todo:
            w = workers[tid]
            if w.finished or w.blocked():
                continue
            grant(tid)
            progressed = True
        if not progressed:
            force_one_blocked()

    stats = set_.stats_snapshot()
    structure = (validate_structure(set_) if check_structure
                 else StructureReport())
    return RunReport(
        script=script,
        history=recorder.history(),
        trace=trace,
        outcomes={tid: w.outcomes for tid, w in workers.items()},
        realized=realized,
        cv_by_family=stats["cond_violations"],
        contended_by_family=stats["contended_aborts"],
        acquisitions_by_op=stats["acquisitions"],
        final_keys=set_.snapshot_keys(),
        structure=structure,
        locks_clean=_collect_locks_free(set_),
    )


def random_schedule(thread_count: int, ops_per_thread: int, key_range: int,
                    seed: int, *, setup_size: int | None = None) -> ScheduleScript:
    """Seeded random script: setup keys, per-thread programs and a step
    sequence.  Deterministic in the seed.  Run it with
    ``on_blocked="reassign"`` since random steps cannot know about
    blocking."""
    rng = random.Random(seed)
    if setup_size is None:
        setup_size = key_range // 2
    setup = rng.sample(range(key_range), min(setup_size, key_range))
    programs = {}
    for tid in range(thread_count):
        programs[tid] = [
            (rng.choice(("insert", "delete", "contains")), rng.randrange(key_range))
            for _ in range(rng.randint(1, ops_per_thread))]
    total_ops = sum(len(p) for p in programs.values())
    steps = [(rng.randrange(thread_count), rng.randint(1, 3))
             for _ in range(total_ops * 6)]
    return ScheduleScript(setup=setup, programs=programs, steps=steps)


# -- bounded exhaustive exploration --------------------------------------

_EXPLORE_GRANT_CAP = 100_000


@dataclass
class ExplorationReport:
    estimate: int
    interleavings: int = 0
    unique_histories: int = 0
    unique_traces: int = 0
    lin_failures: list = field(default_factory=list)
    obs_failures: list = field(default_factory=list)
    structure_failures: list = field(default_factory=list)
    checkpoint_coverage: set = field(default_factory=set)
    acquisitions_by_op: dict = field(default_factory=dict)   # summed over runs

    @property
    def ok(self) -> bool:
        return not (self.lin_failures or self.obs_failures
                    or self.structure_failures)

    def __str__(self):
        return ("explored %d interleavings (estimate %d): "
                "%d unique histories, %d unique traces, "
                "%d linearizability / %d observability / %d structure failures"
                % (self.interleavings, self.estimate, self.unique_histories,
                   self.unique_traces, len(self.lin_failures),
                   len(self.obs_failures), len(self.structure_failures)))


def _solo_steps(setup, programs, tid) -> int:
    """Checkpoint count of one thread running alone: the basis for the
    interleaving estimate."""
    set_ = ConcurrentSet(instrumented=True, reclaim="arena")
    for k in setup:
        set_.run_op("insert", k, tkey=SETUP_THREAD)
    w = _Worker(tid, set_, programs[tid])
    n = 0
    while not w.finished:
        w.grant()
        n += 1
    return n


def _interleaving_estimate(counts) -> int:
    # ways to interleave the threads' solo checkpoint sequences
    est = math.factorial(sum(counts))
    for c in counts:
        est //= math.factorial(c)
    return est


def explore_small(setup, programs, *, bound: int = 10 ** 6,
                  check: bool = True) -> ExplorationReport:
    """Run every schedule of the given tiny scenario and check each
    distinct outcome.

    The state space is walked depth-first by deterministic replay: a run
    records, at every point where more than one unblocked thread could
    go next, which thread went and which alternatives existed; the next
    run forces the deepest untried alternative.  Histories and traces
    repeat heavily across interleavings, so they are deduplicated before
    the (comparatively expensive) linearizability and trace checks.

    Before starting, the interleaving count is estimated from each
    thread's solo checkpoint count (a multinomial coefficient); if the
    estimate exceeds ``bound`` the exploration refuses to start rather
    than run for hours.  The same bound also caps the actual walk.
    """
    script = ScheduleScript(setup=list(setup), programs=dict(programs))
    script.validate()
    counts = [_solo_steps(script.setup, script.programs, tid)
              for tid in sorted(script.programs)]
    est = _interleaving_estimate(counts)
    rep = ExplorationReport(estimate=est)
    if est > bound:
        raise ExplorationBoundError(
            "estimated %d interleavings exceeds the bound %d" % (est, bound))

    seen_histories: set = set()
    seen_traces: set = set()

    def one_run(prefix):
        """Replay forcing ``prefix`` at the choice points, then always
        taking the first runnable thread.  Returns the decision log and
        the run artifacts."""
        trace: list = []
        recorder = HistoryRecorder()
        set_ = ConcurrentSet(instrumented=True, trace=trace, recorder=recorder,
                             reclaim="arena", track_unlinked=True,
                             debug_checks=True)
        for k in script.setup:
            set_.run_op("insert", k, tkey=SETUP_THREAD)
        workers = {tid: _Worker(tid, set_, ops)
                   for tid, ops in sorted(script.programs.items())}
        decisions = []   # (runnable tuple, chosen index) where len > 1
        realized = []
        depth = 0
        forced = 0
        while True:
            runnable = tuple(t for t, w in sorted(workers.items())
                             if not w.finished and not w.blocked())
            if not runnable:
                stuck = tuple(t for t, w in sorted(workers.items())
                              if not w.finished)
                if not stuck:
                    break
                # mutual blocking: resolve it the way a real run would,
                # one bounded attempt fails CONTENDED and restarts.  The
                # rotation is deterministic, not a decision point: which
                # thread aborts first only reorders restarts, and the
                # grant cap below bounds schedules that keep colliding.
                tid = stuck[forced % len(stuck)]
                forced += 1
                point = workers[tid].grant()
                if point is not None:
                    rep.checkpoint_coverage.add((point.kind, point.name))
                realized.append(tid)
                if len(realized) > _EXPLORE_GRANT_CAP:
                    raise RuntimeError(
                        "one interleaving exceeded %d grants; the scenario "
                        "keeps recreating contention" % _EXPLORE_GRANT_CAP)
                continue
            if len(runnable) == 1:
                chosen = 0
            elif depth < len(prefix):
                chosen = runnable.index(prefix[depth])
                depth += 1
            else:
                chosen = 0
                depth += 1
            if len(runnable) > 1:
                decisions.append((runnable, chosen))
            tid = runnable[chosen]
            point = workers[tid].grant()
            if point is not None:
                rep.checkpoint_coverage.add((point.kind, point.name))
            realized.append(tid)
        return decisions, realized, recorder.history(), trace, set_, workers

    prefix: list = []
    while True:
        decisions, realized, hist, trace, set_, workers = one_run(prefix)
        rep.interleavings += 1
        for op, n in set_.stats_snapshot()["acquisitions"].items():
            rep.acquisitions_by_op[op] = rep.acquisitions_by_op.get(op, 0) + n
        if rep.interleavings > bound:
            raise ExplorationBoundError(
                "actual interleavings exceeded the bound %d" % bound)

        hkey = hist._key()
        if hkey not in seen_histories:
            seen_histories.add(hkey)
            rep.unique_histories += 1
            if check:
                res = is_linearizable(hist)
                if not res.ok:
                    rep.lin_failures.append((list(realized), str(res)))
        tkey = tuple(trace)
        if tkey not in seen_traces:
            seen_traces.add(tkey)
            rep.unique_traces += 1
            if check:
                obs = check_observable_correctness(trace)
                if not obs.ok:
                    rep.obs_failures.append((list(realized), str(obs)))
                st = validate_structure(set_)
                if not st.ok:
                    rep.structure_failures.append((list(realized), str(st)))
                if not _collect_locks_free(set_):
                    rep.structure_failures.append(
                        (list(realized), "locks left held at quiescence"))

        # backtrack to the deepest decision with an untried alternative
        nxt = None
        for i in range(len(decisions) - 1, -1, -1):
            options, chosen = decisions[i]
            if chosen + 1 < len(options):
                nxt = [opts[d] for opts, d in decisions[:i]]
                nxt.append(options[chosen + 1])
                break
        if nxt is None:
            break
        prefix = nxt
    return rep


# -- script text format ---------------------------------------------------
#
#   setup: 1 2 3
#   thread 0: insert(5) delete(3)
#   thread 1: contains(5)
#   schedule: 0:3 1:2 0:1
#
# Blank lines and # comments are ignored; setup and schedule are
# optional (no schedule means pure round-robin drain).

_OP_RE = re.compile(r"(insert|delete|contains)\((-?\d+)\)")
_STEP_RE = re.compile(r"(\d+):(\d+)")


def parse_script(text: str) -> ScheduleScript:
    script = ScheduleScript()
    for ln, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        head, _, rest = line.partition(":")
        head = head.strip()
        rest = rest.strip()
        if head == "setup":
            try:
                script.setup = [int(t) for t in rest.split()]
            except ValueError:
                raise ScriptError("line %d: setup keys must be integers" % ln) from None
        elif head.startswith("thread"):
            try:
                tid = int(head.split()[1])
            except (IndexError, ValueError):
                raise ScriptError("line %d: expected 'thread <id>:'" % ln) from None
            ops = _OP_RE.findall(rest)
            joined = " ".join("%s(%s)" % p for p in ops)
            if not ops or joined.replace(" ", "") != rest.replace(" ", ""):
                raise ScriptError("line %d: cannot parse ops %r" % (ln, rest))
            script.programs[tid] = [(op, int(k)) for op, k in ops]
        elif head == "schedule":
            steps = _STEP_RE.findall(rest)
            joined = " ".join("%s:%s" % s for s in steps)
            if joined.replace(" ", "") != rest.replace(" ", ""):
                raise ScriptError("line %d: cannot parse schedule %r" % (ln, rest))
            script.steps = [(int(t), int(n)) for t, n in steps]
        else:
            raise ScriptError("line %d: unknown directive %r" % (ln, head))
    script.validate()
    return script


def emit_script(script: ScheduleScript) -> str:
    lines = []
    if script.setup:
        lines.append("setup: " + " ".join(str(k) for k in script.setup))
    for tid in sorted(script.programs):
        lines.append("thread %d: " % tid + " ".join(
            "%s(%d)" % (op, k) for op, k in script.programs[tid]))
    if script.steps:
        lines.append("schedule: " + " ".join(
            "%d:%d" % (t, n) for t, n in script.steps))
    return "\n".join(lines) + "\n"


# -- named scenarios -------------------------------------------------------

def script_parallel_inserts() -> ScheduleScript:
    """Two inserts under different edges of the same parent, stepped in
    lockstep.  Both must succeed with zero restarts: the per-edge locks
    never collide."""
    return ScheduleScript(
        setup=[2],
        programs={0: [("insert", 1)], 1: [("insert", 3)]},
        steps=[(0, 1), (1, 1)] * 6,
    )


def script_twin_replacement() -> ScheduleScript:
    """A delete pauses right before locking the edge to its victim; the
    victim is deleted and re-inserted (a fresh node, same key) behind its
    back; the paused delete then resumes and must still succeed without
    restarting, because the edge lock validates by value, not identity."""
    return ScheduleScript(
        setup=[2, 1, 3],
        programs={0: [("delete", 3)], 1: [("delete", 3)], 2: [("insert", 3)]},
        # thread 0 walks to the leaf and its case reads (6 checkpoints),
        # then thread 1 deletes outright (11) and thread 2 re-inserts (6);
        # the drain lets thread 0 finish on the replacement node
        steps=[(0, 6), (1, 11), (2, 6)],
    )


def script_edge_conflict_restart() -> ScheduleScript:
    """Two inserts racing for the same empty edge.  The loser's
    conditional edge lock must fail with exactly one condition violation
    (the slot is no longer null) followed by one clean restart that
    relinks below the winner."""
    return ScheduleScript(
        setup=[2],
        programs={0: [("insert", 0)], 1: [("insert", 1)]},
        # thread 1 stops at the edge lock attempt; thread 0 fills the
        # edge completely; thread 1's attempt then condition-fails
        steps=[(1, 2), (0, 6)],
    )
