"""Throughput benchmark in the style of the synchrobench harness.

A workload is a key range, a thread count and an update percentage x:
each thread draws operations from its own seeded generator, picking
insert with probability x/2 %, delete with x/2 % and contains otherwise,
over uniformly random keys.  The structure is prefilled to half the key
range so successful and failing updates stay roughly balanced during
the run.

Timing uses a warmup phase and a measured window carved out of a longer
run: workers bang on the set until a shared stop flag flips, and the
main thread snapshots the per-thread counters at the window edges, so
no barrier disturbs the steady state.  Workers check only the flag per
operation; the clock lives with the coordinator.

Two implementations can be driven: the fine-grained concurrent set
("co-bst") and the sequential tree behind one global mutex
("coarse-bst"), which is the baseline any finer scheme has to beat.
"""

from __future__ import annotations

import random
import threading
import time
from dataclasses import dataclass

from .concurrent_set import ConcurrentSet, OpOutcome
from .tree_core import SequentialBst

__all__ = ["WorkloadConfig", "BenchResult", "CoarseLockedSet", "run_bench",
           "emit_csv", "CSV_HEADER", "RANGE_PRESETS", "thread_seed", "draw_op"]

IMPLS = ("co-bst", "coarse-bst")

# the standard experiment sizes; pass any other range explicitly
RANGE_PRESETS = {"small": 2 ** 15, "medium": 2 ** 19, "large": 2 ** 21}

CSV_HEADER = ("impl,threads,range,update_pct,duration_ms,throughput_ops_s,"
              "inserts,deletes,contains,restarts")

_GOLDEN = 0x9E3779B97F4A7C15


def thread_seed(seed: int, tid: int) -> int:
    """Per-thread generator seed: distinct, deterministic, well mixed."""
    return (seed * _GOLDEN + tid) & (2 ** 64 - 1)


def draw_op(rng: random.Random, update_pct: int) -> str:
    """One draw from the workload mix: update_pct/2 % insert, the same
    for delete, contains otherwise."""
    r = rng.random() * 100.0
    if r < update_pct / 2.0:
        return "insert"
    if r < update_pct:
        return "delete"
    return "contains"


class CoarseLockedSet:
    """The sequential tree behind a single global mutex."""

    def __init__(self):
        self._bst = SequentialBst()
        self._mutex = threading.Lock()
        self.root = self._bst.root

    def contains(self, v) -> bool:
        with self._mutex:
            return self._bst.seq_contains(v)

    def insert(self, v) -> bool:
        with self._mutex:
            return self._bst.seq_insert(v)

    def delete(self, v) -> bool:
        with self._mutex:
            return self._bst.seq_delete(v)

    def run_op(self, op, v, tkey=None) -> OpOutcome:
        fn = getattr(self, op)
        return OpOutcome(op, v, fn(v), 0)

    def snapshot_keys(self):
        with self._mutex:
            return self._bst.snapshot_keys()


@dataclass
class WorkloadConfig:
    impl: str = "co-bst"
    threads: int = 1
    key_range: int = RANGE_PRESETS["small"]
    update_pct: int = 20
    duration_ms: int = 10_000
    warmup_ms: int = 5_000
    seed: int = 1
    prefill: bool = True

    def validate(self) -> None:
        if self.impl not in IMPLS:
            raise ValueError("impl must be one of %s, got %r" % (IMPLS, self.impl))
        if self.threads < 1:
            raise ValueError("threads must be >= 1")
        if self.key_range < 2:
            raise ValueError("key range must be >= 2")
        if not 0 <= self.update_pct <= 100:
            raise ValueError("update percentage must be within 0..100")
        if self.duration_ms <= 0:
            raise ValueError("duration must be positive")
        if self.warmup_ms < 0:
            raise ValueError("warmup cannot be negative")


@dataclass
class BenchResult:
    impl: str
    threads: int
    key_range: int
    update_pct: int
    duration_ms: int          # measured window, not the configured target
    throughput_ops_s: float
    inserts: int
    deletes: int
    contains: int
    restarts: int
    update_ok: int = 0        # successful updates; informational only

    @property
    def total_ops(self) -> int:
        return self.inserts + self.deletes + self.contains

    def csv_row(self) -> str:
        return "%s,%d,%d,%d,%d,%.1f,%d,%d,%d,%d" % (
            self.impl, self.threads, self.key_range, self.update_pct,
            self.duration_ms, self.throughput_ops_s,
            self.inserts, self.deletes, self.contains, self.restarts)

    def __str__(self):
        text = ("%s: %d thread(s), range %d, %d%% updates: "
                "%.0f ops/s over %d ms (%d ins / %d del / %d ctn, %d restarts)"
                % (self.impl, self.threads, self.key_range, self.update_pct,
                   self.throughput_ops_s, self.duration_ms,
                   self.inserts, self.deletes, self.contains, self.restarts))
        updates = self.inserts + self.deletes
        if updates:
            text += ", %.0f%% of updates succeeded" % (100.0 * self.update_ok
                                                       / updates)
        return text


class _WorkerCounters:
    __slots__ = ("inserts", "deletes", "contains", "restarts", "update_ok")

    def __init__(self):
        self.inserts = 0
        self.deletes = 0
        self.contains = 0
        self.restarts = 0
        self.update_ok = 0

    def snapshot(self):
        return (self.inserts, self.deletes, self.contains, self.restarts,
                self.update_ok)


def make_set(impl: str):
    if impl == "co-bst":
        return ConcurrentSet()
    if impl == "coarse-bst":
        return CoarseLockedSet()
    raise ValueError("unknown impl %r" % (impl,))


def prefill(set_, key_range: int, seed: int) -> int:
    """Insert a deterministic half of the key range."""
    rng = random.Random(seed)
    keys = rng.sample(range(key_range), key_range // 2)
    n = 0
    for k in keys:
        n += bool(set_.insert(k))
    return n


def _worker(set_, cfg: WorkloadConfig, tid: int, counters: _WorkerCounters,
            stop: list):
    rng = random.Random(thread_seed(cfg.seed, tid))
    update_pct = cfg.update_pct
    key_range = cfg.key_range
    run_op = set_.run_op
    while not stop[0]:
        op = draw_op(rng, update_pct)
        key = rng.randrange(key_range)
        out = run_op(op, key)
        if op == "insert":
            counters.inserts += 1
            counters.update_ok += out.result
        elif op == "delete":
            counters.deletes += 1
            counters.update_ok += out.result
        else:
            counters.contains += 1
        if out.restarts:
            counters.restarts += out.restarts


def run_bench(cfg: WorkloadConfig) -> BenchResult:
    cfg.validate()
    set_ = make_set(cfg.impl)
    if cfg.prefill:
        prefill(set_, cfg.key_range, cfg.seed)

    stop = [False]
    counters = [_WorkerCounters() for _ in range(cfg.threads)]
    threads = [threading.Thread(target=_worker,
                                args=(set_, cfg, tid, counters[tid], stop),
                                daemon=True)
               for tid in range(cfg.threads)]
    for t in threads:
        t.start()

    time.sleep(cfg.warmup_ms / 1000.0)
    t0 = time.monotonic()
    before = [c.snapshot() for c in counters]
    time.sleep(cfg.duration_ms / 1000.0)
    after = [c.snapshot() for c in counters]
    t1 = time.monotonic()
    stop[0] = True
    for t in threads:
        t.join()

    deltas = [tuple(a - b for a, b in zip(aft, bef))
              for bef, aft in zip(before, after)]
    ins = sum(d[0] for d in deltas)
    dele = sum(d[1] for d in deltas)
    ctn = sum(d[2] for d in deltas)
    rst = sum(d[3] for d in deltas)
    ok = sum(d[4] for d in deltas)
    elapsed = t1 - t0
    total = ins + dele + ctn
    return BenchResult(
        impl=cfg.impl, threads=cfg.threads, key_range=cfg.key_range,
        update_pct=cfg.update_pct, duration_ms=int(elapsed * 1000),
        throughput_ops_s=total / elapsed if elapsed > 0 else 0.0,
        inserts=ins, deletes=dele, contains=ctn, restarts=rst, update_ok=ok)


def emit_csv(results, fh) -> None:
    """Write results with the fixed header to an open text file."""
    fh.write(CSV_HEADER + "\n")
    for r in results:
        fh.write(r.csv_row() + "\n")
