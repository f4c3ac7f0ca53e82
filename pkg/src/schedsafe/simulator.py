"""Deterministic discrete-tick simulation of preemptive fixed-priority scheduling.

The simulator is event driven: it advances from one arrival/completion event to
the next instead of stepping tick by tick, but its semantics are exactly those
of a per-tick machine (the test suite checks this against a brute-force
reference).  At every instant the ready instance with the highest priority
executes; a higher-priority arrival preempts immediately; instances of the same
task queue FIFO; priority ties go to the earlier arrival, then to the task
listed first.
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass
from typing import Mapping

from .taskmodel import ArrivalSequence, Task, TaskSet

SAFE = "safe"
UNSAFE = "unsafe"


@dataclass(frozen=True)
class Completion:
    task_id: str
    k: int  # 1-based arrival index within the sequence
    at: int
    et: int


@dataclass(frozen=True)
class Truncation:
    """An instance still incomplete when the horizon was reached."""

    task_id: str
    k: int
    at: int
    remaining: int


@dataclass(frozen=True)
class ScheduleScenario:
    completions: tuple[Completion, ...]
    assignment: Mapping[str, int]
    truncated: tuple[Truncation, ...]

    def completion(self, task_id: str, k: int) -> Completion:
        for c in self.completions:
            if c.task_id == task_id and c.k == k:
                return c
        raise KeyError(f"no completion for task {task_id!r} arrival {k}")

    def truncated_counts(self) -> dict[str, int]:
        counts: dict[str, int] = {}
        for tr in self.truncated:
            counts[tr.task_id] = counts.get(tr.task_id, 0) + 1
        return counts


def validate_assignment(ts: TaskSet, w: Mapping[str, int]) -> None:
    for task in ts.tasks:
        if task.id not in w:
            raise ValueError(f"assignment missing task {task.id!r}")
        value = w[task.id]
        if not (task.wcet_min <= value <= task.wcet_max):
            raise ValueError(
                f"w({task.id}) = {value} outside [{task.wcet_min}, {task.wcet_max}]"
            )


def sample_uniform(ts: TaskSet, rng) -> dict[str, int]:
    """Independent uniform integer draw from each task's WCET range."""
    return {
        t.id: int(rng.integers(t.wcet_min, t.wcet_max + 1)) for t in ts.tasks
    }


def simulate(ts: TaskSet, seq: ArrivalSequence, w: Mapping[str, int]) -> ScheduleScenario:
    """Run the arrival sequence under the WCET assignment over [0, horizon).

    The caller guarantees the sequence is valid for the task set; the
    assignment is checked here because sampling bugs are cheap to catch.
    """
    validate_assignment(ts, w)
    horizon = ts.horizon

    # (at, neg_priority, task_index, k, wcet); sorted by arrival time
    arrivals = []
    for idx, task in enumerate(ts.tasks):
        wt = w[task.id]
        for k, at in enumerate(seq.of(task.id), start=1):
            arrivals.append((at, -task.priority, idx, k, wt))
    arrivals.sort()

    ready: list[tuple[int, int, int, int, int]] = []  # (neg_prio, at, idx, k, remaining)
    completions: list[Completion] = []
    truncated: list[Truncation] = []
    i = 0
    n = len(arrivals)
    t = 0

    while True:
        while i < n and arrivals[i][0] <= t:
            at, neg_prio, idx, k, wt = arrivals[i]
            heapq.heappush(ready, (neg_prio, at, idx, k, wt))
            i += 1
        if t >= horizon:
            break
        if not ready:
            if i >= n:
                break
            t = arrivals[i][0]
            continue
        neg_prio, at, idx, k, remaining = heapq.heappop(ready)
        next_at = arrivals[i][0] if i < n else horizon
        run_until = min(t + remaining, next_at, horizon)
        remaining -= run_until - t
        t = run_until
        if remaining == 0:
            completions.append(Completion(ts.tasks[idx].id, k, at, t))
        else:
            heapq.heappush(ready, (neg_prio, at, idx, k, remaining))

    leftovers = [(at, idx, k, remaining) for neg_prio, at, idx, k, remaining in ready]
    leftovers += [(at, idx, k, wt) for at, neg_prio, idx, k, wt in arrivals[i:]]
    for at, idx, k, remaining in sorted(leftovers):
        truncated.append(Truncation(ts.tasks[idx].id, k, at, remaining))

    return ScheduleScenario(tuple(completions), dict(w), tuple(truncated))


def deadline_distance(sc: ScheduleScenario, ts: TaskSet, task_id: str, k: int) -> int:
    """Signed gap between end time and absolute deadline; positive means a miss."""
    c = sc.completion(task_id, k)
    return c.et - c.at - ts.by_id(task_id).deadline


def label_scenario(sc: ScheduleScenario, ts: TaskSet) -> str:
    """'unsafe' iff a target task misses a deadline in this scenario.

    A target instance truncated at the horizon counts as a miss only when its
    deadline had already expired (horizon > at + dl); otherwise the horizon
    clipped an instance that might still have met its deadline.
    """
    for c in sc.completions:
        if c.task_id in ts.targets:
            if c.et - c.at > ts.by_id(c.task_id).deadline:
                return UNSAFE
    for tr in sc.truncated:
        if tr.task_id in ts.targets:
            if ts.horizon > tr.at + ts.by_id(tr.task_id).deadline:
                return UNSAFE
    return SAFE
