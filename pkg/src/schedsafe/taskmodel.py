"""Task sets, integer-tick time, and arrival sequences.

All times are integer tick counts; one tick equals the ``tick_ms`` declared in
the task-set document (0.1 ms by default).  Millisecond values appear only at
I/O boundaries and must be exact multiples of the tick.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, Mapping

DEFAULT_TICK_MS = Fraction(1, 10)

PERIODIC = "periodic"
APERIODIC = "aperiodic"


class TaskSetError(ValueError):
    """Malformed task-set document or violated task invariant."""

    def __init__(self, message: str, task_id: str | None = None, field: str | None = None):
        prefix = ""
        if task_id is not None:
            prefix += f"task {task_id!r}: "
        if field is not None:
            prefix += f"field {field!r}: "
        super().__init__(prefix + message)
        self.task_id = task_id
        self.field = field


def ms_to_ticks(value: str | Fraction, tick_ms: Fraction, *, task_id=None, field=None) -> int:
    """Convert an exact millisecond value to ticks, rejecting misaligned input."""
    try:
        ms = Fraction(value)
    except (ValueError, ZeroDivisionError):
        raise TaskSetError(f"not a number: {value!r}", task_id, field) from None
    ticks = ms / tick_ms
    if ticks.denominator != 1:
        raise TaskSetError(
            f"{ms} ms is not a multiple of the tick ({tick_ms} ms)", task_id, field
        )
    if ticks < 0:
        raise TaskSetError(f"negative time {ms} ms", task_id, field)
    return int(ticks)


def ticks_to_ms_str(ticks: int, tick_ms: Fraction) -> str:
    """Exact decimal string for a tick count, e.g. 13 ticks at 0.1 ms -> '1.3'."""
    value = ticks * tick_ms
    if value.denominator == 1:
        return str(value.numerator)
    scale = 0
    den = value.denominator
    while den % 2 == 0:
        den //= 2
        scale += 1
    fives = 0
    while den % 5 == 0:
        den //= 5
        fives += 1
    if den != 1:
        raise ValueError(f"tick {tick_ms} has no finite decimal representation")
    digits = max(scale, fives)
    scaled = value.numerator * 10**digits // value.denominator
    text = str(scaled).rjust(digits + 1, "0")
    return f"{text[:-digits]}.{text[-digits:]}".rstrip("0").rstrip(".")


@dataclass(frozen=True)
class Task:
    """One real-time task; all times in ticks, deadline relative to arrival."""

    id: str
    name: str
    priority: int
    deadline: int
    kind: str  # PERIODIC or APERIODIC
    wcet_min: int
    wcet_max: int
    period: int | None = None
    offset: int = 0
    pmin: int | None = None
    pmax: int | None = None
    deadline_kind: str = "hard"
    target: bool = False

    def __post_init__(self):
        def fail(msg, fld):
            raise TaskSetError(msg, self.id, fld)

        if self.kind not in (PERIODIC, APERIODIC):
            fail(f"unknown kind {self.kind!r}", "kind")
        if self.deadline_kind not in ("hard", "soft"):
            fail(f"unknown deadline_kind {self.deadline_kind!r}", "deadline_kind")
        if self.deadline < 1:
            fail("deadline must be at least one tick", "deadline_ms")
        if self.wcet_min < 1:
            fail("wcet_min must be at least one tick", "wcet_min_ms")
        if self.wcet_max < self.wcet_min:
            fail("wcet_max below wcet_min", "wcet_max_ms")
        if self.kind == PERIODIC:
            if self.period is None or self.period < 1:
                fail("periodic task needs period of at least one tick", "period_ms")
            if self.offset < 0:
                fail("offset must be non-negative", "offset_ms")
        else:
            if self.pmin is None or self.pmax is None:
                fail("aperiodic task needs pmin and pmax", "pmin_ms")
            if self.pmin < 1:
                fail("pmin must be at least one tick", "pmin_ms")
            if self.pmax < self.pmin:
                fail("pmax below pmin", "pmax_ms")

    @property
    def is_periodic(self) -> bool:
        return self.kind == PERIODIC

    @property
    def has_uncertain_wcet(self) -> bool:
        return self.wcet_max > self.wcet_min


@dataclass(frozen=True)
class TaskSet:
    """Ordered collection of tasks plus the scheduling horizon (ticks)."""

    tasks: tuple[Task, ...]
    horizon: int
    targets: frozenset[str] = frozenset()
    tick_ms: Fraction = DEFAULT_TICK_MS

    def __post_init__(self):
        ids = [t.id for t in self.tasks]
        seen = set()
        for tid in ids:
            if tid in seen:
                raise TaskSetError("duplicate id", tid, "id")
            seen.add(tid)
        for tid in self.targets:
            if tid not in seen:
                raise TaskSetError("target refers to unknown task", tid, "target")
        if self.horizon < 1:
            raise TaskSetError("horizon must be at least one tick", None, "horizon_ms")
        for t in self.tasks:
            if t.is_periodic and t.offset + t.period > self.horizon:
                raise TaskSetError(
                    "horizon shorter than offset + period", t.id, "horizon_ms"
                )

    def by_id(self, task_id: str) -> Task:
        for t in self.tasks:
            if t.id == task_id:
                return t
        raise KeyError(task_id)

    def index(self, task_id: str) -> int:
        for i, t in enumerate(self.tasks):
            if t.id == task_id:
                return i
        raise KeyError(task_id)

    @property
    def aperiodic_tasks(self) -> tuple[Task, ...]:
        return tuple(t for t in self.tasks if not t.is_periodic)

    @property
    def uncertain_tasks(self) -> tuple[Task, ...]:
        return tuple(t for t in self.tasks if t.has_uncertain_wcet)

    @property
    def target_tasks(self) -> tuple[Task, ...]:
        return tuple(t for t in self.tasks if t.id in self.targets)


@dataclass(frozen=True)
class ArrivalSequence:
    """Every arrival time of every task over the horizon; one GA solution."""

    arrivals: Mapping[str, tuple[int, ...]]

    def __post_init__(self):
        object.__setattr__(
            self, "arrivals", {tid: tuple(ats) for tid, ats in self.arrivals.items()}
        )

    def of(self, task_id: str) -> tuple[int, ...]:
        return self.arrivals.get(task_id, ())

    @property
    def size(self) -> int:
        return sum(len(a) for a in self.arrivals.values())

    def __eq__(self, other):
        return isinstance(other, ArrivalSequence) and self.arrivals == other.arrivals

    def __hash__(self):
        return hash(tuple(sorted((k, v) for k, v in self.arrivals.items())))


@dataclass(frozen=True)
class ArrivalViolation:
    task_id: str
    index: int  # 1-based arrival index, 0 for task-level problems
    reason: str


def periodic_arrivals(task: Task, horizon: int) -> list[int]:
    """Arrival times offset, offset+period, ... up to and including the horizon."""
    if not task.is_periodic:
        raise ValueError(f"task {task.id!r} is not periodic")
    out = []
    at = task.offset
    while at <= horizon:
        out.append(at)
        at += task.period
    return out


def validate_arrivals(seq: ArrivalSequence, ts: TaskSet) -> list[ArrivalViolation]:
    """Check a sequence against the task set's arrival rules; empty list means ok."""
    violations = []
    known = {t.id for t in ts.tasks}
    for tid in seq.arrivals:
        if tid not in known:
            violations.append(ArrivalViolation(tid, 0, "unknown task"))
    for task in ts.tasks:
        ats = seq.of(task.id)
        if task.is_periodic:
            expected = tuple(periodic_arrivals(task, ts.horizon))
            if ats != expected:
                violations.append(
                    ArrivalViolation(task.id, 0, f"periodic arrivals must be {list(expected)}")
                )
            continue
        prev = None
        for i, at in enumerate(ats, start=1):
            if at >= ts.horizon:
                violations.append(
                    ArrivalViolation(task.id, i, f"arrival {at} not before horizon {ts.horizon}")
                )
            if prev is None:
                if not (task.pmin <= at <= task.pmax):
                    violations.append(
                        ArrivalViolation(
                            task.id, i,
                            f"first arrival {at} outside [{task.pmin}, {task.pmax}]",
                        )
                    )
            else:
                gap = at - prev
                if gap < task.pmin:
                    violations.append(
                        ArrivalViolation(task.id, i, f"gap {gap} < pmin {task.pmin}")
                    )
                elif gap > task.pmax:
                    violations.append(
                        ArrivalViolation(task.id, i, f"gap {gap} > pmax {task.pmax}")
                    )
            prev = at
    return violations


def random_arrival_sequence(ts: TaskSet, rng) -> ArrivalSequence:
    """Random valid sequence: periodic arrivals fixed, aperiodic gaps drawn
    uniformly from [pmin, pmax] until a draw lands at or past the horizon."""
    arrivals = {}
    for task in ts.tasks:
        if task.is_periodic:
            arrivals[task.id] = tuple(periodic_arrivals(task, ts.horizon))
            continue
        ats = []
        at = int(rng.integers(task.pmin, task.pmax + 1))
        while at < ts.horizon:
            ats.append(at)
            at += int(rng.integers(task.pmin, task.pmax + 1))
        arrivals[task.id] = tuple(ats)
    return ArrivalSequence(arrivals)


def deterministic_arrival_sequence(ts: TaskSet) -> ArrivalSequence:
    """The unique sequence of an all-periodic task set."""
    if ts.aperiodic_tasks:
        raise ValueError("task set has aperiodic tasks; the sequence is not unique")
    return ArrivalSequence(
        {t.id: tuple(periodic_arrivals(t, ts.horizon)) for t in ts.tasks}
    )


# --- task-set document -------------------------------------------------------
#
# UTF-8 text, '#' comments, [taskset] header section and one [task] section per
# task.  Fields per task: id, name, priority, deadline_ms, kind, period_ms /
# offset_ms or pmin_ms / pmax_ms, wcet_min_ms, wcet_max_ms, deadline_kind,
# target.  Header fields: horizon_ms, tick_ms.

_HEADER_KEYS = {"horizon_ms", "tick_ms"}
_TASK_KEYS = {
    "id", "name", "priority", "deadline_ms", "kind", "period_ms", "offset_ms",
    "pmin_ms", "pmax_ms", "wcet_min_ms", "wcet_max_ms", "deadline_kind", "target",
}


def _split_records(text: str) -> tuple[dict, list[dict]]:
    header = None
    tasks = []
    current = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("["):
            section = line.strip("[] \t").lower()
            if section == "taskset":
                if header is not None:
                    raise TaskSetError("more than one [taskset] section")
                header = {}
                current = header
            elif section == "task":
                current = {}
                tasks.append(current)
            else:
                raise TaskSetError(f"line {lineno}: unknown section [{section}]")
            continue
        if current is None:
            raise TaskSetError(f"line {lineno}: content before any section")
        if "=" not in line:
            raise TaskSetError(f"line {lineno}: expected 'key = value'")
        key, value = (part.strip() for part in line.split("=", 1))
        allowed = _HEADER_KEYS if current is header else _TASK_KEYS
        if key not in allowed:
            raise TaskSetError(f"line {lineno}: unknown field {key!r}")
        if key in current:
            raise TaskSetError(f"line {lineno}: duplicate field {key!r}")
        current[key] = value
    if header is None:
        raise TaskSetError("missing [taskset] section")
    return header, tasks


def _parse_bool(value: str, task_id, field) -> bool:
    lowered = value.lower()
    if lowered in ("true", "yes", "1"):
        return True
    if lowered in ("false", "no", "0"):
        return False
    raise TaskSetError(f"not a boolean: {value!r}", task_id, field)


def parse_task_set(text: str) -> TaskSet:
    """Parse a task-set document into a validated TaskSet."""
    header, records = _split_records(text)
    if "horizon_ms" not in header:
        raise TaskSetError("missing field", None, "horizon_ms")
    try:
        tick_ms = Fraction(header.get("tick_ms", DEFAULT_TICK_MS))
    except (ValueError, ZeroDivisionError):
        raise TaskSetError("not a number", None, "tick_ms") from None
    if tick_ms <= 0:
        raise TaskSetError("tick must be positive", None, "tick_ms")
    horizon = ms_to_ticks(header["horizon_ms"], tick_ms, field="horizon_ms")

    tasks = []
    targets = set()
    for rec in records:
        tid = rec.get("id")
        if tid is None:
            raise TaskSetError("missing field", None, "id")
        for required in ("priority", "deadline_ms", "kind", "wcet_min_ms", "wcet_max_ms"):
            if required not in rec:
                raise TaskSetError("missing field", tid, required)
        try:
            priority = int(rec["priority"])
        except ValueError:
            raise TaskSetError(f"not an integer: {rec['priority']!r}", tid, "priority") from None
        kind = rec["kind"].lower()
        tms = lambda fld: ms_to_ticks(rec[fld], tick_ms, task_id=tid, field=fld)
        common = dict(
            id=tid,
            name=rec.get("name", tid),
            priority=priority,
            deadline=tms("deadline_ms"),
            kind=kind,
            wcet_min=tms("wcet_min_ms"),
            wcet_max=tms("wcet_max_ms"),
            deadline_kind=rec.get("deadline_kind", "hard").lower(),
        )
        if kind == PERIODIC:
            if "period_ms" not in rec:
                raise TaskSetError("missing field", tid, "period_ms")
            task = Task(
                **common,
                period=tms("period_ms"),
                offset=tms("offset_ms") if "offset_ms" in rec else 0,
            )
        elif kind == APERIODIC:
            for required in ("pmin_ms", "pmax_ms"):
                if required not in rec:
                    raise TaskSetError("missing field", tid, required)
            task = Task(**common, pmin=tms("pmin_ms"), pmax=tms("pmax_ms"))
        else:
            raise TaskSetError(f"unknown kind {rec['kind']!r}", tid, "kind")
        tasks.append(task)
        if _parse_bool(rec.get("target", "false"), tid, "target"):
            targets.add(tid)
    return TaskSet(
        tasks=tuple(tasks), horizon=horizon, targets=frozenset(targets), tick_ms=tick_ms
    )


def serialize_task_set(ts: TaskSet) -> str:
    """Render a TaskSet as a document that parse_task_set accepts unchanged."""
    ms = lambda ticks: ticks_to_ms_str(ticks, ts.tick_ms)
    lines = [
        "[taskset]",
        f"horizon_ms = {ms(ts.horizon)}",
        f"tick_ms = {ticks_to_ms_str(1, ts.tick_ms)}",
    ]
    for t in ts.tasks:
        lines += [
            "",
            "[task]",
            f"id = {t.id}",
            f"name = {t.name}",
            f"priority = {t.priority}",
            f"kind = {t.kind}",
            f"deadline_ms = {ms(t.deadline)}",
        ]
        if t.is_periodic:
            lines.append(f"period_ms = {ms(t.period)}")
            lines.append(f"offset_ms = {ms(t.offset)}")
        else:
            lines.append(f"pmin_ms = {ms(t.pmin)}")
            lines.append(f"pmax_ms = {ms(t.pmax)}")
        lines += [
            f"wcet_min_ms = {ms(t.wcet_min)}",
            f"wcet_max_ms = {ms(t.wcet_max)}",
            f"deadline_kind = {t.deadline_kind}",
            f"target = {'true' if t.id in ts.targets else 'false'}",
        ]
    return "\n".join(lines) + "\n"
