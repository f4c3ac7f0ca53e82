"""Steady-state genetic search for worst-case arrival sequences.

The search maximizes the mean (over WCET samples) of the worst deadline
distance among target-task completions, so even miss-free systems expose a
gradient: sequences that push completions closer to their deadlines score
higher.  Every fitness evaluation contributes its sampled WCET vectors, tagged
safe/unsafe, to the labelled dataset consumed by the inference stage.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .numerics import substream
from .simulator import SAFE, UNSAFE, sample_uniform, simulate
from .taskmodel import (
    ArrivalSequence,
    TaskSet,
    deterministic_arrival_sequence,
    random_arrival_sequence,
)


@dataclass
class Individual:
    seq: ArrivalSequence
    fitness: float | None = None


@dataclass(frozen=True)
class LabelledRow:
    wcets: tuple[int, ...]  # one value per uncertain task, ticks
    label: str  # "safe" | "unsafe"


class LabelledDataset:
    """Rows of sampled WCET vectors for the uncertain tasks, tagged safe/unsafe."""

    def __init__(self, columns, bounds, rows=None):
        self.columns = tuple(columns)
        self.bounds = dict(bounds)  # column id -> (wcet_min, wcet_max), ticks
        self.rows: list[LabelledRow] = list(rows or [])

    @classmethod
    def for_task_set(cls, ts: TaskSet) -> "LabelledDataset":
        uncertain = ts.uncertain_tasks
        return cls(
            columns=[t.id for t in uncertain],
            bounds={t.id: (t.wcet_min, t.wcet_max) for t in uncertain},
        )

    def append(self, row: LabelledRow) -> None:
        if len(row.wcets) != len(self.columns):
            raise ValueError("row arity does not match columns")
        self.rows.append(row)

    def extend(self, rows) -> None:
        for row in rows:
            self.append(row)

    def __len__(self) -> int:
        return len(self.rows)

    def __eq__(self, other):
        return (
            isinstance(other, LabelledDataset)
            and self.columns == other.columns
            and self.bounds == other.bounds
            and self.rows == other.rows
        )


@dataclass(frozen=True)
class GaConfig:
    population_size: int = 10
    crossover_rate: float = 0.7
    mutation_rate: float = 0.2
    iterations: int = 1000
    runs_per_fitness: int = 20
    tournament_size: int = 2
    seed: int = 0
    search: str = "ga"  # "ga" | "random"

    def __post_init__(self):
        if not (0.0 <= self.crossover_rate <= 1.0 and 0.0 <= self.mutation_rate <= 1.0):
            raise ValueError("rates must lie in [0, 1]")
        if min(self.population_size, self.runs_per_fitness, self.tournament_size) < 1:
            raise ValueError("sizes must be at least 1")
        if self.iterations < 0:
            raise ValueError("iterations must be non-negative")
        if self.search not in ("ga", "random"):
            raise ValueError(f"unknown search mode {self.search!r}")


def fitness(ts: TaskSet, seq: ArrivalSequence, n: int, rng) -> tuple[float, list[LabelledRow]]:
    """Mean over n simulator runs of the worst target deadline distance.

    Target instances cut off by the horizon after their deadline expired
    contribute the clipped distance (horizon - arrival - deadline).  A run
    without any contribution scores -max(target deadlines), keeping the
    fitness totally ordered without rewarding empty sequences.
    """
    if n < 1:
        raise ValueError("n must be at least 1")
    targets = ts.targets
    deadlines = {t.id: t.deadline for t in ts.tasks}
    sentinel = -max((deadlines[tid] for tid in targets), default=0)
    uncertain_ids = [t.id for t in ts.uncertain_tasks]

    total = 0.0
    rows = []
    for _ in range(n):
        w = sample_uniform(ts, rng)
        sc = simulate(ts, seq, w)
        worst = None
        for c in sc.completions:
            if c.task_id in targets:
                dist = c.et - c.at - deadlines[c.task_id]
                if worst is None or dist > worst:
                    worst = dist
        for tr in sc.truncated:
            if tr.task_id in targets:
                clipped = ts.horizon - tr.at - deadlines[tr.task_id]
                if clipped > 0 and (worst is None or clipped > worst):
                    worst = clipped
        label = UNSAFE if (worst is not None and worst > 0) else SAFE
        if worst is None:
            worst = sentinel
        total += worst
        rows.append(LabelledRow(tuple(w[tid] for tid in uncertain_ids), label))
    return total / n, rows


def tournament_select(pop: list[Individual], rng, size: int = 2) -> Individual:
    """Pick `size` distinct individuals uniformly; return the fittest (ties random)."""
    if len(pop) < size:
        raise ValueError("population smaller than tournament size")
    chosen = [pop[i] for i in rng.choice(len(pop), size=size, replace=False)]
    best = max(ind.fitness for ind in chosen)
    winners = [ind for ind in chosen if ind.fitness == best]
    return winners[int(rng.integers(len(winners)))]


def safe_crossover(a: Individual, b: Individual, ts: TaskSet, rng) -> tuple[Individual, Individual]:
    """Swap the complete arrival lists of all tasks up to a random aperiodic task.

    Works for parents of different sizes because whole per-task lists move.
    Periodic lists are identical in both parents, so only aperiodic tasks
    actually change hands.
    """
    aperiodic_positions = [i for i, t in enumerate(ts.tasks) if not t.is_periodic]
    if not aperiodic_positions:
        return Individual(a.seq), Individual(b.seq)
    r = aperiodic_positions[int(rng.integers(len(aperiodic_positions)))]
    child_a, child_b = {}, {}
    for i, task in enumerate(ts.tasks):
        if i <= r:
            child_a[task.id] = b.seq.of(task.id)
            child_b[task.id] = a.seq.of(task.id)
        else:
            child_a[task.id] = a.seq.of(task.id)
            child_b[task.id] = b.seq.of(task.id)
    return Individual(ArrivalSequence(child_a)), Individual(ArrivalSequence(child_b))


def safe_mutation(ind: Individual, ts: TaskSet, mutation_rate: float, rng) -> Individual:
    """Redraw each aperiodic arrival with the given probability.

    A redrawn arrival keeps its legal window relative to its predecessor.  If
    the successor becomes invalid, all later arrivals shift by the change,
    arrivals pushed to or past the horizon are dropped, and new arrivals are
    appended while the random gap lands inside the horizon.
    """
    horizon = ts.horizon
    arrivals = {}
    for task in ts.tasks:
        ats = list(ind.seq.of(task.id))
        if task.is_periodic or not ats:
            arrivals[task.id] = tuple(ats)
            continue
        original_len = len(ats)
        for k in range(original_len):
            if k >= len(ats):
                break
            if rng.random() >= mutation_rate:
                continue
            lo = task.pmin if k == 0 else ats[k - 1] + task.pmin
            hi = task.pmax if k == 0 else ats[k - 1] + task.pmax
            hi = min(hi, horizon - 1)
            old = ats[k]
            new = int(rng.integers(lo, hi + 1))
            ats[k] = new
            if k + 1 < len(ats):
                successor = ats[k + 1]
                if not (new + task.pmin <= successor <= new + task.pmax):
                    shift = new - old
                    tail = [at + shift for at in ats[k + 1:]]
                    tail = [at for at in tail if at < horizon]
                    ats = ats[: k + 1] + tail
                    nxt = ats[-1] + int(rng.integers(task.pmin, task.pmax + 1))
                    while nxt < horizon:
                        ats.append(nxt)
                        nxt = ats[-1] + int(rng.integers(task.pmin, task.pmax + 1))
        arrivals[task.id] = tuple(ats)
    return Individual(ArrivalSequence(arrivals))


@dataclass
class Phase1Result:
    population: list[Individual]
    dataset: LabelledDataset
    history: list[tuple[int, float, float]]  # (iteration, best, mean)


def run_phase1(ts: TaskSet, cfg: GaConfig) -> Phase1Result:
    """Run the arrival-sequence search and accumulate the labelled dataset.

    With no aperiodic task the arrival sequence is unique, so the search is
    skipped and the dataset is built by repeatedly evaluating that sequence.
    """
    rng = substream(cfg.seed, 1)
    n = cfg.runs_per_fitness
    dataset = LabelledDataset.for_task_set(ts)

    if not ts.aperiodic_tasks:
        seq = deterministic_arrival_sequence(ts)
        values = []
        for _ in range(cfg.population_size):
            value, rows = fitness(ts, seq, n, rng)
            values.append(value)
            dataset.extend(rows)
        ind = Individual(seq, sum(values) / len(values))
        return Phase1Result([ind], dataset, [(0, ind.fitness, ind.fitness)])

    population = []
    for _ in range(cfg.population_size):
        ind = Individual(random_arrival_sequence(ts, rng))
        ind.fitness, rows = fitness(ts, ind.seq, n, rng)
        dataset.extend(rows)
        population.append(ind)

    def snapshot(it):
        values = [ind.fitness for ind in population]
        return (it, max(values), sum(values) / len(values))

    history = [snapshot(0)]
    for it in range(1, cfg.iterations + 1):
        if cfg.search == "random":
            children = [Individual(random_arrival_sequence(ts, rng)) for _ in range(2)]
        else:
            parents = [
                tournament_select(population, rng, cfg.tournament_size) for _ in range(2)
            ]
            if rng.random() < cfg.crossover_rate:
                children = list(safe_crossover(parents[0], parents[1], ts, rng))
            else:
                children = [Individual(parents[0].seq), Individual(parents[1].seq)]
            children = [safe_mutation(c, ts, cfg.mutation_rate, rng) for c in children]
        for child in children:
            child.fitness, rows = fitness(ts, child.seq, n, rng)
            dataset.extend(rows)
        for child in children:
            worst_idx = min(range(len(population)), key=lambda i: population[i].fitness)
            if child.fitness > population[worst_idx].fitness:
                population[worst_idx] = child
        history.append(snapshot(it))
    return Phase1Result(population, dataset, history)
