"""Schedulability stress testing and safe-WCET-range inference."""

from .taskmodel import (
    APERIODIC,
    PERIODIC,
    ArrivalSequence,
    Task,
    TaskSet,
    TaskSetError,
    parse_task_set,
    periodic_arrivals,
    random_arrival_sequence,
    serialize_task_set,
    validate_arrivals,
)
from .simulator import (
    SAFE,
    UNSAFE,
    Completion,
    ScheduleScenario,
    Truncation,
    deadline_distance,
    label_scenario,
    sample_uniform,
    simulate,
)

__version__ = "0.1.0"
