import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from schedsafe.taskmodel import APERIODIC, PERIODIC, Task, TaskSet


def three_task_system(targets=("j3",), wcet2=(1, 3)):
    """The worked three-task example: j1 > j2 > j3 by priority, horizon 23."""
    return TaskSet(
        tasks=(
            Task(id="j1", name="j1", priority=3, deadline=4, kind=APERIODIC,
                 pmin=5, pmax=10, wcet_min=2, wcet_max=2),
            Task(id="j2", name="j2", priority=2, deadline=6, kind=PERIODIC,
                 period=8, offset=0, wcet_min=wcet2[0], wcet_max=wcet2[1]),
            Task(id="j3", name="j3", priority=1, deadline=3, kind=APERIODIC,
                 pmin=3, pmax=20, wcet_min=1, wcet_max=1),
        ),
        horizon=23,
        targets=frozenset(targets),
    )


FIG_ARRIVALS = {"j1": (5, 11, 20), "j2": (0, 8, 16), "j3": (9, 14)}


@pytest.fixture
def fig_system():
    return three_task_system()


@pytest.fixture
def fig_arrivals():
    from schedsafe.taskmodel import ArrivalSequence

    return ArrivalSequence(FIG_ARRIVALS)
