import pytest

from app.core.errors import ScheduleError
from app.sim.engine import Scheduler


def test_ties_fire_in_insertion_order():
    s = Scheduler()
    s.schedule(5, "first")
    s.schedule(5, "second")
    s.schedule(3, "earlier")
    assert [s.pop().kind for _ in range(3)] == ["earlier", "first", "second"]
    assert s.now_us == 5


def test_scheduling_in_the_past_fails():
    s = Scheduler()
    s.schedule(10, "a")
    s.pop()
    with pytest.raises(ScheduleError):
        s.schedule(9, "late")
    # agora é permitido
    s.schedule(10, "now")


def test_schedule_in_is_relative_and_clamped():
    s = Scheduler()
    s.schedule(100, "tick")
    s.pop()
    ev = s.schedule_in(-50, "clamped")
    assert ev.time_us == 100
    assert s.schedule_in(25, "later").time_us == 125
    assert len(s) == 2 and s.peek_time() == 100
