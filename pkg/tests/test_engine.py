import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from qp4link.engine import SchedulingInPast, Simulator


def recording_sim(*targets):
    sim = Simulator()
    seen = []
    for t in targets:
        sim.attach(t, lambda ev: seen.append((ev.at, ev.target, ev.payload)))
    return sim, seen


def test_fifo_at_equal_time():
    sim, seen = recording_sim("X", "Y")
    sim.schedule(0, "X")
    sim.schedule(0, "Y")
    sim.run()
    assert [t for _, t, _ in seen] == ["X", "Y"]


def test_scheduling_in_past():
    sim, _ = recording_sim("X")
    sim.schedule(10, "X")
    sim.run()
    with pytest.raises(SchedulingInPast):
        sim.schedule(sim.now() - 1, "X")


def test_time_order():
    sim, seen = recording_sim("X")
    sim.schedule(10, "X", "late")
    sim.schedule(5, "X", "early")
    sim.run()
    assert [p for _, _, p in seen] == ["early", "late"]


def test_run_until():
    sim, seen = recording_sim("X")
    assert sim.run(until=100) == 0
    for t in (1, 2, 3):
        sim.schedule(t, "X")
    assert sim.run(until=2) == 2
    assert sim.pending() == 1
    assert sim.peek_time() == 3


def test_now_semantics():
    sim = Simulator()
    assert sim.now() == 0
    inside = []
    sim.attach("X", lambda ev: inside.append(sim.now()))
    sim.schedule(42, "X")
    sim.schedule(90, "X")
    sim.run(until=100)
    assert inside == [42, 90]
    assert sim.now() == 90


def test_handlers_scheduling_interleave():
    # events scheduled from inside handlers at the same instant keep FIFO order
    sim = Simulator()
    order = []

    def a(ev):
        order.append("a")
        sim.schedule(ev.at, "c")

    sim.attach("a", a)
    sim.attach("b", lambda ev: order.append("b"))
    sim.attach("c", lambda ev: order.append("c"))
    sim.schedule(5, "a")
    sim.schedule(5, "b")
    sim.run()
    assert order == ["a", "b", "c"]


def test_cancel():
    sim, seen = recording_sim("X")
    h = sim.schedule(5, "X", 1)
    sim.schedule(6, "X", 2)
    sim.cancel(h)
    assert sim.pending() == 1
    sim.run()
    assert [p for _, _, p in seen] == [2]


def test_unknown_target_is_an_error():
    sim = Simulator()
    sim.schedule(1, "nobody")
    with pytest.raises(KeyError):
        sim.run()


@settings(max_examples=60, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 50), st.booleans()), max_size=40))
def test_dispatch_is_sorted_by_time_then_seq(plan):
    sim = Simulator()
    trace = []
    sim.attach("x", lambda ev: trace.append((ev.at, ev.seq)))
    handles = []
    for at, cancel in plan:
        handles.append((sim.schedule(at, "x"), cancel))
    cancelled = {h for h, c in handles if c}
    for h in cancelled:
        sim.cancel(h)
    sim.run()
    assert trace == sorted(trace)
    assert len({s for _, s in trace}) == len(trace)
    assert not cancelled & {s for _, s in trace}
    assert len(trace) == len(plan) - len(cancelled)
