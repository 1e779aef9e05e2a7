import pytest
from hypothesis import given, settings, strategies as st

from concurpaas.simcore import Engine, HorizonExceeded, SimConfig


def recording_engine(horizon=10_000_000, seed=0):
    eng = Engine(SimConfig(rng_seed=seed, horizon=horizon))
    log = []
    for target in ("A", "B", "C"):
        eng.register(target, lambda ev: log.append((ev.fire_at, ev.seq, ev.target, ev.kind)))
    return eng, log


def test_zero_delay_ordering_by_seq():
    eng, log = recording_engine()
    first = eng.schedule(0, "A", "Deliver", b"p")
    second = eng.schedule(0, "B", "Deliver")
    assert (first, second) == (1, 2)
    eng.run_until(0)
    assert [e[1] for e in log] == [1, 2]


def test_delay_is_added_to_now():
    eng, log = recording_engine()
    eng.run_until(100)
    eng.schedule(5000, "B", "Tick")
    eng.run_until(10_000)
    assert log == [(5100, 1, "B", "Tick")]


def test_empty_queue_advances_clock():
    eng, _ = recording_engine()
    assert eng.run_until(10) == 0
    assert eng.now == 10


def test_run_until_boundary_inclusive():
    eng, _ = recording_engine()
    for t in (1, 2, 3):
        eng.schedule(t, "A", "X")
    assert eng.run_until(2) == 2
    assert eng.now == 2
    assert eng.run_until(3) == 1


def test_run_until_past_rejected():
    eng, _ = recording_engine()
    eng.run_until(5)
    with pytest.raises(ValueError):
        eng.run_until(4)


def test_horizon_exceeded():
    eng, _ = recording_engine(horizon=1000)
    eng.schedule(1000, "A", "ok")
    with pytest.raises(HorizonExceeded):
        eng.schedule(1001, "A", "late")
    assert eng.try_schedule(1001, "A", "late") is None


def test_negative_delay_rejected():
    eng, _ = recording_engine()
    with pytest.raises(ValueError):
        eng.schedule(-1, "A", "X")


def test_horizon_must_be_positive():
    with pytest.raises(ValueError):
        SimConfig(horizon=0)


def test_cancel_semantics():
    eng, log = recording_engine()
    assert eng.cancel(999) is False
    ev = eng.schedule(10, "A", "X")
    assert eng.cancel(ev) is True
    assert eng.cancel(ev) is False
    eng.run_until(20)
    assert log == []
    assert eng.trace == []


def test_cancel_after_execution_is_false_and_log_unchanged():
    eng, log = recording_engine()
    ev = eng.schedule(10, "A", "X")
    eng.run_until(20)
    before = list(eng.trace)
    assert eng.cancel(ev) is False
    eng.run_until(30)
    assert eng.trace == before


def test_trace_line_format():
    eng, _ = recording_engine()
    eng.schedule(7, "A", "Deliver")
    eng.run_until(7)
    assert eng.trace == ["7\t1\tA\tDeliver"]
    assert eng.trace_text() == "7\t1\tA\tDeliver\n"


def test_unhandled_target_still_traced():
    eng, _ = recording_engine()
    eng.note("nobody", "DeadLetter")
    eng.run_until(0)
    assert eng.trace == ["0\t1\tnobody\tDeadLetter"]


def test_observer_sees_every_event():
    eng, _ = recording_engine()
    seen = []
    eng.add_observer(lambda ev: seen.append(ev.seq))
    for d in (3, 1, 2):
        eng.schedule(d, "A", "X")
    eng.run_until(3)
    assert seen == [2, 3, 1]


def test_handler_scheduled_events_run_in_same_call():
    eng = Engine(SimConfig(horizon=100))
    order = []

    def a(ev):
        order.append(("A", eng.now))
        if eng.now < 3:
            eng.schedule(1, "A", "again")

    eng.register("A", a)
    eng.schedule(0, "A", "start")
    eng.run_until(100)
    assert order == [("A", 0), ("A", 1), ("A", 2), ("A", 3)]


def test_trace_disabled_keeps_digest():
    def run(enabled):
        eng = Engine(SimConfig(horizon=100, trace_enabled=enabled))
        for d in (5, 1, 5):
            eng.schedule(d, "A", "X")
        eng.run_until(100)
        return eng

    on, off = run(True), run(False)
    assert off.trace == []
    assert on.digest() == off.digest()


@settings(max_examples=100, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 50), st.sampled_from("ABC")), max_size=40),
       st.integers(0, 60))
def test_execution_order_matches_sorted_oracle(delays, stop):
    eng, log = recording_engine()
    expected = []
    for delay, target in delays:
        seq = eng.schedule(delay, target, "K")
        expected.append((delay, seq, target, "K"))
    eng.run_until(stop)
    oracle = sorted(e for e in expected if e[0] <= stop)
    assert log == oracle
    times = [e[0] for e in log]
    assert times == sorted(times)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32), st.lists(st.integers(0, 1000), max_size=30))
def test_same_seed_same_trace(seed, delays):
    def run():
        eng = Engine(SimConfig(rng_seed=seed, horizon=10_000))

        def h(ev):
            if eng.rng.random() < 0.5:
                eng.try_schedule(eng.rng.randrange(100), "A", "child")

        eng.register("A", h)
        for d in delays:
            eng.schedule(d, "A", "root")
        eng.run()
        return eng.trace_text(), eng.digest()

    assert run() == run()
