"""Queue, lease, and barrier semantics of the broker core."""

import threading

import pytest

from mvpcrawl.broker import (
    Broker,
    COMMON_QUEUE,
    DuplicateJobId,
    JobEnvelope,
    PartySizeMismatch,
    RESIDENTIAL_QUEUE,
    UnknownTag,
)
from mvpcrawl.model import HEADLESS, CrawlConfig, VantagePoint, derive_seed, make_sync_tag
from mvpcrawl.runtime import RealEvent, SystemClock, VirtualRuntime


class FakeClock:
    """Manually advanced clock for lease-expiry tests."""

    def __init__(self):
        self.now = 0

    def now_ms(self):
        return self.now

    def sleep(self, ms):
        self.now += ms

    def new_event(self):
        return RealEvent()


def make_job(n: int, vp: VantagePoint = VantagePoint.CLOUD) -> JobEnvelope:
    tag = make_sync_tag(f"d{n}.com", HEADLESS, 1)
    config = CrawlConfig(
        domain=f"d{n}.com", alexa_rank=n + 1, profile=HEADLESS, vp=vp,
        repetition=1, sync_tag=tag, set_seed=derive_seed(tag),
    )
    return JobEnvelope(job_id=config.crawl_id, config=config)


def test_fifo_and_roundtrip():
    broker = Broker(FakeClock())
    jobs = [make_job(i) for i in range(3)]
    for job in jobs:
        broker.enqueue(COMMON_QUEUE, job)
    out = [broker.dequeue(COMMON_QUEUE, "w", 1000).job_id for _ in range(3)]
    assert out == [j.job_id for j in jobs]
    assert broker.dequeue(COMMON_QUEUE, "w", 1000) is None


def test_queue_isolation():
    broker = Broker(FakeClock())
    broker.enqueue(RESIDENTIAL_QUEUE, make_job(0, VantagePoint.RESIDENTIAL))
    assert broker.dequeue(COMMON_QUEUE, "w", 1000) is None
    assert broker.dequeue(RESIDENTIAL_QUEUE, "w", 1000) is not None


def test_duplicate_job_id():
    broker = Broker(FakeClock())
    broker.enqueue(COMMON_QUEUE, make_job(1))
    with pytest.raises(DuplicateJobId):
        broker.enqueue(COMMON_QUEUE, make_job(1))


def test_lease_expiry_requeue_then_drop():
    clock = FakeClock()
    broker = Broker(clock)
    broker.enqueue(COMMON_QUEUE, make_job(5))
    job = broker.dequeue(COMMON_QUEUE, "w1", lease_ms=1000)
    assert not job.config.requeued
    assert broker.reap_expired() == []

    clock.now = 1000
    actions = broker.reap_expired()
    assert [a.action for a in actions] == ["requeued"]
    again = broker.dequeue(COMMON_QUEUE, "w2", lease_ms=1000)
    assert again.job_id == job.job_id
    assert again.config.requeued is True

    clock.now = 3000
    actions = broker.reap_expired()
    assert [a.action for a in actions] == ["dropped"]
    assert broker.dequeue(COMMON_QUEUE, "w3", 1000) is None


def test_complete_protects_from_reap():
    clock = FakeClock()
    broker = Broker(clock)
    broker.enqueue(COMMON_QUEUE, make_job(6))
    job = broker.dequeue(COMMON_QUEUE, "w", lease_ms=100)
    broker.complete(job.job_id)
    clock.now = 10_000
    assert broker.reap_expired() == []
    broker.close_dispatch()
    assert broker.drained()


def test_concurrent_dequeue_mutual_exclusion():
    broker = Broker(SystemClock())
    broker.enqueue(COMMON_QUEUE, make_job(9))
    got = []
    barrier = threading.Barrier(8)

    def grab(i):
        barrier.wait()
        job = broker.dequeue(COMMON_QUEUE, f"w{i}", 60_000)
        if job is not None:
            got.append(job.job_id)

    threads = [threading.Thread(target=grab, args=(i,)) for i in range(8)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert len(got) == 1


def test_barrier_basic_non_resetting():
    broker = Broker(FakeClock())
    assert broker.sync_arrive("t", 4) is False
    assert broker.sync_arrive("t", 4) is False
    assert broker.sync_arrive("t", 4) is False
    assert broker.sync_arrive("t", 4) is True
    # Late arrival passes straight through.
    assert broker.sync_arrive("t", 4) is True
    released, release_time = broker.await_release("t", timeout_ms=0)
    assert released and release_time == 0


def test_barrier_party_one_and_mismatch():
    broker = Broker(FakeClock())
    assert broker.sync_arrive("solo", 1) is True
    with pytest.raises(PartySizeMismatch):
        broker.sync_arrive("solo", 2)
    with pytest.raises(PartySizeMismatch):
        broker.sync_arrive("bad", 0)
    with pytest.raises(UnknownTag):
        broker.await_release("never-arrived", 10)


def test_barrier_awaiters_all_released_virtual():
    rt = VirtualRuntime()

    class RtClock:
        def now_ms(self):
            return rt.now_ms()

        def sleep(self, ms):
            rt.sleep(ms)

        def new_event(self):
            return rt.new_event()

    broker = Broker(RtClock())
    released_at = []

    def member(i):
        def fn():
            rt.sleep(i * 10)
            broker.sync_arrive("set", 4)
            ok, release_time = broker.await_release("set", timeout_ms=200_000)
            assert ok
            released_at.append((i, rt.now_ms(), release_time))
        return fn

    for i in range(4):
        rt.spawn(f"m{i}", member(i))
    rt.run()
    # Release happens when the 4th member arrives (t=30); nobody is lost.
    assert [(i, t) for i, t, _ in sorted(released_at)] == [(0, 30), (1, 30), (2, 30), (3, 30)]
    assert all(rel == 30 for _, _, rel in released_at)


def test_barrier_degraded_timeout_virtual():
    rt = VirtualRuntime()

    class RtClock:
        def now_ms(self):
            return rt.now_ms()

        def sleep(self, ms):
            rt.sleep(ms)

        def new_event(self):
            return rt.new_event()

    broker = Broker(RtClock())
    out = {}

    def lonely():
        broker.sync_arrive("abandoned", 4)
        ok, release_time = broker.await_release("abandoned", timeout_ms=120_000)
        out["ok"] = ok
        out["t"] = rt.now_ms()

    rt.spawn("lonely", lonely)
    rt.run()
    assert out == {"ok": False, "t": 120_000}


# -- exhaustive model check (party <= 3) ---------------------------------------

def model_check_barrier(max_party: int = 3, max_checks: int = 3) -> int:
    """Explore every interleaving of atomic arrive/observe actions.

    Broker operations are atomic (single lock), so a schedule is fully
    described by how observer checks interleave with the arrival
    sequence, including post-release arrivals. Invariants asserted at
    every reachable state:

    * released iff arrivals >= party size (no early release, no lost release)
    * the sync event is set iff released (waiters can never be stranded)
    * release is permanent (non-resetting)
    """
    explored = 0
    for party in range(1, max_party + 1):
        total_arrivals = party + 2  # includes post-release arrivals

        # Enumerate interleavings by DFS over (arrivals done, checks done).
        def explore(arrived: int, checks: int, broker: Broker, was_released: bool):
            nonlocal explored
            explored += 1
            state = broker.sync_state("tag") if arrived else None
            if arrived:
                assert state.arrivals == arrived
                assert state.released == (arrived >= party), (
                    f"party={party} arrivals={arrived} released={state.released}"
                )
                assert state.event.is_set() == state.released
                if was_released:
                    assert state.released, "release must be permanent"
            if arrived < total_arrivals:
                clone = _replay_barrier(party, arrived + 1)
                explore(arrived + 1, checks, clone, was_released or (arrived + 1 >= party))
            if checks < max_checks and arrived:
                # Observer action: re-reading state must be stable.
                again = broker.sync_state("tag")
                assert again.arrivals == arrived and again.released == (arrived >= party)
                explore(arrived, checks + 1, broker, was_released)

        explore(0, 0, Broker(FakeClock()), False)
    return explored


def _replay_barrier(party: int, arrivals: int) -> Broker:
    broker = Broker(FakeClock())
    for i in range(arrivals):
        result = broker.sync_arrive("tag", party)
        assert result == (i + 1 >= party)
    return broker


def test_barrier_model_check():
    assert model_check_barrier() > 50


def test_barrier_threaded_stress_small():
    broker = Broker(SystemClock())
    tags = [f"tag-{i}" for i in range(500)]
    truthy_counts = {tag: 0 for tag in tags}
    lock = threading.Lock()
    failures = []

    def runner(offset):
        try:
            for tag in tags:
                released_now = broker.sync_arrive(tag, 4)
                ok, _ = broker.await_release(tag, timeout_ms=30_000)
                if not ok:
                    failures.append((tag, "timeout"))
                if released_now:
                    with lock:
                        truthy_counts[tag] += 1
        except Exception as exc:
            failures.append((tag, repr(exc)))

    threads = [threading.Thread(target=runner, args=(i,)) for i in range(4)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert failures == []
    for tag in tags:
        state = broker.sync_state(tag)
        assert state.arrivals == 4 and state.released
        # With exactly four arrivals, only the fourth may see the tag
        # released; more than one truthy arrival means an early release.
        assert truthy_counts[tag] == 1
