"""Plan generation, dispatch routing, and stall bookkeeping."""

import pytest
from hypothesis import given, settings, strategies as st

from mvpcrawl.broker import Broker, COMMON_QUEUE, DuplicateJobId, RESIDENTIAL_QUEUE
from mvpcrawl.model import ALL_PROFILES, HEADLESS, VantagePoint
from mvpcrawl.records import RecordWriter, read_records
from mvpcrawl.scheduler import (
    ExperimentPlan,
    dispatch,
    generate_plan,
    load_domains,
    read_plan,
    reap,
    write_plan,
)

from .test_broker import FakeClock


def small_plan(n_domains=2, profiles=ALL_PROFILES, vps=tuple(VantagePoint), reps=1):
    domains = tuple((i + 1, f"dom{i}.com") for i in range(n_domains))
    return ExperimentPlan(domains=domains, profiles=profiles, vps=vps, repetitions=reps)


def test_plan_counts_small():
    plan = small_plan(2, (HEADLESS,), (VantagePoint.UNIVERSITY, VantagePoint.CLOUD), 1)
    configs = list(generate_plan(plan))
    assert len(configs) == 4
    assert len({c.sync_tag for c in configs}) == 2
    assert plan.crawl_count == 4 and plan.set_count == 2


def test_plan_order_rank_rep_profile_vp():
    plan = small_plan(2, ALL_PROFILES, tuple(VantagePoint), 2)
    configs = list(generate_plan(plan))
    keys = [(c.alexa_rank, c.repetition, c.profile.code, c.vp.value) for c in configs]
    profile_order = {p.code: i for i, p in enumerate(ALL_PROFILES)}
    vp_order = {vp.value: i for i, vp in enumerate(VantagePoint)}
    expected = sorted(keys, key=lambda k: (k[0], k[1], profile_order[k[2]], vp_order[k[3]]))
    assert keys == expected


@settings(max_examples=25)
@given(
    st.integers(min_value=1, max_value=4),
    st.integers(min_value=1, max_value=3),
    st.integers(min_value=1, max_value=3),
)
def test_members_share_tag_and_seed(n_domains, n_profiles, reps):
    plan = small_plan(n_domains, ALL_PROFILES[:n_profiles], tuple(VantagePoint), reps)
    configs = list(generate_plan(plan))
    assert len(configs) == plan.crawl_count
    by_tag = {}
    for config in configs:
        by_tag.setdefault(config.sync_tag, []).append(config)
    assert len(by_tag) == plan.set_count
    for tag, members in by_tag.items():
        assert len(members) == 4
        assert {m.vp for m in members} == set(VantagePoint)
        assert len({m.set_seed for m in members}) == 1
        assert len({(m.domain, m.profile, m.repetition) for m in members}) == 1


def test_dispatch_routing_quarter_residential():
    plan = small_plan(3, (HEADLESS,), tuple(VantagePoint), 2)
    broker = Broker(FakeClock())
    summary = dispatch(generate_plan(plan), broker, party_size=4)
    assert summary.total == 24
    assert summary.residential == 6
    assert summary.common == 18
    stats = broker.stats()
    assert stats["queued"] == {RESIDENTIAL_QUEUE: 6, COMMON_QUEUE: 18}


def test_dispatch_empty_plan():
    broker = Broker(FakeClock())
    assert dispatch([], broker).total == 0


def test_redispatch_surfaces_duplicates():
    plan = small_plan(1, (HEADLESS,), (VantagePoint.CLOUD,), 1)
    broker = Broker(FakeClock())
    dispatch(generate_plan(plan), broker)
    with pytest.raises(DuplicateJobId):
        dispatch(generate_plan(plan), broker)


def test_reap_writes_dropped_records(tmp_path):
    clock = FakeClock()
    broker = Broker(clock)
    plan = small_plan(1, (HEADLESS,), (VantagePoint.CLOUD,), 1)
    dispatch(generate_plan(plan), broker)
    writer = RecordWriter(str(tmp_path / "records-scheduler.jsonl"))

    broker.dequeue(COMMON_QUEUE, "w", lease_ms=100)
    clock.now = 100
    assert [a.action for a in reap(broker, writer=writer)] == ["requeued"]
    broker.dequeue(COMMON_QUEUE, "w", lease_ms=100)
    clock.now = 300
    assert [a.action for a in reap(broker, writer=writer)] == ["dropped"]
    writer.close()

    rows = [obj for _ln, obj in read_records(str(tmp_path / "records-scheduler.jsonl"))]
    assert len(rows) == 1
    assert rows[0]["kind"] == "crawl"
    assert rows[0]["status"] == "dropped"
    assert rows[0]["requeued"] is True
    assert reap(broker) == []


def test_load_domains_and_plan_file(tmp_path):
    csv_path = tmp_path / "top.csv"
    csv_path.write_text("rank,domain\n2,b.com\n1,A.COM\n3,c.net\n")
    domains = load_domains(str(csv_path), top=2)
    assert domains == [(1, "a.com"), (2, "b.com")]

    plan = ExperimentPlan(domains=tuple(domains), profiles=(HEADLESS,),
                          vps=(VantagePoint.UNIVERSITY,), repetitions=1)
    out = tmp_path / "plan.jsonl"
    count = write_plan(str(out), generate_plan(plan))
    assert count == 2
    parsed = read_plan(str(out))
    assert parsed == list(generate_plan(plan))
