"""Experiment plan generation, dispatch, and stall bookkeeping."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Iterable, Iterator

from .broker import COMMON_QUEUE, RESIDENTIAL_QUEUE, Broker, JobEnvelope, ReapAction
from .model import (
    ALL_PROFILES,
    BrowserProfile,
    CrawlConfig,
    CrawlOutcome,
    CrawlStatus,
    VantagePoint,
    derive_seed,
    make_sync_tag,
)
from .records import RecordWriter, dumps, read_records


@dataclass(frozen=True)
class ExperimentPlan:
    domains: tuple[tuple[int, str], ...]  # (rank, domain), rank-ascending
    profiles: tuple[BrowserProfile, ...] = ALL_PROFILES
    vps: tuple[VantagePoint, ...] = tuple(VantagePoint)
    repetitions: int = 5
    width: int = 3
    depth: int = 2

    def __post_init__(self) -> None:
        if not self.domains or not self.profiles or not self.vps or self.repetitions < 1:
            raise ValueError("plan dimensions must be non-empty")

    @property
    def set_count(self) -> int:
        return len(self.domains) * len(self.profiles) * self.repetitions

    @property
    def crawl_count(self) -> int:
        return self.set_count * len(self.vps)

    @property
    def party_size(self) -> int:
        return len(self.vps)


def generate_plan(plan: ExperimentPlan) -> Iterator[CrawlConfig]:
    """Emit every (domain, profile, vp, repetition) combination.

    Order is rank-major, then repetition, then profile, then VP; all VP
    variants of a (domain, profile, repetition) triple share one sync
    tag and therefore one seed.
    """
    for rank, domain in plan.domains:
        domain = domain.strip().lower()
        for rep in range(1, plan.repetitions + 1):
            for profile in plan.profiles:
                tag = make_sync_tag(domain, profile, rep)
                seed = derive_seed(tag)
                for vp in plan.vps:
                    yield CrawlConfig(
                        domain=domain,
                        alexa_rank=rank,
                        profile=profile,
                        vp=vp,
                        repetition=rep,
                        sync_tag=tag,
                        set_seed=seed,
                        width=plan.width,
                        depth=plan.depth,
                    )


def queue_for(vp: VantagePoint) -> str:
    return RESIDENTIAL_QUEUE if vp is VantagePoint.RESIDENTIAL else COMMON_QUEUE


@dataclass
class DispatchSummary:
    total: int = 0
    residential: int = 0
    common: int = 0


def dispatch(configs: Iterable[CrawlConfig], broker: Broker, party_size: int = 4) -> DispatchSummary:
    """Enqueue in plan order; residential jobs go to the dedicated queue.

    Duplicate job ids propagate as errors rather than being swallowed.
    """
    summary = DispatchSummary()
    for config in configs:
        queue = queue_for(config.vp)
        broker.enqueue(queue, JobEnvelope(job_id=config.crawl_id, config=config, party_size=party_size))
        summary.total += 1
        if queue == RESIDENTIAL_QUEUE:
            summary.residential += 1
        else:
            summary.common += 1
    return summary


def reap(broker: Broker, now: int | None = None, writer: RecordWriter | None = None) -> list[ReapAction]:
    """Requeue freshly stalled jobs; drop repeat offenders terminally.

    Dropped jobs get a crawl record (status=dropped) so plan accounting
    stays exact: completed + dropped = plan size after drain.
    """
    actions = broker.reap_expired(now)
    if writer is not None:
        for act in actions:
            if act.action == "dropped":
                outcome = CrawlOutcome(
                    crawl_id=act.job.job_id,
                    config=act.job.config,
                    status=CrawlStatus.DROPPED,
                    visits=(),
                )
                writer.write_crawl(outcome)
    return actions


def load_domains(path: str, top: int | None = None) -> list[tuple[int, str]]:
    """Read a ``rank,domain`` CSV (header row optional)."""
    out: list[tuple[int, str]] = []
    with open(path, newline="", encoding="utf-8") as fh:
        for row in csv.reader(fh):
            if not row or not row[0].strip():
                continue
            rank_text = row[0].strip()
            if not rank_text.isdigit():
                continue  # header or comment row
            out.append((int(rank_text), row[1].strip().lower()))
    out.sort()
    if top is not None:
        out = out[:top]
    return out


def write_plan(path: str, configs: Iterable[CrawlConfig]) -> int:
    count = 0
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for config in configs:
            fh.write(dumps(config.to_json()) + "\n")
            count += 1
    return count


def read_plan(path: str) -> list[CrawlConfig]:
    return [CrawlConfig.from_json(obj) for _lineno, obj in read_records(path)]
