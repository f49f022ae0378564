"""The crawl engine: per-crawl page queue and the page-visit lifecycle.

Timing contract per visit (all milliseconds from visit start):

* navigation must land by +30,000 or the visit aborts;
* interaction then runs until max(nav_end + 10,000, start + 30,000);
* tear-down (DOM capture, anchor extraction) gets 5,000 more;
* so a completed visit can never exceed 45,000.

A whole crawl gets a 180,000 watchdog from its (post-barrier) start;
crossing it aborts the in-flight visit and leaves the rest of the page
queue unvisited. Drivers must honor the deadlines they are passed; the
worker attributes causes from which budget expired.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field, replace
from typing import Callable, Protocol
from urllib.parse import urlsplit, urlunsplit

from . import captcha as captcha_mod
from .broker import SYNC_DEGRADE_MS, WORKER_LEASE_MS
from .model import (
    AbortCause,
    BrowserProfile,
    CrawlConfig,
    CrawlOutcome,
    CrawlStatus,
    FrameRecord,
    PageVisitRecord,
    RequestOutcome,
    RequestRecord,
    ResourceType,
    VisitStatus,
    connectivity_cause,
    CRAWL_WATCHDOG_MS,
    INTERACTION_MIN_MS,
    NAV_TIMEOUT_MS,
    TEARDOWN_TIMEOUT_MS,
)
from .detrand import DetRand, derive_substream
from .records import RecordWriter
from .suffixes import SuffixError, SuffixTable, etld1


# -- driver contract ---------------------------------------------------------

@dataclass(frozen=True)
class DriverRequest:
    """One HTTP request observed by the driver, before record stamping."""

    url: str
    resource_type: ResourceType
    frame_index: int
    document_url: str
    ok: bool
    status: int | None = None
    headers: tuple[tuple[str, str], ...] = ()
    body_hash: str | None = None
    body_size: int | None = None
    error: str | None = None


@dataclass(frozen=True)
class DriverFrame:
    frame_index: int
    parent_index: int | None
    origin: str
    navigation_events: tuple[tuple[int, str], ...] = ()


@dataclass(frozen=True)
class NavSuccess:
    landed_url: str
    requests: tuple[DriverRequest, ...] = ()
    frames: tuple[DriverFrame, ...] = ()


@dataclass(frozen=True)
class NavFailure:
    cause: AbortCause
    code: str | None = None


@dataclass(frozen=True)
class Snapshot:
    dom_html: str
    anchor_links: tuple[str, ...] = ()


class FetchDriver(Protocol):
    """What the worker needs from a browser driver.

    Sessions must start from an empty profile (no cookies or cache carry
    over between visits) and ``close`` must always be safe. Blocking
    calls must return by their deadline; results arriving later are
    discarded by the worker as timeouts.
    """

    def open_session(self, profile: BrowserProfile, tunnel_config: str): ...

    def navigate(self, session, url: str, deadline_ms: int) -> NavSuccess | NavFailure: ...

    def interact(self, session, rng: DetRand, end_time_ms: int) -> list[str]: ...

    def snapshot(self, session, deadline_ms: int) -> Snapshot | None: ...

    def close(self, session) -> None: ...


def make_tunnel_config(config: CrawlConfig, base: str = "") -> str:
    """Opaque per-crawl driver context (semicolon key=value pairs)."""
    parts = []
    if base:
        parts.append(f"endpoint={base}")
    parts.append(f"vp={config.vp.value}")
    parts.append(f"bc={config.profile.code}")
    parts.append(f"rep={config.repetition}")
    parts.append(f"tag={config.sync_tag}")
    return ";".join(parts)


# -- link harvesting ---------------------------------------------------------

def normalize_url(url: str) -> str:
    """Dedup form: lowercase scheme and host, drop the fragment."""
    parts = urlsplit(url)
    netloc = parts.netloc.lower()
    return urlunsplit((parts.scheme.lower(), netloc, parts.path, parts.query, ""))


def harvest_links(
    event_links: list[str],
    anchor_links: list[str],
    crawl_domain: str,
    already_enqueued: set[str],
    width: int,
    table: SuffixTable,
) -> list[str]:
    """Pick up to ``width`` same-site follow-on links.

    Event-triggered links come first in discovery order, then anchors in
    document order; only URLs whose host registers under the crawl's
    eTLD+1 survive, and duplicates (normalized) are dropped.
    """
    picked: list[str] = []
    seen = set(already_enqueued)
    for url in list(event_links) + list(anchor_links):
        if len(picked) >= width:
            break
        try:
            parts = urlsplit(url)
            host = parts.hostname
            if not parts.scheme or not host:
                continue
            if etld1(host, table) != crawl_domain:
                continue
        except (SuffixError, ValueError):
            continue
        norm = normalize_url(url)
        if norm in seen:
            continue
        seen.add(norm)
        picked.append(url)
    return picked


# -- page visit --------------------------------------------------------------

@dataclass
class VisitData:
    """A visit record plus its request/frame records and harvest inputs."""

    record: PageVisitRecord
    requests: list[RequestRecord] = field(default_factory=list)
    frames: list[FrameRecord] = field(default_factory=list)
    event_links: list[str] = field(default_factory=list)
    anchor_links: list[str] = field(default_factory=list)


def _stamp_records(
    visit_id: str,
    raw_requests: tuple[DriverRequest, ...],
    raw_frames: tuple[DriverFrame, ...],
    crawl_domain: str,
    table: SuffixTable,
) -> tuple[list[RequestRecord], list[FrameRecord]]:
    requests = []
    for raw in raw_requests:
        host = urlsplit(raw.url).hostname or ""
        doc_host = urlsplit(raw.document_url).hostname or ""
        try:
            third = etld1(host, table) != etld1(doc_host, table)
        except SuffixError:
            third = host.lower() != doc_host.lower()
        outcome = (
            RequestOutcome(True, raw.status, raw.headers, raw.body_hash, raw.body_size)
            if raw.ok
            else RequestOutcome.failed(raw.error or "unknown")
        )
        requests.append(
            RequestRecord(
                visit_id=visit_id,
                request_url=raw.url,
                resource_type=raw.resource_type,
                frame_id=f"{visit_id}/f{raw.frame_index}",
                document_url=raw.document_url,
                outcome=outcome,
                is_third_party=third,
            )
        )
    frames = [
        FrameRecord(
            visit_id=visit_id,
            frame_id=f"{visit_id}/f{raw.frame_index}",
            frame_origin=raw.origin,
            parent_frame_id=None if raw.parent_index is None else f"{visit_id}/f{raw.parent_index}",
            navigation_events=raw.navigation_events,
        )
        for raw in raw_frames
    ]
    return requests, frames


def visit_page(
    session_factory: Callable[[], object],
    driver: FetchDriver,
    visit_id: str,
    url: str,
    depth: int,
    rng: DetRand,
    clock,
    hard_deadline_ms: int,
    crawl_domain: str,
    table: SuffixTable,
    captcha_rules: list | None = None,
) -> VisitData:
    """Run one full page-visit lifecycle and assemble its records."""
    start = clock.now_ms()
    session = session_factory()
    data = VisitData(record=None)  # type: ignore[arg-type]
    nav_end = interaction_end = teardown_end = None
    status: VisitStatus
    html = ""
    try:
        nav_deadline = start + NAV_TIMEOUT_MS
        eff_nav_deadline = min(nav_deadline, hard_deadline_ms)
        result = driver.navigate(session, url, eff_nav_deadline)
        now = clock.now_ms()
        if isinstance(result, NavFailure):
            cause, code = result.cause, result.code
            if cause is AbortCause.NAVIGATION_TIMEOUT and nav_deadline > hard_deadline_ms:
                cause, code = AbortCause.WATCHDOG_KILLED, None
            nav_end = now
            status = VisitStatus.aborted(cause, code)
            return _finish(data, visit_id, url, depth, start, nav_end, None, None, status, "", [])
        nav_end = now
        data.requests, data.frames = _stamp_records(
            visit_id, result.requests, result.frames, crawl_domain, table
        )

        interaction_target = max(nav_end + INTERACTION_MIN_MS, start + NAV_TIMEOUT_MS)
        if interaction_target > hard_deadline_ms:
            # Watchdog fires mid-interaction; alert/new-window bookkeeping
            # simply stops with the visit.
            driver.interact(session, rng, hard_deadline_ms)
            interaction_end = clock.now_ms()
            status = VisitStatus.aborted(AbortCause.WATCHDOG_KILLED)
            return _finish(
                data, visit_id, url, depth, start, nav_end, interaction_end, None, status, "", []
            )
        data.event_links = list(driver.interact(session, rng, interaction_target))
        interaction_end = clock.now_ms()

        td_deadline = interaction_end + TEARDOWN_TIMEOUT_MS
        eff_td_deadline = min(td_deadline, hard_deadline_ms)
        snap = driver.snapshot(session, eff_td_deadline)
        now = clock.now_ms()
        if snap is None:
            cause = (
                AbortCause.TEARDOWN_TIMEOUT
                if td_deadline <= hard_deadline_ms
                else AbortCause.WATCHDOG_KILLED
            )
            teardown_end = now
            status = VisitStatus.aborted(cause)
            return _finish(
                data, visit_id, url, depth, start, nav_end, interaction_end, teardown_end, status, "", []
            )
        teardown_end = now
        html = snap.dom_html
        data.anchor_links = list(snap.anchor_links)
        status = VisitStatus.ok(dead_end=(len(html) == 0))
        detected: list[str] = []
        if captcha_rules:
            detected = sorted(captcha_mod.detect(html, data.requests, captcha_rules))
        return _finish(
            data, visit_id, url, depth, start, nav_end, interaction_end, teardown_end, status, html, detected
        )
    finally:
        driver.close(session)


def _finish(
    data: VisitData,
    visit_id: str,
    url: str,
    depth: int,
    start: int,
    nav_end,
    interaction_end,
    teardown_end,
    status: VisitStatus,
    html: str,
    captcha_detected: list[str],
) -> VisitData:
    data.record = PageVisitRecord(
        visit_id=visit_id,
        crawl_id=visit_id.rsplit("#", 1)[0],
        page_url=url,
        page_depth=depth,
        visit_start=start,
        nav_end=nav_end,
        interaction_end=interaction_end,
        teardown_end=teardown_end,
        status=status,
        harvested_links=(),
        captured_html_size=len(html.encode("utf-8")),
        captcha_detected=tuple(captcha_detected),
    )
    if not status.completed:
        data.event_links = []
        data.anchor_links = []
    return data


# -- whole crawl -------------------------------------------------------------

def run_crawl(
    config: CrawlConfig,
    driver: FetchDriver,
    broker,
    clock,
    table: SuffixTable,
    captcha_rules: list | None = None,
    party_size: int = 4,
    worker_id: str | None = None,
    writer: RecordWriter | None = None,
    tunnel_base: str = "",
) -> CrawlOutcome:
    """Synchronize with the crawl set, then walk the page queue breadth-first."""
    tag = config.sync_tag
    broker.sync_arrive(tag, party_size)
    released, release_time = broker.await_release(tag, SYNC_DEGRADE_MS)
    sync_degraded = not released

    start = clock.now_ms()
    watchdog_deadline = start + CRAWL_WATCHDOG_MS
    tunnel = make_tunnel_config(config, tunnel_base)

    def session_factory():
        return driver.open_session(config.profile, tunnel)

    queue: deque[tuple[str, int]] = deque([(config.landing_url, 1)])
    enqueued = {normalize_url(config.landing_url)}
    visits: list[PageVisitRecord] = []
    ordinal = 0
    while queue:
        if clock.now_ms() >= watchdog_deadline:
            break
        url, depth = queue.popleft()
        ordinal += 1
        rng = derive_substream(config.set_seed, f"page:{ordinal}")
        visit_id = f"{config.crawl_id}#{ordinal}"
        data = visit_page(
            session_factory,
            driver,
            visit_id,
            url,
            depth,
            rng,
            clock,
            watchdog_deadline,
            config.domain,
            table,
            captcha_rules,
        )
        record = data.record
        if record.status.completed and depth < config.depth:
            links = harvest_links(
                data.event_links, data.anchor_links, config.domain, enqueued, config.width, table
            )
            for link in links:
                enqueued.add(normalize_url(link))
                queue.append((link, depth + 1))
            record = replace(record, harvested_links=tuple(links))
        visits.append(record)
        if writer is not None:
            writer.write_visit(record)
            for req in data.requests:
                writer.write_request(req)
            for frame in data.frames:
                writer.write_frame(frame)

    outcome = CrawlOutcome(
        crawl_id=config.crawl_id,
        config=config,
        status=CrawlStatus.COMPLETED,
        visits=tuple(visits),
        sync_degraded=sync_degraded,
        release_time=release_time,
        start_time=start,
        finish_time=clock.now_ms(),
        worker_id=worker_id,
    )
    if writer is not None:
        writer.write_crawl(outcome)
    return outcome


# -- worker loop -------------------------------------------------------------

class Worker:
    """Pulls jobs from one queue and executes them serially.

    The worker's vantage-point name picks its queue (residential jobs
    have a dedicated one); the job's own config governs how the crawl
    tunnels out.
    """

    def __init__(
        self,
        worker_id: str,
        queue: str,
        broker,
        driver: FetchDriver,
        clock,
        table: SuffixTable,
        writer: RecordWriter | None = None,
        captcha_rules: list | None = None,
        poll_ms: int = 500,
        lease_ms: int = WORKER_LEASE_MS,
        tunnel_base: str = "",
        idle_exit_ms: int | None = None,
    ) -> None:
        self.worker_id = worker_id
        self.queue = queue
        self.broker = broker
        self.driver = driver
        self.clock = clock
        self.table = table
        self.writer = writer
        self.captcha_rules = captcha_rules or []
        self.poll_ms = poll_ms
        self.lease_ms = lease_ms
        self.tunnel_base = tunnel_base
        self.idle_exit_ms = idle_exit_ms
        self.crawls_done = 0

    def run(self) -> int:
        idle_since: int | None = None
        while True:
            job = self.broker.dequeue(self.queue, self.worker_id, self.lease_ms)
            if job is None:
                if self.broker.drained():
                    break
                now = self.clock.now_ms()
                if idle_since is None:
                    idle_since = now
                elif self.idle_exit_ms is not None and now - idle_since >= self.idle_exit_ms:
                    break
                self.clock.sleep(self.poll_ms)
                continue
            idle_since = None
            run_crawl(
                job.config,
                self.driver,
                self.broker,
                self.clock,
                self.table,
                captcha_rules=self.captcha_rules,
                party_size=job.party_size,
                worker_id=self.worker_id,
                writer=self.writer,
                tunnel_base=self.tunnel_base,
            )
            self.broker.complete(job.job_id)
            self.crawls_done += 1
        return self.crawls_done
