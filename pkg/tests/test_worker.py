"""Page-visit lifecycle timing and link harvesting, on a scripted driver."""

from dataclasses import dataclass, field

import pytest

from mvpcrawl.broker import Broker
from mvpcrawl.model import (
    AbortCause,
    HEADLESS,
    CrawlConfig,
    VantagePoint,
    derive_seed,
    make_sync_tag,
)
from mvpcrawl.runtime import VirtualClock, VirtualRuntime
from mvpcrawl.worker import (
    DriverRequest,
    NavFailure,
    NavSuccess,
    Snapshot,
    Worker,
    harvest_links,
    normalize_url,
    run_crawl,
)
from mvpcrawl.model import ResourceType


@dataclass
class PageScript:
    """Behavior of one URL under the scripted driver."""

    nav_ms: int = 1000
    nav_failure: AbortCause | None = None
    teardown_ms: int = 300
    html: str = "<html>ok</html>"
    event_links: tuple = ()
    anchor_links: tuple = ()


@dataclass
class ScriptedDriver:
    """Deterministic driver with per-URL scripts; honors all deadlines."""

    clock: object
    scripts: dict
    default: PageScript = field(default_factory=PageScript)
    sessions_opened: int = 0
    rng_draws: list = field(default_factory=list)

    def _script(self, url) -> PageScript:
        return self.scripts.get(url, self.default)

    def open_session(self, profile, tunnel_config):
        self.sessions_opened += 1
        return {"tunnel": tunnel_config, "page": None}

    def navigate(self, session, url, deadline_ms):
        script = self._script(url)
        now = self.clock.now_ms()
        if now + script.nav_ms > deadline_ms:
            self.clock.sleep(deadline_ms - now)
            return NavFailure(AbortCause.NAVIGATION_TIMEOUT)
        self.clock.sleep(script.nav_ms)
        if script.nav_failure is not None:
            return NavFailure(script.nav_failure)
        session["page"] = script
        session["url"] = url
        return NavSuccess(
            landed_url=url,
            requests=(
                DriverRequest(
                    url=url, resource_type=ResourceType.DOCUMENT, frame_index=0,
                    document_url=url, ok=True, status=200,
                    body_hash="0" * 64, body_size=len(script.html),
                ),
            ),
            frames=(),
        )

    def interact(self, session, rng, end_time_ms):
        self.rng_draws.append([rng.next_unit() for _ in range(5)])
        remaining = end_time_ms - self.clock.now_ms()
        if remaining > 0:
            self.clock.sleep(remaining)
        page = session.get("page")
        return list(page.event_links) if page else []

    def snapshot(self, session, deadline_ms):
        page = session.get("page")
        now = self.clock.now_ms()
        if page is None:
            return Snapshot("", ())
        if now + page.teardown_ms > deadline_ms:
            self.clock.sleep(deadline_ms - now)
            return None
        self.clock.sleep(page.teardown_ms)
        return Snapshot(page.html, page.anchor_links)

    def close(self, session):
        session["page"] = None


def make_config(domain="site.com", vp=VantagePoint.UNIVERSITY, width=3, depth=2):
    tag = make_sync_tag(domain, HEADLESS, 1)
    return CrawlConfig(
        domain=domain, alexa_rank=1, profile=HEADLESS, vp=vp, repetition=1,
        sync_tag=tag, set_seed=derive_seed(tag), width=width, depth=depth,
    )


def run_in_sim(config, scripts, default=None, table=None, party=1):
    """Drive run_crawl as a single activity on the virtual clock."""
    rt = VirtualRuntime()
    clock = VirtualClock(rt)
    broker = Broker(clock)
    driver = ScriptedDriver(clock=clock, scripts=scripts, default=default or PageScript())
    result = {}

    def activity():
        result["outcome"] = run_crawl(
            config, driver, broker, clock, table, party_size=party, worker_id="t0"
        )

    rt.spawn("crawl", activity)
    rt.run()
    return result["outcome"], driver


@pytest.fixture(scope="module")
def table():
    from mvpcrawl.cli import bundled_suffix_table

    return bundled_suffix_table()


def test_fast_nav_interaction_ends_at_30s(table):
    config = make_config()
    scripts = {config.landing_url: PageScript(nav_ms=5_000, teardown_ms=400)}
    outcome, _ = run_in_sim(config, scripts, table=table)
    visit = outcome.visits[0]
    # Party of one: barrier releases instantly, crawl starts at t=0.
    assert visit.visit_start == 0
    assert visit.nav_end == 5_000
    assert visit.interaction_end == 30_000
    assert visit.teardown_end == 30_400
    assert visit.status.completed


def test_slow_nav_interaction_gets_10s(table):
    config = make_config()
    scripts = {config.landing_url: PageScript(nav_ms=25_000, teardown_ms=400)}
    outcome, _ = run_in_sim(config, scripts, table=table)
    visit = outcome.visits[0]
    assert visit.nav_end == 25_000
    assert visit.interaction_end == 35_000
    assert visit.teardown_end == 35_400
    assert visit.teardown_end - visit.visit_start <= 45_000


def test_nav_timeout_aborts_at_30s_no_interaction(table):
    config = make_config()
    scripts = {config.landing_url: PageScript(nav_ms=90_000)}
    outcome, _ = run_in_sim(config, scripts, table=table)
    visit = outcome.visits[0]
    assert not visit.status.completed
    assert visit.status.abort_cause is AbortCause.NAVIGATION_TIMEOUT
    assert visit.nav_end == 30_000
    assert visit.interaction_end is None and visit.teardown_end is None
    assert len(outcome.visits) == 1  # aborted landing -> nothing to enqueue


def test_teardown_timeout_aborts_at_5s_budget(table):
    config = make_config()
    scripts = {config.landing_url: PageScript(nav_ms=2_000, teardown_ms=6_000)}
    outcome, _ = run_in_sim(config, scripts, table=table)
    visit = outcome.visits[0]
    assert visit.status.abort_cause is AbortCause.TEARDOWN_TIMEOUT
    assert visit.interaction_end == 30_000
    assert visit.teardown_end == 35_000
    assert visit.harvested_links == ()


def test_connectivity_failure_recorded(table):
    config = make_config()
    scripts = {config.landing_url: PageScript(nav_ms=900, nav_failure=AbortCause.DNS_RESOLVE_FAILED)}
    outcome, _ = run_in_sim(config, scripts, table=table)
    visit = outcome.visits[0]
    assert visit.status.abort_cause is AbortCause.DNS_RESOLVE_FAILED
    assert visit.nav_end == 900


def test_full_3x2_crawl_four_pages(table):
    config = make_config()
    links = tuple(f"http://site.com/p{i}" for i in range(1, 4))
    scripts = {config.landing_url: PageScript(nav_ms=1_000, event_links=links)}
    outcome, driver = run_in_sim(config, scripts, default=PageScript(nav_ms=1_000), table=table)
    assert len(outcome.visits) == 4
    assert outcome.visits[0].harvested_links == links
    assert [v.page_depth for v in outcome.visits] == [1, 2, 2, 2]
    # Fresh browser instance per visit.
    assert driver.sessions_opened == 4
    for visit in outcome.visits:
        assert visit.teardown_end - visit.visit_start <= 45_000


def test_depth_cap_limits_to_landing(table):
    config = make_config(depth=1)
    links = tuple(f"http://site.com/p{i}" for i in range(1, 4))
    scripts = {config.landing_url: PageScript(event_links=links)}
    outcome, _ = run_in_sim(config, scripts, table=table)
    assert len(outcome.visits) == 1
    assert outcome.visits[0].harvested_links == ()


def test_watchdog_kills_visit_at_180s(table):
    # Five pages of ~44s each cross the crawl budget inside visit 5.
    config = make_config(width=5)
    links = tuple(f"http://site.com/p{i}" for i in range(1, 6))
    slow = PageScript(nav_ms=29_000, teardown_ms=4_900, event_links=links)
    scripts = {config.landing_url: slow}
    outcome, _ = run_in_sim(config, scripts, default=slow, table=table)
    # Visits 1-4 complete at 43,900 ms each; visit 5 hits the watchdog.
    assert len(outcome.visits) == 5
    last = outcome.visits[-1]
    assert not last.status.completed
    assert last.status.abort_cause is AbortCause.WATCHDOG_KILLED
    boundary = max(last.nav_end or 0, last.interaction_end or 0, last.teardown_end or 0)
    assert boundary == 180_000
    # Remaining queue left unvisited.
    assert len(outcome.visits) < 6


def test_interaction_rng_identical_across_vps(table):
    scripts_links = tuple(f"http://site.com/p{i}" for i in range(1, 4))
    draws = {}
    for vp in (VantagePoint.UNIVERSITY, VantagePoint.TOR):
        config = make_config(vp=vp)
        scripts = {config.landing_url: PageScript(event_links=scripts_links)}
        _outcome, driver = run_in_sim(config, scripts, table=table)
        draws[vp] = driver.rng_draws
    assert draws[VantagePoint.UNIVERSITY][0] == draws[VantagePoint.TOR][0]
    # Page ordinal 2 likewise shares a stream across members.
    assert draws[VantagePoint.UNIVERSITY][1] == draws[VantagePoint.TOR][1]


def test_dead_end_flag_from_empty_html(table):
    config = make_config()
    scripts = {config.landing_url: PageScript(html="")}
    outcome, _ = run_in_sim(config, scripts, table=table)
    visit = outcome.visits[0]
    assert visit.status.completed and visit.status.dead_end
    assert visit.captured_html_size == 0


# -- harvest_links ---------------------------------------------------------

def test_harvest_truncates_to_width(table):
    events = [f"http://site.com/e{i}" for i in range(5)]
    picked = harvest_links(events, [], "site.com", set(), 3, table)
    assert picked == events[:3]


def test_harvest_filters_offsite_then_falls_back_to_anchors(table):
    events = ["http://other.com/x", "http://elsewhere.net/y"]
    anchors = ["http://site.com/a", "http://www.site.com/b"]
    picked = harvest_links(events, anchors, "site.com", set(), 3, table)
    assert picked == anchors


def test_harvest_dedups_against_enqueued_and_normalizes(table):
    enqueued = {normalize_url("http://site.com/")}
    candidates = ["HTTP://SITE.COM/#frag", "http://site.com/new"]
    picked = harvest_links(candidates, [], "site.com", enqueued, 3, table)
    assert picked == ["http://site.com/new"]


def test_harvest_drops_malformed_urls(table):
    picked = harvest_links(["not-a-url", "http:///nohost", "http://site.com/ok"],
                           [], "site.com", set(), 3, table)
    assert picked == ["http://site.com/ok"]


# -- worker loop -------------------------------------------------------------

def test_worker_drains_queue_and_exits(table):
    rt = VirtualRuntime()
    clock = VirtualClock(rt)
    broker = Broker(clock)
    from mvpcrawl.broker import COMMON_QUEUE, JobEnvelope

    configs = [make_config(domain=f"d{i}.com") for i in range(3)]
    for config in configs:
        broker.enqueue(COMMON_QUEUE, JobEnvelope(job_id=config.crawl_id, config=config,
                                                 party_size=1))
    broker.close_dispatch()
    driver = ScriptedDriver(clock=clock, scripts={}, default=PageScript())
    worker = Worker("u-0", COMMON_QUEUE, broker, driver, clock, table)
    done = {}
    rt.spawn("w", lambda: done.update(count=worker.run()))
    rt.run()
    assert done["count"] == 3
    assert broker.drained()
