"""Core domain types for the multi-vantage-point crawl pipeline.

Everything here is an immutable value object. The JSON-lines record
forms produced by :mod:`mvpcrawl.records` use these types' kebab-case
field names verbatim; they are the contract between workers, storage,
and analytics.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

from .detrand import fnv1a64


class VantagePoint(str, enum.Enum):
    """The four network endpoints crawls originate from.

    Enum order is fixed; reports emit columns in this order.
    """

    UNIVERSITY = "university"
    RESIDENTIAL = "residential"
    CLOUD = "cloud"
    TOR = "tor"

    @property
    def tunneled(self) -> bool:
        """Cloud and Tor reach the web through a SOCKS tunnel, so their
        connectivity failures surface as proxy errors instead of DNS ones."""
        return self in (VantagePoint.CLOUD, VantagePoint.TOR)

    @property
    def short(self) -> str:
        return {"university": "u", "residential": "r", "cloud": "c", "tor": "t"}[self.value]


VP_ORDER = tuple(VantagePoint)

_VP_BY_SHORT = {vp.short: vp for vp in VantagePoint}


def vp_from_code(code: str) -> VantagePoint:
    """Accept either the full name or the one-letter code (u/r/c/t)."""
    code = code.strip().lower()
    if code in _VP_BY_SHORT:
        return _VP_BY_SHORT[code]
    return VantagePoint(code)


class DisplayMode(str, enum.Enum):
    HEADLESS = "headless"
    HEADED = "headed"


class UASpoof(str, enum.Enum):
    NATIVE = "native"
    WINDOWS = "windows-spoof"


@dataclass(frozen=True)
class BrowserProfile:
    """Display mode plus optional user-agent spoofing.

    Only three combinations are legal: headless/native, headed/native,
    and headed/windows-spoof (a headless browser reporting a Windows UA
    is not a configuration the pipeline runs).
    """

    display_mode: DisplayMode
    ua_spoof: UASpoof

    def __post_init__(self) -> None:
        if self.display_mode is DisplayMode.HEADLESS and self.ua_spoof is not UASpoof.NATIVE:
            raise ValueError("headless profiles must use the native user agent")

    @property
    def code(self) -> str:
        if self.display_mode is DisplayMode.HEADLESS:
            return "hl"
        return "hd" if self.ua_spoof is UASpoof.NATIVE else "hw"

    @classmethod
    def from_code(cls, code: str) -> "BrowserProfile":
        try:
            return PROFILES_BY_CODE[code.strip().lower()]
        except KeyError:
            raise ValueError(f"unknown browser profile code: {code!r}") from None

    def to_json(self) -> dict:
        return {"display-mode": self.display_mode.value, "ua-spoof": self.ua_spoof.value}

    @classmethod
    def from_json(cls, obj: dict) -> "BrowserProfile":
        return cls(DisplayMode(obj["display-mode"]), UASpoof(obj["ua-spoof"]))


HEADLESS = BrowserProfile(DisplayMode.HEADLESS, UASpoof.NATIVE)
HEADED = BrowserProfile(DisplayMode.HEADED, UASpoof.NATIVE)
HEADED_WINDOWS = BrowserProfile(DisplayMode.HEADED, UASpoof.WINDOWS)

ALL_PROFILES = (HEADLESS, HEADED, HEADED_WINDOWS)
PROFILES_BY_CODE = {p.code: p for p in ALL_PROFILES}


class ResourceType(str, enum.Enum):
    """Closed request taxonomy; unknown driver types map to OTHER."""

    DOCUMENT = "document"
    STYLESHEET = "stylesheet"
    IMAGE = "image"
    MEDIA = "media"
    FONT = "font"
    SCRIPT = "script"
    XHR = "xhr"
    FETCH = "fetch"
    WEBSOCKET = "websocket"
    SUBDOCUMENT = "subdocument"
    OTHER = "other"

    @classmethod
    def from_driver(cls, name: str) -> "ResourceType":
        try:
            return cls(name.strip().lower())
        except ValueError:
            return cls.OTHER


RESOURCE_TYPES = tuple(ResourceType)


class AbortCause(str, enum.Enum):
    DNS_RESOLVE_FAILED = "dns-resolve-failed"
    SOCKS_PROXY_ERROR = "socks-proxy-error"
    NAVIGATION_TIMEOUT = "navigation-timeout"
    TEARDOWN_TIMEOUT = "teardown-timeout"
    WATCHDOG_KILLED = "watchdog-killed"
    OTHER = "other"


ABORT_CAUSES = tuple(AbortCause)


def connectivity_cause(vp: VantagePoint) -> AbortCause:
    """How a name-resolution/connect failure is perceived at this VP."""
    return AbortCause.SOCKS_PROXY_ERROR if vp.tunneled else AbortCause.DNS_RESOLVE_FAILED


class CrawlStatus(str, enum.Enum):
    COMPLETED = "completed"
    DROPPED = "dropped"
    STALLED = "stalled"
    IN_PROGRESS = "in-progress"


@dataclass(frozen=True)
class VisitStatus:
    """Outcome of one page visit.

    ``dead_end`` is only meaningful on completed visits and must equal
    "completed with zero captured HTML bytes".
    """

    completed: bool
    abort_cause: AbortCause | None = None
    abort_code: str | None = None
    dead_end: bool = False

    def __post_init__(self) -> None:
        if self.completed and self.abort_cause is not None:
            raise ValueError("completed visits carry no abort cause")
        if not self.completed and self.abort_cause is None:
            raise ValueError("aborted visits need an abort cause")
        if not self.completed and self.dead_end:
            raise ValueError("dead-end applies to completed visits only")
        if self.abort_code is not None and self.abort_cause is not AbortCause.OTHER:
            raise ValueError("abort-code accompanies the 'other' cause only")

    @classmethod
    def ok(cls, dead_end: bool = False) -> "VisitStatus":
        return cls(completed=True, dead_end=dead_end)

    @classmethod
    def aborted(cls, cause: AbortCause, code: str | None = None) -> "VisitStatus":
        return cls(completed=False, abort_cause=cause, abort_code=code)


@dataclass(frozen=True)
class CrawlConfig:
    """One unit of crawl work: a (domain, profile, vp, repetition) cell.

    The four VP variants of a (domain, profile, repetition) triple share
    a sync tag and therefore a seed; they form one crawl set.
    """

    domain: str
    alexa_rank: int
    profile: BrowserProfile
    vp: VantagePoint
    repetition: int
    sync_tag: str
    set_seed: int
    width: int = 3
    depth: int = 2
    requeued: bool = False

    def __post_init__(self) -> None:
        if self.alexa_rank < 1:
            raise ValueError("alexa-rank must be positive")
        if self.repetition < 1:
            raise ValueError("repetition must be positive")
        if self.width < 1 or self.depth < 1:
            raise ValueError("width and depth must be positive")

    @property
    def crawl_id(self) -> str:
        # Unique: sync tags are unique per (domain, profile, repetition).
        return f"{self.sync_tag}|{self.vp.short}"

    @property
    def landing_url(self) -> str:
        return f"http://{self.domain}/"

    def to_json(self) -> dict:
        return {
            "domain": self.domain,
            "alexa-rank": self.alexa_rank,
            "profile": self.profile.to_json(),
            "vp": self.vp.value,
            "repetition": self.repetition,
            "sync-tag": self.sync_tag,
            "set-seed": self.set_seed,
            "width": self.width,
            "depth": self.depth,
            "requeued": self.requeued,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "CrawlConfig":
        return cls(
            domain=obj["domain"],
            alexa_rank=obj["alexa-rank"],
            profile=BrowserProfile.from_json(obj["profile"]),
            vp=VantagePoint(obj["vp"]),
            repetition=obj["repetition"],
            sync_tag=obj["sync-tag"],
            set_seed=obj["set-seed"],
            width=obj["width"],
            depth=obj["depth"],
            requeued=obj["requeued"],
        )


@dataclass(frozen=True)
class PageVisitRecord:
    visit_id: str
    crawl_id: str
    page_url: str
    page_depth: int
    visit_start: int
    nav_end: int | None
    interaction_end: int | None
    teardown_end: int | None
    status: VisitStatus
    harvested_links: tuple[str, ...] = ()
    captured_html_size: int = 0
    captcha_detected: tuple[str, ...] = ()


@dataclass(frozen=True)
class RequestOutcome:
    """Response metadata or a failure; bodies are kept as hash + size."""

    ok: bool
    status: int | None = None
    headers: tuple[tuple[str, str], ...] = ()
    body_hash: str | None = None
    body_size: int | None = None
    error: str | None = None

    @classmethod
    def response(cls, status: int, headers: dict, body_hash: str, body_size: int) -> "RequestOutcome":
        return cls(True, status, tuple(sorted(headers.items())), body_hash, body_size)

    @classmethod
    def failed(cls, error: str) -> "RequestOutcome":
        return cls(False, error=error)


@dataclass(frozen=True)
class RequestRecord:
    visit_id: str
    request_url: str
    resource_type: ResourceType
    frame_id: str
    document_url: str
    outcome: RequestOutcome
    is_third_party: bool


@dataclass(frozen=True)
class FrameRecord:
    visit_id: str
    frame_id: str
    frame_origin: str
    parent_frame_id: str | None = None
    navigation_events: tuple[tuple[int, str], ...] = ()


@dataclass(frozen=True)
class CrawlOutcome:
    """Worker-side summary of one executed crawl."""

    crawl_id: str
    config: CrawlConfig
    status: CrawlStatus
    visits: tuple[PageVisitRecord, ...]
    sync_degraded: bool = False
    release_time: int | None = None
    start_time: int | None = None
    finish_time: int | None = None
    worker_id: str | None = None


# --- crawl-plan arithmetic -------------------------------------------------

def max_pages(width: int, depth: int) -> int:
    """Page budget of a width x depth crawl: 1 landing page plus up to
    ``width`` pages per deeper level (sum of width**d for d < depth)."""
    if width < 1 or depth < 1:
        raise ValueError("width and depth must be positive")
    return sum(width ** d for d in range(depth))


def make_sync_tag(domain: str, profile: BrowserProfile, repetition: int) -> str:
    """Deterministic crawl-set identifier, injective over the plan."""
    if repetition < 1:
        raise ValueError("repetition must be positive")
    return f"{domain}|{profile.code}|{repetition}"


def derive_seed(sync_tag: str) -> int:
    """Common per-crawl-set seed: 64-bit FNV-1a of the tag bytes."""
    if not sync_tag:
        raise ValueError("sync tag must be non-empty")
    return fnv1a64(sync_tag)


MAX_VISIT_MS = 45_000
NAV_TIMEOUT_MS = 30_000
INTERACTION_MIN_MS = 10_000
TEARDOWN_TIMEOUT_MS = 5_000
CRAWL_WATCHDOG_MS = 180_000


def validate_visit_record(rec: PageVisitRecord) -> None:
    """Enforce the per-visit invariants every emitted record must satisfy."""
    if rec.page_depth < 1:
        raise ValueError(f"{rec.visit_id}: page-depth must be >= 1")
    stamps = [rec.visit_start, rec.nav_end, rec.interaction_end, rec.teardown_end]
    present = [t for t in stamps if t is not None]
    if any(a > b for a, b in zip(present, present[1:])):
        raise ValueError(f"{rec.visit_id}: timestamps must be monotone")
    if rec.status.completed:
        if rec.teardown_end is None:
            raise ValueError(f"{rec.visit_id}: completed visit lacks teardown-end")
        if rec.teardown_end - rec.visit_start > MAX_VISIT_MS:
            raise ValueError(f"{rec.visit_id}: completed visit exceeds {MAX_VISIT_MS} ms")
        if rec.status.dead_end != (rec.captured_html_size == 0):
            raise ValueError(f"{rec.visit_id}: dead-end flag disagrees with captured size")
    else:
        if rec.harvested_links:
            raise ValueError(f"{rec.visit_id}: aborted visits harvest no links")
