"""Post-processing: record ingestion and the cross-VP report tables.

The store is built single-writer from JSON-lines record files, then
queried read-only. Every aggregate here is plain counting over the raw
records so an independent brute-force recomputation can check it.
"""

from __future__ import annotations

import glob
import json
import os
import sys
from collections import Counter, defaultdict
from dataclasses import dataclass
from decimal import ROUND_HALF_UP, Decimal

from .abp import FilterSet, classify
from .model import (
    ABORT_CAUSES,
    ALL_PROFILES,
    AbortCause,
    RESOURCE_TYPES,
    ResourceType,
    VP_ORDER,
    VantagePoint,
)
from .records import read_records


class IngestError(ValueError):
    pass


@dataclass(slots=True)
class CrawlRow:
    crawl_id: str
    domain: str
    profile_code: str
    vp: VantagePoint
    repetition: int
    sync_tag: str
    status: str
    sync_degraded: bool
    release_time: int | None
    start_time: int | None
    position: str


@dataclass(slots=True)
class VisitRow:
    visit_id: str
    crawl_id: str
    vp: VantagePoint
    domain: str
    profile_code: str
    sync_tag: str
    completed: bool
    dead_end: bool
    abort_cause: str | None
    captcha: bool
    page_depth: int


@dataclass(slots=True)
class RequestRow:
    visit_id: str
    vp: VantagePoint
    url: str
    document_url: str
    rtype: ResourceType
    third_party: bool


@dataclass(slots=True)
class FrameRow:
    visit_id: str
    vp: VantagePoint
    domain: str
    origin: str
    is_subframe: bool


class AnalyticsStore:
    def __init__(self) -> None:
        self.crawls: dict[str, CrawlRow] = {}
        self.visits: list[VisitRow] = []
        self.requests: list[RequestRow] = []
        self.frames: list[FrameRow] = []
        self.malformed: Counter = Counter()
        self.orphaned: Counter = Counter()

    @property
    def malformed_count(self) -> int:
        return sum(self.malformed.values())

    def ingest_stats(self) -> dict:
        return {
            "crawls": len(self.crawls),
            "visits": len(self.visits),
            "requests": len(self.requests),
            "frames": len(self.frames),
            "malformed-lines": dict(self.malformed),
            "orphaned-records": dict(self.orphaned),
        }


def ingest(paths: list[str]) -> AnalyticsStore:
    """Build a store from record files; malformed lines are counted, not fatal.

    Duplicate crawl ids are integrity errors and are rejected with both
    file positions.
    """
    records: list[tuple[str, int, dict | None]] = []
    for path in paths:
        try:
            _read_tolerant(path, records)
        except OSError as exc:
            raise IngestError(f"cannot read {path}: {exc}") from None
    return ingest_records(records)


def _read_tolerant(path: str, sink: list) -> None:
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError:
                obj = None
            sink.append((path, lineno, obj))


def ingest_dir(directory: str) -> AnalyticsStore:
    paths = sorted(glob.glob(os.path.join(directory, "**", "*.jsonl"), recursive=True))
    if not paths:
        return AnalyticsStore()
    return ingest(paths)


def ingest_records(records: list[tuple[str, int, dict | None]]) -> AnalyticsStore:
    store = AnalyticsStore()
    pending_visits: list[tuple[str, int, dict]] = []
    pending_other: list[tuple[str, int, dict]] = []
    # First pass: crawls (so later rows can resolve their vantage point).
    for path, lineno, obj in records:
        if obj is None or not isinstance(obj, dict) or "kind" not in obj:
            store.malformed["bad-json"] += 1
            continue
        kind = obj["kind"]
        try:
            if kind == "crawl":
                row = CrawlRow(
                    crawl_id=obj["crawl-id"],
                    domain=sys.intern(obj["domain"]),
                    profile_code=_profile_code(obj["profile"]),
                    vp=VantagePoint(obj["vp"]),
                    repetition=obj["repetition"],
                    sync_tag=sys.intern(obj["sync-tag"]),
                    status=obj["status"],
                    sync_degraded=obj.get("sync-degraded", False),
                    release_time=obj.get("release-time"),
                    start_time=obj.get("start-time"),
                    position=f"{path}:{lineno}",
                )
                existing = store.crawls.get(row.crawl_id)
                if existing is not None:
                    raise IngestError(
                        f"duplicate crawl-id {row.crawl_id!r} at {existing.position} and {row.position}"
                    )
                store.crawls[row.crawl_id] = row
            elif kind == "visit":
                pending_visits.append((path, lineno, obj))
            elif kind in ("request", "frame"):
                pending_other.append((path, lineno, obj))
            else:
                store.malformed["unknown-kind"] += 1
        except IngestError:
            raise
        except (KeyError, TypeError, ValueError):
            store.malformed[f"bad-{kind}"] += 1

    visit_info: dict[str, VisitRow] = {}
    for path, lineno, obj in pending_visits:
        try:
            crawl = store.crawls.get(obj["crawl-id"])
            if crawl is None:
                store.orphaned["visit"] += 1
                continue
            row = VisitRow(
                visit_id=obj["visit-id"],
                crawl_id=obj["crawl-id"],
                vp=crawl.vp,
                domain=crawl.domain,
                profile_code=crawl.profile_code,
                sync_tag=crawl.sync_tag,
                completed=obj["status"] == "completed",
                dead_end=obj.get("dead-end", False),
                abort_cause=obj.get("abort-cause"),
                captcha=bool(obj.get("captcha-detected")),
                page_depth=obj["page-depth"],
            )
            store.visits.append(row)
            visit_info[row.visit_id] = row
        except (KeyError, TypeError, ValueError):
            store.malformed["bad-visit"] += 1

    for path, lineno, obj in pending_other:
        try:
            visit = visit_info.get(obj["visit-id"])
            if visit is None:
                store.orphaned[obj["kind"]] += 1
                continue
            if obj["kind"] == "request":
                store.requests.append(
                    RequestRow(
                        visit_id=obj["visit-id"],
                        vp=visit.vp,
                        url=sys.intern(obj["request-url"]),
                        document_url=sys.intern(obj["document-url"]),
                        rtype=ResourceType(obj["resource-type"]),
                        third_party=obj["is-third-party"],
                    )
                )
            else:
                store.frames.append(
                    FrameRow(
                        visit_id=obj["visit-id"],
                        vp=visit.vp,
                        domain=visit.domain,
                        origin=sys.intern(obj["frame-origin"]),
                        is_subframe=obj.get("parent-frame-id") is not None,
                    )
                )
        except (KeyError, TypeError, ValueError):
            store.malformed[f"bad-{obj.get('kind')}"] += 1
    return store


def _profile_code(profile_obj: dict) -> str:
    mode = profile_obj["display-mode"]
    spoof = profile_obj["ua-spoof"]
    if mode == "headless":
        return "hl"
    return "hd" if spoof == "native" else "hw"


# -- aggregations -------------------------------------------------------------

def classify_sets(store: AnalyticsStore, include_tor: bool = False) -> dict[str, dict[str, int]]:
    """Per-profile crawl-set classification by completed-visit counts.

    All member counts zero -> none; all equal and positive -> matched;
    anything else -> mixed. Members without records count as zero.
    """
    vps = [vp for vp in VP_ORDER if include_tor or vp is not VantagePoint.TOR]
    completed: dict[str, int] = Counter()
    for visit in store.visits:
        if visit.completed:
            completed[visit.crawl_id] += 1
    sets: dict[str, dict[VantagePoint, int]] = defaultdict(dict)
    profiles: dict[str, str] = {}
    for crawl in store.crawls.values():
        sets[crawl.sync_tag][crawl.vp] = completed.get(crawl.crawl_id, 0)
        profiles[crawl.sync_tag] = crawl.profile_code
    out = {p.code: {"none": 0, "mixed": 0, "matched": 0} for p in ALL_PROFILES}
    for tag, members in sets.items():
        counts = [members.get(vp, 0) for vp in vps]
        if all(c == 0 for c in counts):
            bucket = "none"
        elif len(set(counts)) == 1:
            bucket = "matched"
        else:
            bucket = "mixed"
        profile = profiles[tag]
        out.setdefault(profile, {"none": 0, "mixed": 0, "matched": 0})[bucket] += 1
    return out


# Connectivity-failure causes impossible at a vantage point are N/A there.
def _cause_possible(cause: AbortCause, vp: VantagePoint) -> bool:
    if cause is AbortCause.DNS_RESOLVE_FAILED:
        return not vp.tunneled
    if cause is AbortCause.SOCKS_PROXY_ERROR:
        return vp.tunneled
    return True


def abort_breakdown(store: AnalyticsStore) -> dict[VantagePoint, dict[str, float | None]]:
    """Abort-cause shares as a percentage of all visits per vantage point."""
    totals: Counter = Counter()
    causes: dict[VantagePoint, Counter] = defaultdict(Counter)
    for visit in store.visits:
        totals[visit.vp] += 1
        if not visit.completed and visit.abort_cause is not None:
            causes[visit.vp][visit.abort_cause] += 1
    table: dict[VantagePoint, dict[str, float | None]] = {}
    for vp in VP_ORDER:
        row: dict[str, float | None] = {}
        total = totals.get(vp, 0)
        aborted = 0
        for cause in ABORT_CAUSES:
            if not _cause_possible(cause, vp):
                row[cause.value] = None
                continue
            n = causes[vp].get(cause.value, 0)
            aborted += n
            row[cause.value] = 100.0 * n / total if total else 0.0
        row["total-failures"] = 100.0 * aborted / total if total else 0.0
        table[vp] = row
    return table


def filter_hit_ratios(store: AnalyticsStore, fs: FilterSet) -> dict[VantagePoint, dict[ResourceType, float]]:
    """Matched-request share per (vantage point, resource type)."""
    matched: dict[tuple[VantagePoint, ResourceType], int] = Counter()
    totals: dict[tuple[VantagePoint, ResourceType], int] = Counter()
    decision_cache: dict[tuple[str, str, ResourceType, bool], bool] = {}
    for req in store.requests:
        key = (req.url, req.document_url, req.rtype, req.third_party)
        hit = decision_cache.get(key)
        if hit is None:
            hit = classify(fs, req.url, req.document_url, req.rtype, req.third_party).matched
            decision_cache[key] = hit
        totals[(req.vp, req.rtype)] += 1
        if hit:
            matched[(req.vp, req.rtype)] += 1
    out: dict[VantagePoint, dict[ResourceType, float]] = {}
    for vp in VP_ORDER:
        out[vp] = {}
        for rtype in RESOURCE_TYPES:
            total = totals.get((vp, rtype), 0)
            out[vp][rtype] = matched.get((vp, rtype), 0) / total if total else 0.0
    return out


def match_totals(store: AnalyticsStore, fs: FilterSet) -> int:
    count = 0
    cache: dict[tuple[str, str, ResourceType, bool], bool] = {}
    for req in store.requests:
        key = (req.url, req.document_url, req.rtype, req.third_party)
        hit = cache.get(key)
        if hit is None:
            hit = classify(fs, req.url, req.document_url, req.rtype, req.third_party).matched
            cache[key] = hit
        if hit:
            count += 1
    return count


def frame_origin_matrix(
    store: AnalyticsStore, exclude: set[VantagePoint] = frozenset({VantagePoint.TOR})
) -> dict[str, dict[VantagePoint, int]]:
    """Third-party sub-frame loads per (origin, vantage point)."""
    vps = [vp for vp in VP_ORDER if vp not in exclude]
    matrix: dict[str, dict[VantagePoint, int]] = {}
    for frame in store.frames:
        if not frame.is_subframe or frame.vp in exclude:
            continue
        if frame.origin == frame.domain:
            continue
        row = matrix.setdefault(frame.origin, {vp: 0 for vp in vps})
        row[frame.vp] += 1
    return matrix


def cloud_zero_origins(matrix: dict[str, dict[VantagePoint, int]], min_load: int) -> set[str]:
    """Origins never seen from cloud but loaded at least ``min_load``
    times from both residential and university."""
    if min_load < 1:
        raise ValueError("min_load must be >= 1")
    out = set()
    for origin, row in matrix.items():
        if (
            row.get(VantagePoint.CLOUD, 0) == 0
            and row.get(VantagePoint.RESIDENTIAL, 0) >= min_load
            and row.get(VantagePoint.UNIVERSITY, 0) >= min_load
        ):
            out.add(origin)
    return out


def resource_type_distribution(store: AnalyticsStore) -> dict[VantagePoint, dict[ResourceType, float]]:
    """Percentage of each vantage point's requests by resource type."""
    counts: dict[VantagePoint, Counter] = defaultdict(Counter)
    for req in store.requests:
        counts[req.vp][req.rtype] += 1
    out: dict[VantagePoint, dict[ResourceType, float]] = {}
    for vp in VP_ORDER:
        total = sum(counts[vp].values())
        out[vp] = {
            rtype: (100.0 * counts[vp][rtype] / total if total else 0.0)
            for rtype in RESOURCE_TYPES
        }
    return out


def misc_stats(store: AnalyticsStore, el_fs: FilterSet | None = None,
               ep_fs: FilterSet | None = None) -> dict:
    """Dead-end histogram, CAPTCHA rates, launch skew, and volume totals."""
    # Histogram of non-dead-end completed pages per (domain, vp).
    page_counts: dict[tuple[VantagePoint, str], int] = Counter()
    completed: Counter = Counter()
    captcha: Counter = Counter()
    for visit in store.visits:
        if visit.completed:
            completed[visit.vp] += 1
            if visit.captcha:
                captcha[visit.vp] += 1
            if not visit.dead_end:
                page_counts[(visit.vp, visit.domain)] += 1
    domains_by_vp: dict[VantagePoint, set[str]] = defaultdict(set)
    for crawl in store.crawls.values():
        domains_by_vp[crawl.vp].add(crawl.domain)
    histogram: dict[VantagePoint, dict[int, int]] = {}
    for vp in VP_ORDER:
        buckets: Counter = Counter()
        for domain in domains_by_vp.get(vp, ()):
            buckets[page_counts.get((vp, domain), 0)] += 1
        histogram[vp] = dict(sorted(buckets.items()))

    captcha_rate = {
        vp: (captcha.get(vp, 0) / completed.get(vp, 0) if completed.get(vp, 0) else 0.0)
        for vp in VP_ORDER
    }

    starts: dict[str, list[int]] = defaultdict(list)
    for crawl in store.crawls.values():
        if crawl.start_time is not None:
            starts[crawl.sync_tag].append(crawl.start_time)
    skews = sorted(max(v) - min(v) for v in starts.values() if len(v) >= 2)
    quantiles = {
        "p50": _quantile(skews, 0.50),
        "p90": _quantile(skews, 0.90),
        "p99": _quantile(skews, 0.99),
        "max": skews[-1] if skews else 0,
    }

    stats = {
        "dead_end_histogram": histogram,
        "captcha_rate": captcha_rate,
        "launch_skew": quantiles,
        "total_requests": len(store.requests),
        "el_ep_match_totals": {
            "easylist": match_totals(store, el_fs) if el_fs is not None else None,
            "easyprivacy": match_totals(store, ep_fs) if ep_fs is not None else None,
        },
    }
    return stats


def _quantile(sorted_values: list[int], q: float) -> int:
    if not sorted_values:
        return 0
    idx = min(len(sorted_values) - 1, int(q * len(sorted_values)))
    return sorted_values[idx]


# -- report emission ----------------------------------------------------------

def format_pct(value: float | None) -> str:
    if value is None:
        return "N/A"
    return str(Decimal(str(value)).quantize(Decimal("0.01"), rounding=ROUND_HALF_UP))


PROFILE_LABELS = {"hl": "headless", "hd": "headed", "hw": "headed-windows-ua"}

QUERY_DESCRIPTORS = {
    "set_classification": "per profile: crawl sets bucketed by equality of completed-visit counts across VPs (Tor excluded)",
    "abort_breakdown": "per VP: aborted visits by cause / total visits, percent; N/A where the cause is impossible",
    "dead_end_histogram": "per VP: domains bucketed by count of completed non-dead-end pages",
    "resource_types": "per VP: percentage of requests by resource type",
    "el_hit_ratios": "per VP x resource type: requests matching the ad filter list / total requests",
    "ep_hit_ratios": "per VP x resource type: requests matching the tracker filter list / total requests",
    "frame_origin_matrix": "third-party sub-frame loads per origin per VP (Tor excluded)",
    "captcha_rate": "per VP: completed pages with detected CAPTCHA / completed pages",
    "launch_skew": "per crawl set: max(start) - min(start) across members, quantiles in ms",
    "cloud_zero_origins": "origins with zero cloud loads and >= min-load loads on both residential and university",
}


def write_report(
    store: AnalyticsStore,
    out_dir: str,
    el_fs: FilterSet | None = None,
    ep_fs: FilterSet | None = None,
    min_load: int = 3,
) -> dict:
    """Emit tables/, figures/, and summary.json under ``out_dir``."""
    tables = os.path.join(out_dir, "tables")
    figures = os.path.join(out_dir, "figures")
    os.makedirs(tables, exist_ok=True)
    os.makedirs(figures, exist_ok=True)

    sets_ex = classify_sets(store, include_tor=False)
    sets_inc = classify_sets(store, include_tor=True)
    _write_csv(
        os.path.join(tables, "set_classification.csv"),
        ["crawls-by-page-visited"] + [PROFILE_LABELS[p.code] for p in ALL_PROFILES],
        [
            [bucket] + [sets_ex[p.code][bucket] for p in ALL_PROFILES]
            for bucket in ("none", "mixed", "matched")
        ]
        + [["grand-total"] + [sum(sets_ex[p.code].values()) for p in ALL_PROFILES]],
    )

    breakdown = abort_breakdown(store)
    rows = []
    for cause in ABORT_CAUSES:
        rows.append([cause.value] + [format_pct(breakdown[vp][cause.value]) for vp in VP_ORDER])
    rows.append(["total-failures"] + [format_pct(breakdown[vp]["total-failures"]) for vp in VP_ORDER])
    _write_csv(
        os.path.join(tables, "abort_breakdown.csv"),
        ["error-type"] + [vp.value for vp in VP_ORDER],
        rows,
    )

    stats = misc_stats(store, el_fs, ep_fs)
    hist = stats["dead_end_histogram"]
    max_bucket = max((b for vp in VP_ORDER for b in hist[vp]), default=0)
    _write_csv(
        os.path.join(figures, "dead_end_histogram.csv"),
        ["pages"] + [vp.value for vp in VP_ORDER],
        [
            [bucket] + [hist[vp].get(bucket, 0) for vp in VP_ORDER]
            for bucket in range(0, max_bucket + 1)
        ],
    )

    dist = resource_type_distribution(store)
    _write_csv(
        os.path.join(figures, "resource_types.csv"),
        ["resource-type"] + [vp.value for vp in VP_ORDER],
        [
            [rtype.value] + [format_pct(dist[vp][rtype]) for vp in VP_ORDER]
            for rtype in RESOURCE_TYPES
        ],
    )

    for name, fs in (("el_hit_ratios", el_fs), ("ep_hit_ratios", ep_fs)):
        if fs is None:
            continue
        ratios = filter_hit_ratios(store, fs)
        _write_csv(
            os.path.join(figures, f"{name}.csv"),
            ["resource-type"] + [vp.value for vp in VP_ORDER],
            [
                [rtype.value] + [f"{ratios[vp][rtype]:.4f}" for vp in VP_ORDER]
                for rtype in RESOURCE_TYPES
            ],
        )

    matrix = frame_origin_matrix(store)
    vps_in_matrix = [vp for vp in VP_ORDER if vp is not VantagePoint.TOR]
    _write_csv(
        os.path.join(figures, "frame_origin_matrix.csv"),
        ["origin"] + [vp.value for vp in vps_in_matrix],
        [
            [origin] + [matrix[origin][vp] for vp in vps_in_matrix]
            for origin in sorted(matrix)
        ],
    )

    summary = {
        "ingest": store.ingest_stats(),
        "set-classification": {"excluding-tor": sets_ex, "including-tor": sets_inc},
        "captcha-rate": {vp.value: stats["captcha_rate"][vp] for vp in VP_ORDER},
        "launch-skew-ms": stats["launch_skew"],
        "total-requests": stats["total_requests"],
        "filter-match-totals": stats["el_ep_match_totals"],
        "cloud-zero-origins": {
            "min-load": min_load,
            "origins": sorted(cloud_zero_origins(matrix, min_load)),
        },
        "queries": QUERY_DESCRIPTORS,
    }
    summary_path = os.path.join(out_dir, "summary.json")
    tmp = summary_path + ".tmp"
    with open(tmp, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")
    os.replace(tmp, summary_path)
    return summary


def _write_csv(path: str, header: list, rows: list[list]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(",".join(str(h) for h in header) + "\n")
        for row in rows:
            fh.write(",".join(str(c) for c in row) + "\n")
