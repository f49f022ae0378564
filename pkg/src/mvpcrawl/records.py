"""JSON-lines record serialization.

One JSON object per line (UTF-8, LF), each carrying a ``kind`` field in
{crawl, visit, request, frame}. Serialization is canonical (sorted keys,
no whitespace) so identical runs produce byte-identical files.
"""

from __future__ import annotations

import json
import os
from typing import IO, Iterator

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
    VantagePoint,
    VisitStatus,
    validate_visit_record,
)


def dumps(obj: dict) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=False)


def crawl_to_json(outcome: CrawlOutcome) -> dict:
    obj = {"kind": "crawl", "crawl-id": outcome.crawl_id, "status": outcome.status.value}
    obj.update(outcome.config.to_json())
    obj["sync-degraded"] = outcome.sync_degraded
    if outcome.release_time is not None:
        obj["release-time"] = outcome.release_time
    if outcome.start_time is not None:
        obj["start-time"] = outcome.start_time
    if outcome.finish_time is not None:
        obj["finish-time"] = outcome.finish_time
    if outcome.worker_id is not None:
        obj["worker-id"] = outcome.worker_id
    return obj


def visit_to_json(rec: PageVisitRecord) -> dict:
    obj = {
        "kind": "visit",
        "visit-id": rec.visit_id,
        "crawl-id": rec.crawl_id,
        "page-url": rec.page_url,
        "page-depth": rec.page_depth,
        "visit-start": rec.visit_start,
        "status": "completed" if rec.status.completed else "aborted",
        "harvested-links": list(rec.harvested_links),
        "captured-html-size": rec.captured_html_size,
        "captcha-detected": sorted(rec.captcha_detected),
    }
    if rec.nav_end is not None:
        obj["nav-end"] = rec.nav_end
    if rec.interaction_end is not None:
        obj["interaction-end"] = rec.interaction_end
    if rec.teardown_end is not None:
        obj["teardown-end"] = rec.teardown_end
    if rec.status.completed:
        obj["dead-end"] = rec.status.dead_end
    else:
        obj["abort-cause"] = rec.status.abort_cause.value
        if rec.status.abort_code is not None:
            obj["abort-code"] = rec.status.abort_code
    return obj


def request_to_json(rec: RequestRecord) -> dict:
    obj = {
        "kind": "request",
        "visit-id": rec.visit_id,
        "request-url": rec.request_url,
        "resource-type": rec.resource_type.value,
        "frame-id": rec.frame_id,
        "document-url": rec.document_url,
        "is-third-party": rec.is_third_party,
    }
    if rec.outcome.ok:
        obj["outcome"] = "response"
        obj["status"] = rec.outcome.status
        obj["headers"] = {k: v for k, v in rec.outcome.headers}
        obj["body-hash"] = rec.outcome.body_hash
        obj["body-size"] = rec.outcome.body_size
    else:
        obj["outcome"] = "failed"
        obj["error"] = rec.outcome.error
    return obj


def frame_to_json(rec: FrameRecord) -> dict:
    obj = {
        "kind": "frame",
        "visit-id": rec.visit_id,
        "frame-id": rec.frame_id,
        "frame-origin": rec.frame_origin,
        "navigation-events": [[t, u] for t, u in rec.navigation_events],
    }
    if rec.parent_frame_id is not None:
        obj["parent-frame-id"] = rec.parent_frame_id
    return obj


def crawl_from_json(obj: dict) -> CrawlOutcome:
    config = CrawlConfig.from_json(obj)
    return CrawlOutcome(
        crawl_id=obj["crawl-id"],
        config=config,
        status=CrawlStatus(obj["status"]),
        visits=(),
        sync_degraded=obj.get("sync-degraded", False),
        release_time=obj.get("release-time"),
        start_time=obj.get("start-time"),
        finish_time=obj.get("finish-time"),
        worker_id=obj.get("worker-id"),
    )


def visit_from_json(obj: dict) -> PageVisitRecord:
    if obj["status"] == "completed":
        status = VisitStatus.ok(dead_end=obj.get("dead-end", False))
    else:
        status = VisitStatus.aborted(AbortCause(obj["abort-cause"]), obj.get("abort-code"))
    return PageVisitRecord(
        visit_id=obj["visit-id"],
        crawl_id=obj["crawl-id"],
        page_url=obj["page-url"],
        page_depth=obj["page-depth"],
        visit_start=obj["visit-start"],
        nav_end=obj.get("nav-end"),
        interaction_end=obj.get("interaction-end"),
        teardown_end=obj.get("teardown-end"),
        status=status,
        harvested_links=tuple(obj.get("harvested-links", ())),
        captured_html_size=obj["captured-html-size"],
        captcha_detected=tuple(obj.get("captcha-detected", ())),
    )


def request_from_json(obj: dict) -> RequestRecord:
    if obj["outcome"] == "response":
        outcome = RequestOutcome.response(
            obj["status"], obj.get("headers", {}), obj["body-hash"], obj["body-size"]
        )
    else:
        outcome = RequestOutcome.failed(obj["error"])
    return RequestRecord(
        visit_id=obj["visit-id"],
        request_url=obj["request-url"],
        resource_type=ResourceType(obj["resource-type"]),
        frame_id=obj["frame-id"],
        document_url=obj["document-url"],
        outcome=outcome,
        is_third_party=obj["is-third-party"],
    )


def frame_from_json(obj: dict) -> FrameRecord:
    return FrameRecord(
        visit_id=obj["visit-id"],
        frame_id=obj["frame-id"],
        frame_origin=obj["frame-origin"],
        parent_frame_id=obj.get("parent-frame-id"),
        navigation_events=tuple((t, u) for t, u in obj.get("navigation-events", ())),
    )


class RecordWriter:
    """Append-only record file with crash recovery.

    A worker may die mid-write; on reopen the trailing partial line (one
    without a final LF) is discarded so the file stays parseable.
    """

    def __init__(self, path: str):
        self.path = path
        os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
        recover_partial_line(path)
        self._fh: IO[str] = open(path, "a", encoding="utf-8", newline="\n")

    def write(self, obj: dict) -> None:
        self._fh.write(dumps(obj) + "\n")

    def write_visit(self, rec: PageVisitRecord) -> None:
        validate_visit_record(rec)
        self.write(visit_to_json(rec))

    def write_crawl(self, outcome: CrawlOutcome) -> None:
        self.write(crawl_to_json(outcome))

    def write_request(self, rec: RequestRecord) -> None:
        self.write(request_to_json(rec))

    def write_frame(self, rec: FrameRecord) -> None:
        self.write(frame_to_json(rec))

    def close(self) -> None:
        self._fh.close()

    def __enter__(self) -> "RecordWriter":
        return self

    def __exit__(self, *exc) -> None:
        self.close()


def recover_partial_line(path: str) -> None:
    """Truncate a record file after its last complete (LF-terminated) line."""
    try:
        size = os.path.getsize(path)
    except OSError:
        return
    if size == 0:
        return
    with open(path, "rb+") as fh:
        fh.seek(-1, os.SEEK_END)
        if fh.read(1) == b"\n":
            return
        # Walk back to the previous newline and cut there.
        pos = size - 1
        while pos > 0:
            fh.seek(pos - 1)
            if fh.read(1) == b"\n":
                break
            pos -= 1
        fh.truncate(pos)


def read_records(path: str) -> Iterator[tuple[int, dict]]:
    """Yield (line-number, parsed object) pairs; callers handle bad lines."""
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            yield lineno, json.loads(line)
