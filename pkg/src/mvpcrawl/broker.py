"""Central coordination: crawl queues, job leases, and the crawl-set barrier.

The barrier is non-resetting: once a sync tag's arrival counter reaches
the party size it is released forever, and later arrivals pass straight
through. State lives in memory only; the distributed deployment fronts
this core with the TCP service in :mod:`mvpcrawl.wire`.
"""

from __future__ import annotations

import threading
from collections import deque
from dataclasses import dataclass, replace

from .model import CrawlConfig

RESIDENTIAL_QUEUE = "residential"
COMMON_QUEUE = "common"
QUEUES = (RESIDENTIAL_QUEUE, COMMON_QUEUE)

# Dequeue-to-terminal worst case: barrier degrade window (120 s) plus the
# crawl watchdog (180 s) plus margin. Workers lease for this long so a live
# worker always finishes (or aborts) before its lease can expire.
DEFAULT_LEASE_MS = 240_000
WORKER_LEASE_MS = 360_000
SYNC_DEGRADE_MS = 120_000


class BrokerError(Exception):
    code = "broker-error"


class DuplicateJobId(BrokerError):
    code = "duplicate-job-id"


class PartySizeMismatch(BrokerError):
    code = "party-size-mismatch"


class UnknownTag(BrokerError):
    code = "unknown-tag"


class UnknownQueue(BrokerError):
    code = "unknown-queue"


@dataclass
class JobEnvelope:
    job_id: str
    config: CrawlConfig
    queue: str = COMMON_QUEUE
    party_size: int = 4
    enqueue_time: int = 0
    lease_worker: str | None = None
    lease_expiry: int | None = None

    def to_json(self) -> dict:
        return {
            "job-id": self.job_id,
            "config": self.config.to_json(),
            "queue": self.queue,
            "party-size": self.party_size,
            "enqueue-time": self.enqueue_time,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "JobEnvelope":
        return cls(
            job_id=obj["job-id"],
            config=CrawlConfig.from_json(obj["config"]),
            queue=obj.get("queue", COMMON_QUEUE),
            party_size=obj.get("party-size", 4),
            enqueue_time=obj.get("enqueue-time", 0),
        )


@dataclass
class SyncState:
    tag: str
    party_size: int
    event: object
    arrivals: int = 0
    released: bool = False
    release_time: int | None = None


@dataclass
class ReapAction:
    job: JobEnvelope
    action: str  # "requeued" | "dropped"


class Broker:
    """Queue and barrier state machine; every mutation is atomic.

    ``await_release`` blocks on the sync event outside the lock, so a
    waiting client never stalls other traffic.
    """

    def __init__(self, clock) -> None:
        self._clock = clock
        self._mu = threading.Lock()
        self._queues: dict[str, deque[JobEnvelope]] = {q: deque() for q in QUEUES}
        self._seen_ids: set[str] = set()
        self._leases: dict[str, JobEnvelope] = {}
        self._terminal: set[str] = set()
        self._sync: dict[str, SyncState] = {}
        self._dispatch_closed = False

    # -- queues --------------------------------------------------------

    def enqueue(self, queue: str, job: JobEnvelope) -> None:
        with self._mu:
            if queue not in self._queues:
                raise UnknownQueue(queue)
            if job.job_id in self._seen_ids:
                raise DuplicateJobId(job.job_id)
            self._seen_ids.add(job.job_id)
            job.queue = queue
            job.enqueue_time = self._clock.now_ms()
            self._queues[queue].append(job)

    def dequeue(self, queue: str, worker_id: str, lease_ms: int = DEFAULT_LEASE_MS) -> JobEnvelope | None:
        if lease_ms <= 0:
            raise ValueError("lease_ms must be positive")
        with self._mu:
            if queue not in self._queues:
                raise UnknownQueue(queue)
            pending = self._queues[queue]
            if not pending:
                return None
            job = pending.popleft()
            job.lease_worker = worker_id
            job.lease_expiry = self._clock.now_ms() + lease_ms
            self._leases[job.job_id] = job
            return job

    def complete(self, job_id: str) -> None:
        """Mark a job terminal so its lease can never resurrect it."""
        with self._mu:
            self._leases.pop(job_id, None)
            self._terminal.add(job_id)

    def reap_expired(self, now: int | None = None) -> list[ReapAction]:
        """Requeue first-time expired leases; drop repeat offenders."""
        actions: list[ReapAction] = []
        with self._mu:
            now = self._clock.now_ms() if now is None else now
            expired = [j for j in self._leases.values() if j.lease_expiry is not None and j.lease_expiry <= now]
            for job in expired:
                del self._leases[job.job_id]
                if job.config.requeued:
                    self._terminal.add(job.job_id)
                    actions.append(ReapAction(job, "dropped"))
                else:
                    job.config = replace(job.config, requeued=True)
                    job.lease_worker = None
                    job.lease_expiry = None
                    self._queues[job.queue].append(job)
                    actions.append(ReapAction(job, "requeued"))
        return actions

    def close_dispatch(self) -> None:
        with self._mu:
            self._dispatch_closed = True

    def drained(self) -> bool:
        """True once dispatch is closed and every job ever seen is terminal."""
        with self._mu:
            return self._dispatch_closed and len(self._terminal) == len(self._seen_ids)

    def stats(self) -> dict:
        with self._mu:
            return {
                "queued": {q: len(v) for q, v in self._queues.items()},
                "leased": len(self._leases),
                "terminal": len(self._terminal),
                "seen": len(self._seen_ids),
                "dispatch-closed": self._dispatch_closed,
            }

    # -- barrier ---------------------------------------------------------

    def sync_arrive(self, tag: str, party_size: int) -> bool:
        """Count one arrival; returns True when the tag is (now) released."""
        if party_size < 1:
            raise PartySizeMismatch(f"party size must be positive, got {party_size}")
        with self._mu:
            state = self._sync.get(tag)
            if state is None:
                state = SyncState(tag=tag, party_size=party_size, event=self._clock.new_event())
                self._sync[tag] = state
            elif state.party_size != party_size:
                raise PartySizeMismatch(
                    f"tag {tag!r}: party size {party_size} != existing {state.party_size}"
                )
            state.arrivals += 1
            if not state.released and state.arrivals >= state.party_size:
                state.released = True
                state.release_time = self._clock.now_ms()
                state.event.set()
            return state.released

    def await_release(self, tag: str, timeout_ms: int | None) -> tuple[bool, int | None]:
        """Block until the tag releases; (released?, release-time)."""
        with self._mu:
            state = self._sync.get(tag)
            if state is None:
                raise UnknownTag(tag)
            event = state.event
        released = event.wait_ms(timeout_ms)
        with self._mu:
            return (state.released if released else False), state.release_time

    def sync_state(self, tag: str) -> SyncState:
        with self._mu:
            state = self._sync.get(tag)
            if state is None:
                raise UnknownTag(tag)
            return state
