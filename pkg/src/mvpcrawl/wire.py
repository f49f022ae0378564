"""TCP service and client for the broker.

Framing: 4-byte big-endian length prefix, then one UTF-8 JSON object.
Requests carry ``id`` (client-chosen, echoed back), ``type``, and the
type's payload fields; one request per message. Responses use types
ACK, JOB, RELEASED, EMPTY, or ERROR and are correlated by ``id``.
AWAIT_RELEASE may block server-side for a long time; each request is
served on its own thread so a waiting client never stalls other
traffic, even on the same connection.

The full field-by-field message reference lives in docs/protocol.md.
"""

from __future__ import annotations

import json
import logging
import socket
import socketserver
import struct
import threading

from .broker import (
    Broker,
    BrokerError,
    DEFAULT_LEASE_MS,
    JobEnvelope,
)
from .runtime import SystemClock

log = logging.getLogger(__name__)

DEFAULT_PORT = 7400
_HEADER = struct.Struct(">I")
MAX_FRAME = 4 * 1024 * 1024


class WireError(Exception):
    pass


def send_message(sock: socket.socket, obj: dict) -> None:
    body = json.dumps(obj, separators=(",", ":")).encode("utf-8")
    sock.sendall(_HEADER.pack(len(body)) + body)


def recv_message(sock: socket.socket) -> dict | None:
    header = _recv_exact(sock, _HEADER.size)
    if header is None:
        return None
    (length,) = _HEADER.unpack(header)
    if length > MAX_FRAME:
        raise WireError(f"frame of {length} bytes exceeds limit")
    body = _recv_exact(sock, length)
    if body is None:
        return None
    return json.loads(body.decode("utf-8"))


def _recv_exact(sock: socket.socket, n: int) -> bytes | None:
    buf = b""
    while len(buf) < n:
        chunk = sock.recv(n - len(buf))
        if not chunk:
            return None
        buf += chunk
    return buf


class _Handler(socketserver.BaseRequestHandler):
    def handle(self) -> None:
        sock = self.request
        write_lock = threading.Lock()
        try:
            while True:
                msg = recv_message(sock)
                if msg is None:
                    return
                threading.Thread(
                    target=self._serve_one, args=(sock, write_lock, msg), daemon=True
                ).start()
        except (ConnectionError, WireError, json.JSONDecodeError, OSError):
            return

    def _serve_one(self, sock, write_lock, msg: dict) -> None:
        broker: Broker = self.server.broker  # type: ignore[attr-defined]
        msg_id = msg.get("id")
        try:
            reply = _dispatch(broker, msg)
        except BrokerError as exc:
            reply = {"type": "ERROR", "code": exc.code, "message": str(exc)}
        except Exception as exc:  # defensive: report, don't kill the connection
            reply = {"type": "ERROR", "code": "internal", "message": repr(exc)}
        reply["id"] = msg_id
        try:
            with write_lock:
                send_message(sock, reply)
        except (ConnectionError, OSError):
            pass


def _dispatch(broker: Broker, msg: dict) -> dict:
    mtype = msg.get("type")
    if mtype == "ENQUEUE":
        job = JobEnvelope.from_json(msg["job"])
        broker.enqueue(msg["queue"], job)
        return {"type": "ACK"}
    if mtype == "DEQUEUE":
        job = broker.dequeue(msg["queue"], msg["worker-id"], msg.get("lease-ms", DEFAULT_LEASE_MS))
        if job is None:
            return {"type": "EMPTY", "drained": broker.drained()}
        return {"type": "JOB", "job": job.to_json()}
    if mtype == "SYNC_ARRIVE":
        released = broker.sync_arrive(msg["tag"], msg["party-size"])
        return {"type": "ACK", "released": released}
    if mtype == "AWAIT_RELEASE":
        released, release_time = broker.await_release(msg["tag"], msg.get("timeout-ms"))
        return {"type": "RELEASED", "released": released, "release-time": release_time}
    if mtype == "COMPLETE":
        broker.complete(msg["job-id"])
        return {"type": "ACK"}
    if mtype == "CLOSE_DISPATCH":
        broker.close_dispatch()
        return {"type": "ACK"}
    if mtype == "STATS":
        return {"type": "ACK", "stats": broker.stats()}
    raise BrokerError(f"unknown message type: {mtype!r}")


class BrokerServer(socketserver.ThreadingTCPServer):
    allow_reuse_address = True
    daemon_threads = True

    def __init__(self, addr: tuple[str, int], broker: Broker | None = None) -> None:
        super().__init__(addr, _Handler)
        self.broker = broker if broker is not None else Broker(SystemClock())

    @property
    def address(self) -> tuple[str, int]:
        return self.server_address  # type: ignore[return-value]


def serve_forever(host: str = "127.0.0.1", port: int = DEFAULT_PORT,
                  broker: Broker | None = None) -> BrokerServer:
    server = BrokerServer((host, port), broker)
    thread = threading.Thread(target=server.serve_forever, daemon=True, name="broker-server")
    thread.start()
    log.info("broker listening on %s:%s", *server.address)
    return server


class BrokerClient:
    """Blocking client presenting the in-process Broker interface.

    One socket per client; a lock serializes request/response pairs, so
    share one client per worker thread rather than across threads.
    Connection establishment retries 3 times with exponential backoff
    starting at 500 ms.
    """

    RETRIES = 3
    BACKOFF_MS = 500

    def __init__(self, address: str, clock=None) -> None:
        self.address = address
        self.clock = clock if clock is not None else SystemClock()
        self._mu = threading.Lock()
        self._next_id = 0
        self._drained = False
        self._sock = self._connect()

    def _connect(self) -> socket.socket:
        host, _, port = self.address.rpartition(":")
        host = host or "127.0.0.1"
        last_error: Exception | None = None
        backoff = self.BACKOFF_MS
        for attempt in range(self.RETRIES + 1):
            try:
                return socket.create_connection((host, int(port)), timeout=30)
            except OSError as exc:
                last_error = exc
                if attempt < self.RETRIES:
                    log.warning("broker connect failed (%s), retrying in %d ms", exc, backoff)
                    self.clock.sleep(backoff)
                    backoff *= 2
        raise WireError(f"cannot reach broker at {self.address}: {last_error}")

    def _call(self, msg: dict, timeout_s: float | None = 60.0) -> dict:
        with self._mu:
            self._next_id += 1
            msg["id"] = self._next_id
            self._sock.settimeout(timeout_s)
            send_message(self._sock, msg)
            while True:
                reply = recv_message(self._sock)
                if reply is None:
                    raise WireError("broker closed the connection")
                if reply.get("id") == msg["id"]:
                    return reply

    @staticmethod
    def _check(reply: dict) -> dict:
        if reply["type"] == "ERROR":
            raise BrokerError(f"{reply.get('code')}: {reply.get('message')}")
        return reply

    def enqueue(self, queue: str, job: JobEnvelope) -> None:
        self._check(self._call({"type": "ENQUEUE", "queue": queue, "job": job.to_json()}))

    def dequeue(self, queue: str, worker_id: str, lease_ms: int = DEFAULT_LEASE_MS) -> JobEnvelope | None:
        reply = self._check(
            self._call({"type": "DEQUEUE", "queue": queue, "worker-id": worker_id, "lease-ms": lease_ms})
        )
        if reply["type"] == "EMPTY":
            self._drained = reply.get("drained", False)
            return None
        return JobEnvelope.from_json(reply["job"])

    def complete(self, job_id: str) -> None:
        self._check(self._call({"type": "COMPLETE", "job-id": job_id}))

    def sync_arrive(self, tag: str, party_size: int) -> bool:
        reply = self._check(self._call({"type": "SYNC_ARRIVE", "tag": tag, "party-size": party_size}))
        return reply.get("released", False)

    def await_release(self, tag: str, timeout_ms: int | None) -> tuple[bool, int | None]:
        server_timeout = None if timeout_ms is None else (timeout_ms / 1000.0) + 30.0
        reply = self._check(
            self._call({"type": "AWAIT_RELEASE", "tag": tag, "timeout-ms": timeout_ms},
                       timeout_s=server_timeout)
        )
        return reply.get("released", False), reply.get("release-time")

    def close_dispatch(self) -> None:
        self._check(self._call({"type": "CLOSE_DISPATCH"}))

    def stats(self) -> dict:
        return self._check(self._call({"type": "STATS"}))["stats"]

    def drained(self) -> bool:
        # Updated from the hint on the last EMPTY reply.
        return self._drained

    def close(self) -> None:
        try:
            self._sock.close()
        except OSError:
            pass
