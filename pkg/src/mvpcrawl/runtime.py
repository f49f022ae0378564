"""Clock and event abstractions plus a deterministic cooperative runtime.

Pipeline code (workers, broker, scheduler) blocks only through the
``Clock`` interface: ``now_ms``/``sleep`` and events from ``new_event``.
Under :class:`SystemClock` those map to wall time and ``threading``.
Under :class:`VirtualClock` the same code runs as activities of a
:class:`VirtualRuntime`: a discrete-event scheduler that executes exactly
one activity at a time and advances virtual time only when every
activity is blocked, so a whole multi-worker simulation is a pure
function of its inputs.
"""

from __future__ import annotations

import heapq
import itertools
import threading
import time
import traceback


class DeadlockError(RuntimeError):
    def __init__(self, blocked: list[str]):
        super().__init__(f"all activities blocked forever: {blocked}")
        self.blocked = blocked


class ActivityError(RuntimeError):
    def __init__(self, name: str, error: BaseException, tb: str):
        super().__init__(f"activity {name!r} failed: {error!r}\n{tb}")
        self.activity = name
        self.original = error


class _Cancelled(BaseException):
    """Unwinds activity threads when the runtime aborts."""


class RealEvent:
    def __init__(self) -> None:
        self._ev = threading.Event()

    def set(self) -> None:
        self._ev.set()

    def is_set(self) -> bool:
        return self._ev.is_set()

    def wait_ms(self, timeout_ms: int | None) -> bool:
        if timeout_ms is None:
            self._ev.wait()
            return True
        return self._ev.wait(timeout_ms / 1000.0)


class SystemClock:
    """Wall-clock implementation used by the distributed deployment."""

    def now_ms(self) -> int:
        return int(time.time() * 1000)

    def sleep(self, ms: int) -> None:
        if ms > 0:
            time.sleep(ms / 1000.0)

    def new_event(self) -> RealEvent:
        return RealEvent()


class _Activity:
    def __init__(self, runtime: "VirtualRuntime", name: str, fn) -> None:
        self.runtime = runtime
        self.name = name
        self.fn = fn
        self.go = threading.Event()
        self.finished = False
        self.error: BaseException | None = None
        self.error_tb = ""
        self.wake_reason = "timer"
        self.block_token = 0
        self.thread = threading.Thread(target=self._run, name=f"sim:{name}", daemon=True)

    def _run(self) -> None:
        self.go.wait()
        self.go.clear()
        try:
            if not self.runtime._aborted:
                self.fn()
        except _Cancelled:
            pass
        except BaseException as exc:
            self.error = exc
            self.error_tb = traceback.format_exc()
        finally:
            self.finished = True
            self.runtime._yielded.set()


class VirtualEvent:
    def __init__(self, runtime: "VirtualRuntime") -> None:
        self._rt = runtime
        self._set = False
        self._waiters: list[_Activity] = []

    def is_set(self) -> bool:
        return self._set

    def set(self) -> None:
        rt = self._rt
        with rt._mu:
            if self._set:
                return
            self._set = True
            # Wake waiters at the current instant, in arrival order.
            for act in self._waiters:
                act.block_token += 1
                act.wake_reason = "event"
                heapq.heappush(rt._heap, (rt._now, next(rt._seq), act.block_token, act))
            self._waiters.clear()

    def wait_ms(self, timeout_ms: int | None) -> bool:
        rt = self._rt
        act = rt._require_current()
        with rt._mu:
            if self._set:
                return True
            self._waiters.append(act)
            act.block_token += 1
            act.wake_reason = "timer"
            if timeout_ms is not None:
                deadline = rt._now + max(0, int(timeout_ms))
                heapq.heappush(rt._heap, (deadline, next(rt._seq), act.block_token, act))
        rt._park(act)
        if act.wake_reason == "event":
            return True
        with rt._mu:
            if act in self._waiters:
                self._waiters.remove(act)
            return self._set


class VirtualRuntime:
    """Deterministic single-token scheduler over thread-backed activities.

    Ready entries are ordered by (virtual time, creation sequence), so
    identical programs always interleave identically.
    """

    def __init__(self, start_ms: int = 0) -> None:
        self._now = start_ms
        self._mu = threading.Lock()
        self._heap: list[tuple[int, int, int, _Activity]] = []
        self._seq = itertools.count()
        self._yielded = threading.Event()
        self._activities: list[_Activity] = []
        self._current: _Activity | None = None
        self._aborted = False

    # -- control side ------------------------------------------------------

    def spawn(self, name: str, fn) -> None:
        act = _Activity(self, name, fn)
        self._activities.append(act)
        with self._mu:
            act.block_token += 1
            heapq.heappush(self._heap, (self._now, next(self._seq), act.block_token, act))
        act.thread.start()

    def run(self) -> None:
        """Drive activities until every one of them finishes."""
        try:
            while True:
                act = None
                with self._mu:
                    while self._heap:
                        t, _seq, token, cand = heapq.heappop(self._heap)
                        if cand.finished or token != cand.block_token:
                            continue
                        self._now = max(self._now, t)
                        act = cand
                        break
                if act is None:
                    blocked = [a.name for a in self._activities if not a.finished]
                    if blocked:
                        raise DeadlockError(blocked)
                    return
                self._current = act
                self._yielded.clear()
                act.go.set()
                self._yielded.wait()
                self._current = None
                if act.error is not None:
                    raise ActivityError(act.name, act.error, act.error_tb)
        except BaseException:
            self._abort()
            raise

    def _abort(self) -> None:
        self._aborted = True
        for act in self._activities:
            if not act.finished:
                act.go.set()
        for act in self._activities:
            act.thread.join(timeout=5)

    # -- activity side -----------------------------------------------------

    def _require_current(self) -> _Activity:
        act = self._current
        if act is None or act.thread is not threading.current_thread():
            raise RuntimeError("runtime primitives may only be called from the running activity")
        return act

    def _park(self, act: _Activity) -> None:
        self._yielded.set()
        act.go.wait()
        act.go.clear()
        if self._aborted:
            raise _Cancelled()

    def now_ms(self) -> int:
        return self._now

    def sleep(self, ms: int) -> None:
        act = self._require_current()
        with self._mu:
            act.block_token += 1
            act.wake_reason = "timer"
            deadline = self._now + max(0, int(ms))
            heapq.heappush(self._heap, (deadline, next(self._seq), act.block_token, act))
        self._park(act)

    def new_event(self) -> VirtualEvent:
        return VirtualEvent(self)


class VirtualClock:
    """Clock facade over a :class:`VirtualRuntime` for pipeline code."""

    def __init__(self, runtime: VirtualRuntime) -> None:
        self.runtime = runtime

    def now_ms(self) -> int:
        return self.runtime.now_ms()

    def sleep(self, ms: int) -> None:
        self.runtime.sleep(ms)

    def new_event(self) -> VirtualEvent:
        return self.runtime.new_event()
