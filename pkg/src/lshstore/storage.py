"""Uniform asynchronous random-read interface over three backends: in-memory
buffers, files, and a simulated-latency device.

All backends expose the same contract: non-blocking submit_read with
backpressure, poll_completions for finished reads, wait() to block until one
is ready, a clock (now_ns), and I/O statistics. The simulated backend runs on
a virtual clock: a read costs request_overhead at submission plus
read_latency of service time on one of max_parallel device slots, and
compute time is injected via charge_ns so simulation results are independent
of host speed.
"""

from __future__ import annotations

import heapq
import os
import time
from collections import deque
from dataclasses import dataclass

import numpy as np

from .blocks import BLOCK_SIZE

DEFAULT_QUEUE_CAPACITY = 128

# Completion-window length for the sliding-window IOPS and latency numbers.
_STATS_WINDOW = 8192


class StorageError(Exception):
    """Invalid request or use of a closed backend."""


@dataclass(frozen=True)
class ReadRequest:
    """One random read: length must be a positive multiple of 512 and the
    span must lie inside the device extent. The ticket is echoed back with
    the completion and is the caller's correlation handle."""

    address: int
    length: int
    ticket: int


@dataclass(frozen=True)
class SimConfig:
    """Simulated device: read_latency_ns of service time per I/O at queue
    depth 1, max_parallel internal slots, request_overhead_ns of CPU cost
    charged to the submitter per submission."""

    read_latency_ns: int = 100_000
    max_parallel: int = 32
    request_overhead_ns: int = 1_000

    def __post_init__(self):
        if self.read_latency_ns <= 0 or self.max_parallel <= 0 or self.request_overhead_ns < 0:
            raise StorageError(f"invalid simulation config {self}")


@dataclass
class IoStats:
    submitted: int
    completed: int
    iops: float
    mean_latency_ns: float
    p95_latency_ns: float
    peak_in_flight: int


class _SegmentMap:
    """Maps a flat device address space onto ordered segments (buffers or
    files). Reads may not cross a segment boundary."""

    def __init__(self, lengths):
        for length in lengths:
            if length < 0 or length % BLOCK_SIZE:
                raise StorageError(f"segment length {length} not a multiple of {BLOCK_SIZE}")
        self.starts = []
        total = 0
        for length in lengths:
            self.starts.append(total)
            total += length
        self.extent = total
        self.lengths = list(lengths)

    def locate(self, address: int, length: int):
        """(segment index, offset) for a span, validating bounds."""
        if length < BLOCK_SIZE or length % BLOCK_SIZE:
            raise StorageError(f"read length {length} not a positive multiple of {BLOCK_SIZE}")
        if address < 0 or address + length > self.extent:
            raise StorageError(
                f"read [{address}, {address + length}) outside device extent {self.extent}"
            )
        # Segments are few (two per index); linear scan beats bisect setup.
        for i in reversed(range(len(self.starts))):
            if address >= self.starts[i]:
                if address + length > self.starts[i] + self.lengths[i]:
                    raise StorageError("read crosses a segment boundary")
                return i, address - self.starts[i]
        raise StorageError("unreachable")


class StorageBackend:
    """Common bookkeeping: pending queue, stats, clock. Subclasses implement
    the data source and, for the simulator, the clock."""

    def __init__(self, segment_lengths, queue_capacity: int = DEFAULT_QUEUE_CAPACITY):
        if queue_capacity < 1:
            raise StorageError(f"queue capacity must be >= 1, got {queue_capacity}")
        self._map = _SegmentMap(segment_lengths)
        self.queue_capacity = queue_capacity
        self._open = True
        self._in_flight = 0
        self._submitted = 0
        self._completed = 0
        self._peak_in_flight = 0
        self._latencies = deque(maxlen=_STATS_WINDOW)
        self._completion_times = deque(maxlen=_STATS_WINDOW)

    # -- clock -------------------------------------------------------------
    def now_ns(self) -> int:
        return time.monotonic_ns()

    def charge_ns(self, ns: int) -> None:
        """Account compute time against the backend clock. Real backends run
        on the wall clock, where compute has already elapsed; only the
        simulator advances anything here."""

    # -- contract ----------------------------------------------------------
    def extent(self) -> int:
        return self._map.extent

    def submit_read(self, req: ReadRequest) -> bool:
        """Queue one read. False means backpressure: the queue is at
        capacity and the caller should poll and retry. Invalid requests
        raise instead."""
        raise NotImplementedError

    def poll_completions(self, max_results: int = 0):
        """Up to max_results finished reads as (ticket, data) pairs, data a
        read-only uint8 array of the requested length. 0 means no limit."""
        raise NotImplementedError

    def wait(self) -> None:
        """Block until at least one completion is available, if any read is
        in flight."""
        raise NotImplementedError

    def close(self) -> None:
        self._open = False

    # -- accounting --------------------------------------------------------
    def _check_open(self):
        if not self._open:
            raise StorageError("backend is closed")

    def _note_submit(self):
        self._submitted += 1
        self._in_flight += 1
        self._peak_in_flight = max(self._peak_in_flight, self._in_flight)

    def _note_complete(self, submit_ns: int):
        now = self.now_ns()
        self._completed += 1
        self._in_flight -= 1
        self._latencies.append(now - submit_ns)
        self._completion_times.append(now)

    def stats(self) -> IoStats:
        lat = np.fromiter(self._latencies, dtype=np.float64) if self._latencies else np.zeros(0)
        times = self._completion_times
        if len(times) >= 2 and times[-1] > times[0]:
            iops = (len(times) - 1) / ((times[-1] - times[0]) * 1e-9)
        else:
            iops = 0.0
        return IoStats(
            submitted=self._submitted,
            completed=self._completed,
            iops=iops,
            mean_latency_ns=float(lat.mean()) if lat.size else 0.0,
            p95_latency_ns=float(np.percentile(lat, 95)) if lat.size else 0.0,
            peak_in_flight=self._peak_in_flight,
        )


class MemoryBackend(StorageBackend):
    """Reads served straight from in-memory buffers. Completions become
    available on the poll after submission."""

    def __init__(self, buffers, queue_capacity: int = DEFAULT_QUEUE_CAPACITY):
        self._buffers = [np.frombuffer(b, dtype=np.uint8) if isinstance(b, (bytes, bytearray, memoryview)) else np.asarray(b, dtype=np.uint8) for b in buffers]
        super().__init__([len(b) for b in self._buffers], queue_capacity)
        self._pending = deque()

    def submit_read(self, req: ReadRequest) -> bool:
        self._check_open()
        seg, off = self._map.locate(req.address, req.length)
        if self._in_flight >= self.queue_capacity:
            return False
        self._pending.append((req.ticket, seg, off, req.length, self.now_ns()))
        self._note_submit()
        return True

    def poll_completions(self, max_results: int = 0):
        self._check_open()
        out = []
        limit = max_results if max_results > 0 else len(self._pending)
        while self._pending and len(out) < limit:
            ticket, seg, off, length, t0 = self._pending.popleft()
            data = self._buffers[seg][off:off + length]
            data = data.view()
            data.flags.writeable = False
            out.append((ticket, data))
            self._note_complete(t0)
        return out

    def wait(self) -> None:
        # Pending reads are always ready by the next poll.
        return


class FileBackend(StorageBackend):
    """Reads served by positioned reads against immutable files. Submission
    only queues; the read happens at poll time, keeping submit non-blocking."""

    def __init__(self, paths, queue_capacity: int = DEFAULT_QUEUE_CAPACITY):
        self._fds = [os.open(str(p), os.O_RDONLY) for p in paths]
        lengths = [os.fstat(fd).st_size for fd in self._fds]
        super().__init__(lengths, queue_capacity)
        self._pending = deque()

    def submit_read(self, req: ReadRequest) -> bool:
        self._check_open()
        seg, off = self._map.locate(req.address, req.length)
        if self._in_flight >= self.queue_capacity:
            return False
        self._pending.append((req.ticket, seg, off, req.length, self.now_ns()))
        self._note_submit()
        return True

    def poll_completions(self, max_results: int = 0):
        self._check_open()
        out = []
        limit = max_results if max_results > 0 else len(self._pending)
        while self._pending and len(out) < limit:
            ticket, seg, off, length, t0 = self._pending.popleft()
            raw = os.pread(self._fds[seg], length, off)
            if len(raw) != length:
                raise StorageError(f"short read: wanted {length} bytes, got {len(raw)}")
            out.append((ticket, np.frombuffer(raw, dtype=np.uint8)))
            self._note_complete(t0)
        return out

    def wait(self) -> None:
        return

    def close(self) -> None:
        if self._open:
            for fd in self._fds:
                os.close(fd)
        super().close()


class SimBackend(StorageBackend):
    """Simulated device over in-memory data, on a virtual clock.

    Model: the device has max_parallel identical slots; a read occupies the
    earliest-free slot for read_latency_ns (FIFO admission), so sustained
    throughput saturates at max_parallel / read_latency. Submission charges
    request_overhead_ns to the virtual clock immediately, modeling the CPU
    cost of issuing the I/O. wait() advances the clock to the next
    completion. charge_ns models query compute on the same clock.
    """

    def __init__(self, buffers, config: SimConfig = SimConfig(),
                 queue_capacity: int = DEFAULT_QUEUE_CAPACITY):
        self._buffers = [np.frombuffer(b, dtype=np.uint8) if isinstance(b, (bytes, bytearray, memoryview)) else np.asarray(b, dtype=np.uint8) for b in buffers]
        super().__init__([len(b) for b in self._buffers], queue_capacity)
        self.config = config
        self._now = 0
        self._seq = 0
        self._slot_free = [0] * config.max_parallel
        heapq.heapify(self._slot_free)
        self._done = []  # heap of (done_ns, seq, ticket, seg, off, length, submit_ns)

    def now_ns(self) -> int:
        return self._now

    def charge_ns(self, ns: int) -> None:
        if ns < 0:
            raise StorageError("cannot charge negative time")
        self._now += int(ns)

    def submit_read(self, req: ReadRequest) -> bool:
        self._check_open()
        seg, off = self._map.locate(req.address, req.length)
        if self._in_flight >= self.queue_capacity:
            return False
        self._now += self.config.request_overhead_ns
        submit_ns = self._now
        free_at = heapq.heappop(self._slot_free)
        start = max(self._now, free_at)
        done = start + self.config.read_latency_ns
        heapq.heappush(self._slot_free, done)
        self._seq += 1
        heapq.heappush(self._done, (done, self._seq, req.ticket, seg, off, req.length, submit_ns))
        self._note_submit()
        return True

    def poll_completions(self, max_results: int = 0):
        self._check_open()
        out = []
        limit = max_results if max_results > 0 else len(self._done)
        while self._done and len(out) < limit and self._done[0][0] <= self._now:
            done, _, ticket, seg, off, length, submit_ns = heapq.heappop(self._done)
            data = self._buffers[seg][off:off + length]
            data = data.view()
            data.flags.writeable = False
            out.append((ticket, data))
            # Latency accounting runs on the virtual clock.
            self._completed += 1
            self._in_flight -= 1
            self._latencies.append(done - submit_ns)
            self._completion_times.append(done)
        return out

    def wait(self) -> None:
        if self._done and self._done[0][0] > self._now:
            self._now = self._done[0][0]
