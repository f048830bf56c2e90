"""Serial byte channels paced at their baud rate (8N1: 10 bits per byte)."""
from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass
from typing import Callable

from trackline.simnet.clock import VirtualClock

BITS_PER_BYTE = 10


class ChannelClosed(ConnectionError):
    pass


@dataclass(frozen=True)
class TraceEntry:
    time: float
    direction: str
    data: bytes


class _Link:
    """One direction of a channel: a FIFO of in-flight bytes."""

    def __init__(self, clock: VirtualClock, rate: int, label: str, trace: list[TraceEntry]):
        self.clock = clock
        self.byte_time = BITS_PER_BYTE / rate
        self.label = label
        self.trace = trace
        self.free_at = clock.now
        # each segment is (first_byte_start_time, data, bytes_already_consumed)
        self._segments: deque[list] = deque()
        self.listener: Callable[[], None] | None = None
        self.arrivals: list[float] | None = None

    def send(self, data: bytes) -> float:
        if not data:
            return self.clock.now
        start = max(self.clock.now, self.free_at)
        self.free_at = start + len(data) * self.byte_time
        self._segments.append([start, bytes(data), 0])
        self.trace.append(TraceEntry(self.clock.now, self.label, bytes(data)))
        if self.arrivals is not None:
            self.arrivals.extend(start + (k + 1) * self.byte_time for k in range(len(data)))
        self.clock.schedule(self.free_at, self._notify)
        return self.free_at

    def _notify(self):
        if self.listener is not None:
            self.listener()

    def _arrived(self, seg) -> int:
        # same expression as the scheduled notify time, so the last byte of a
        # write has always landed when its notification fires
        start, data, _ = seg
        now, bt = self.clock.now, self.byte_time
        n = max(0, min(len(data), math.floor((now - start) / bt)))
        while n < len(data) and start + (n + 1) * bt <= now:
            n += 1
        while n > 0 and start + n * bt > now:
            n -= 1
        return n

    def available(self) -> int:
        total = 0
        for seg in self._segments:
            n = self._arrived(seg)
            total += n - seg[2]
            if n < len(seg[1]):
                break
        return total

    def receive(self) -> bytes:
        out = bytearray()
        while self._segments:
            seg = self._segments[0]
            n = self._arrived(seg)
            out += seg[1][seg[2] : n]
            seg[2] = n
            if n < len(seg[1]):
                break
            self._segments.popleft()
        return bytes(out)


class Endpoint:
    """One side of a :class:`ByteChannel`; writes go to the peer."""

    def __init__(self, channel: ByteChannel, tx: _Link, rx: _Link):
        self.channel = channel
        self._tx = tx
        self._rx = rx

    @property
    def closed(self) -> bool:
        return self.channel.closed

    @property
    def clock(self) -> VirtualClock:
        return self.channel.clock

    def write(self, data: bytes) -> float:
        """Queue ``data`` for transmission; returns the time the last byte lands."""
        if self.channel.closed:
            raise ChannelClosed(f"channel {self.channel.name} is closed")
        return self._tx.send(data)

    def available(self) -> int:
        return self._rx.available()

    def read(self) -> bytes:
        """Every byte that has fully arrived by now."""
        return self._rx.receive()

    def on_receive(self, callback: Callable[[], None] | None) -> None:
        """Call ``callback`` each time a write from the peer finishes landing."""
        self._rx.listener = callback


class ByteChannel:
    """Full-duplex serial line between endpoints ``a`` and ``b``."""

    def __init__(self, clock: VirtualClock, rate: int, name: str = "serial", record_arrivals=False):
        if rate <= 0:
            raise ValueError("baud rate must be positive")
        self.clock = clock
        self.rate = rate
        self.name = name
        self.closed = False
        self.trace: list[TraceEntry] = []
        ab = _Link(clock, rate, "a>b", self.trace)
        ba = _Link(clock, rate, "b>a", self.trace)
        if record_arrivals:
            ab.arrivals, ba.arrivals = [], []
        self._links = {"a>b": ab, "b>a": ba}
        self.a = Endpoint(self, tx=ab, rx=ba)
        self.b = Endpoint(self, tx=ba, rx=ab)

    def arrivals(self, direction: str) -> list[float]:
        got = self._links[direction].arrivals
        if got is None:
            raise RuntimeError("channel was created without record_arrivals=True")
        return list(got)

    def close(self) -> None:
        self.closed = True

    def hexdump(self) -> str:
        """Deterministic text dump of every write on the channel."""
        lines = []
        for e in self.trace:
            text = "".join(chr(b) if 32 <= b < 127 else "." for b in e.data)
            lines.append(f"{e.time:.6f} {self.name} {e.direction} {e.data.hex(' ')} |{text}|")
        return "\n".join(lines) + ("\n" if lines else "")
