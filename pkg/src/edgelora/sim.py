"""Deterministic discrete-event core: clock, radio medium, throttled links.

One engine serves both modes: pacing 0 runs as fast as possible (tests,
batch runs), pacing 1 tracks the wall clock (interactive demo). Pacing only
stretches wall time; the event trace is identical for a given seed.
"""

from __future__ import annotations

import base64
import hashlib
import heapq
import json
import queue
import random
import threading
import time
from dataclasses import dataclass, field
from typing import Any, Callable

US_PER_S = 1_000_000


class SchedulingError(ValueError):
    pass


def child_seed(master_seed: int, name: str) -> int:
    """Stable per-subsystem seed; sha256 keeps it independent of hash randomization."""
    digest = hashlib.sha256(f"{master_seed}:{name}".encode()).digest()
    return int.from_bytes(digest[:8], "big")


class SimClock:
    def __init__(self, pacing: float = 0.0):
        self.now_us = 0
        self.pacing = pacing

    def advance(self, t_us: int) -> None:
        if t_us < self.now_us:
            raise SchedulingError(f"clock moved backwards: {t_us} < {self.now_us}")
        self.now_us = t_us


class Engine:
    """Event loop with (timestamp, insertion-sequence) dispatch order."""

    def __init__(self, seed: int, pacing: float = 0.0):
        self.seed = seed
        self.clock = SimClock(pacing)
        self._heap: list[tuple[int, int, Callable, tuple]] = []
        self._seq = 0
        self._trace: list[tuple[int, int, str]] = []
        self._commands: queue.Queue[tuple[Callable, _CommandResult]] = queue.Queue()
        self.stop_requested = threading.Event()

    @property
    def now_us(self) -> int:
        return self.clock.now_us

    def rng(self, name: str) -> random.Random:
        return random.Random(child_seed(self.seed, name))

    def schedule(self, at_us: int, fn: Callable, *args: Any) -> None:
        if at_us < self.now_us:
            raise SchedulingError(
                f"cannot schedule at {at_us} before now {self.now_us}")
        heapq.heappush(self._heap, (at_us, self._seq, fn, args))
        self._seq += 1

    def schedule_in(self, delay_us: int, fn: Callable, *args: Any) -> None:
        self.schedule(self.now_us + delay_us, fn, *args)

    def _dispatch_one(self) -> None:
        t_us, seq, fn, args = heapq.heappop(self._heap)
        self.clock.advance(t_us)
        self._trace.append((t_us, seq, getattr(fn, "__qualname__", repr(fn))))
        fn(*args)

    def run_until(self, t_us: int) -> int:
        """Process every event with timestamp <= t_us; returns the count processed."""
        processed = 0
        while self._heap and self._heap[0][0] <= t_us:
            self._dispatch_one()
            processed += 1
        self.clock.advance(max(t_us, self.now_us))
        return processed

    def run_realtime(self, until_us: int) -> int:
        """Wall-clock paced run; drains the command queue while waiting."""
        pacing = self.clock.pacing
        wall_anchor = time.monotonic() - self.now_us * pacing / US_PER_S
        processed = 0
        while not self.stop_requested.is_set():
            self.drain_commands()
            if not self._heap or self._heap[0][0] > until_us:
                break
            next_t = self._heap[0][0]
            wake_at = wall_anchor + next_t * pacing / US_PER_S
            remaining = wake_at - time.monotonic()
            if remaining > 0:
                time.sleep(min(remaining, 0.02))
                continue
            self._dispatch_one()
            processed += 1
        self.drain_commands()
        if not self.stop_requested.is_set():
            self.clock.advance(max(until_us, self.now_us))
        return processed

    def submit(self, fn: Callable[[], Any]) -> "_CommandResult":
        """Thread-safe: run fn on the loop between events; returns a waitable result."""
        result = _CommandResult()
        self._commands.put((fn, result))
        return result

    def drain_commands(self) -> None:
        while True:
            try:
                fn, result = self._commands.get_nowait()
            except queue.Empty:
                return
            try:
                result.set(fn())
            except Exception as exc:  # surfaced to the submitting thread
                result.set_error(exc)

    def trace_hash(self) -> str:
        h = hashlib.sha256()
        for entry in self._trace:
            h.update(repr(entry).encode())
        return h.hexdigest()

    @property
    def trace_len(self) -> int:
        return len(self._trace)


class _CommandResult:
    def __init__(self):
        self._done = threading.Event()
        self._value: Any = None
        self._error: Exception | None = None

    def set(self, value: Any) -> None:
        self._value = value
        self._done.set()

    def set_error(self, exc: Exception) -> None:
        self._error = exc
        self._done.set()

    def wait(self, timeout: float = 5.0) -> Any:
        if not self._done.wait(timeout):
            raise TimeoutError("engine did not apply the command in time")
        if self._error is not None:
            raise self._error
        return self._value


# --- backhaul envelopes -------------------------------------------------------

def make_envelope(type_: str, **fields: Any) -> dict:
    env = {"type": type_}
    env.update(fields)
    return env


def envelope_bytes(env: dict) -> bytes:
    """Canonical serialization; its length is what link throttling counts."""
    return json.dumps(env, sort_keys=True, separators=(",", ":")).encode()


def b64(data: bytes) -> str:
    return base64.b64encode(data).decode()


def unb64(text: str) -> bytes:
    return base64.b64decode(text)


# --- bandwidth-throttled links ------------------------------------------------

@dataclass
class LinkParams:
    """Shared by both directions of a configured link; mutable at runtime."""

    link_id: str
    a: str
    b: str
    bandwidth_bps: int  # bytes per second
    delay_us: int


@dataclass(eq=False)
class _InFlight:
    arrival_us: int
    env: dict
    nbytes: int
    frame_weight: int


class LinkChannel:
    """One direction of a link: FIFO serialization at the configured bandwidth."""

    def __init__(self, engine: Engine, params: LinkParams, src: str, dst: str,
                 on_bytes: Callable[[str, str, dict, int], None] | None = None):
        self.engine = engine
        self.params = params
        self.src = src
        self.dst = dst
        self.receiver: Callable[[dict], None] | None = None
        self._busy_until_us = 0
        self.in_flight: list[_InFlight] = []
        self.bytes_sent = 0
        self.messages_sent = 0
        self.peak_depth = 0
        self._on_bytes = on_bytes

    @property
    def channel_id(self) -> str:
        return f"{self.src}->{self.dst}"

    def send(self, env: dict, frame_weight: int = 0) -> int:
        """Schedule delivery; returns the arrival timestamp in microseconds.

        arrival = serialization start + nbytes/bandwidth + base delay, where
        serialization cannot begin before the previous message finished.
        Rate changes apply to messages sent after the change.
        """
        data = envelope_bytes(env)
        nbytes = len(data)
        now = self.engine.now_us
        tx_start = max(now, self._busy_until_us)
        tx_dur = (nbytes * US_PER_S + self.params.bandwidth_bps - 1) // self.params.bandwidth_bps
        self._busy_until_us = tx_start + tx_dur
        arrival = self._busy_until_us + self.params.delay_us
        entry = _InFlight(arrival, env, nbytes, frame_weight)
        self.in_flight.append(entry)
        self.peak_depth = max(self.peak_depth, len(self.in_flight))
        self.bytes_sent += nbytes
        self.messages_sent += 1
        if self._on_bytes is not None:
            self._on_bytes(self.channel_id, env.get("type", "?"), env, nbytes)
        self.engine.schedule(arrival, self._deliver, entry)
        return arrival

    def _deliver(self, entry: _InFlight) -> None:
        self.in_flight.remove(entry)
        if self.receiver is not None:
            self.receiver(entry.env)

    def queue_depth(self) -> int:
        return len(self.in_flight)

    def in_flight_frames(self) -> int:
        return sum(e.frame_weight for e in self.in_flight)


# --- radio medium ---------------------------------------------------------------

@dataclass
class RadioTx:
    device: str
    start_us: int
    airtime_us: int
    channel: int
    payload: bytes
    # gateway id -> rssi, for gateways where the signal arrived at all
    present_at: dict[str, float] = field(default_factory=dict)


class CoverageMatrix:
    def __init__(self, probs: dict[str, dict[str, float]]):
        for dev, row in probs.items():
            for gw, p in row.items():
                if not 0.0 <= p <= 1.0:
                    raise ValueError(f"coverage[{dev}][{gw}]={p} outside [0,1]")
        self._probs = probs

    def prob(self, device: str, gateway: str) -> float:
        return self._probs.get(device, {}).get(gateway, 0.0)

    def known_device(self, device: str) -> bool:
        return device in self._probs


class RadioMedium:
    """Coverage-probability reception with destructive same-channel collisions."""

    def __init__(self, engine: Engine, coverage: CoverageMatrix,
                 gateway_ids: list[str], airtime_us_per_byte: int,
                 rng: random.Random):
        self.engine = engine
        self.coverage = coverage
        self.gateway_ids = list(gateway_ids)
        self.airtime_us_per_byte = airtime_us_per_byte
        self.rng = rng
        self._receivers: dict[str, Callable[[bytes, int, float, int], None]] = {}
        self._history: list[RadioTx] = []
        self.tx_count = 0
        self.opportunities = 0
        self.coverage_losses = 0
        self.collision_losses = 0
        self.receptions = 0

    def attach_gateway(self, gw_id: str,
                       handler: Callable[[bytes, int, float, int], None]) -> None:
        self._receivers[gw_id] = handler

    def transmit(self, device: str, channel: int, payload: bytes) -> RadioTx:
        """All randomness (per-gateway presence, rssi) is drawn here, in gateway order."""
        if not self.coverage.known_device(device):
            raise ValueError(f"unknown device {device!r} in coverage matrix")
        airtime = len(payload) * self.airtime_us_per_byte
        tx = RadioTx(device, self.engine.now_us, airtime, channel, payload)
        for gw in self.gateway_ids:
            prob = self.coverage.prob(device, gw)
            self.opportunities += 1
            if self.rng.random() < prob:
                tx.present_at[gw] = -120.0 + 60.0 * prob * self.rng.random()
            else:
                self.coverage_losses += 1
        self.tx_count += 1
        self._history.append(tx)
        self.engine.schedule(tx.start_us + airtime, self.radio_deliver, tx)
        return tx

    def radio_deliver(self, tx: RadioTx) -> None:
        """Resolve receptions at end of airtime: erase overlapped signals."""
        end = tx.start_us + tx.airtime_us
        for gw, rssi in tx.present_at.items():
            collided = any(
                other is not tx
                and other.channel == tx.channel
                and gw in other.present_at
                and other.start_us < end
                and tx.start_us < other.start_us + other.airtime_us
                for other in self._history
            )
            if collided:
                self.collision_losses += 1
                continue
            self.receptions += 1
            handler = self._receivers.get(gw)
            if handler is not None:
                handler(tx.payload, tx.channel, rssi, self.engine.now_us)
        self._prune(end)

    def _prune(self, now_us: int) -> None:
        # An entry may be forgotten only once nothing unresolved (or future)
        # can still overlap it; unresolved transmissions all started <= now.
        unresolved_starts = [t.start_us for t in self._history
                             if t.start_us + t.airtime_us >= now_us]
        horizon = min(unresolved_starts) if unresolved_starts else now_us
        self._history = [t for t in self._history
                         if t.start_us + t.airtime_us > horizon]
