"""Simulated terminal: sensor stream, activation state machine, uplink source.

A device joins over the air, then (in e2ed mode) continues into the edge key
exchange before it starts sending FPort-1 sensor frames. Mode changes at
runtime reset the machine to Idle and re-join from scratch.
"""

from __future__ import annotations

import random
import struct
from dataclasses import dataclass, field
from enum import Enum

from . import crypto, frames

TEMP_RANGE = (-40.0, 85.0)
HUM_RANGE = (0.0, 100.0)
PRES_RANGE = (300.0, 1100.0)
INITIAL_READING = (22.0, 45.0, 1013.0)
WALK_STEPS = (0.2, 0.5, 0.3)

SENSOR_PAYLOAD_LEN = 12  # three little-endian 32-bit floats

JOIN_TIMEOUT_US = 3_000_000
MAX_JOIN_RETRIES = 5
JITTER_FRACTION = 0.01


class PayloadFormatError(ValueError):
    pass


@dataclass
class DeviceProfile:
    name: str
    dev_eui: bytes
    join_eui: bytes
    root_key: bytes
    mode: str  # "legacy" | "e2ed"
    period_ms: int
    payload_len: int
    channel: int = 0
    max_frames: int | None = None

    def __post_init__(self):
        if self.period_ms < 100:
            raise ValueError(f"period_ms must be >= 100, got {self.period_ms}")
        if self.payload_len < SENSOR_PAYLOAD_LEN:
            raise ValueError(
                f"payload_len must be >= {SENSOR_PAYLOAD_LEN}, got {self.payload_len}")
        if self.mode not in ("legacy", "e2ed"):
            raise ValueError(f"unknown device mode {self.mode!r}")


@dataclass(frozen=True)
class SensorReading:
    temperature: float
    humidity: float
    pressure: float
    t_us: int


class SensorWalk:
    """Bounded random walk starting from the fixed initial triple."""

    def __init__(self, rng: random.Random):
        self.rng = rng
        self._state: tuple[float, float, float] | None = None

    def next_reading(self, t_us: int) -> SensorReading:
        if self._state is None:
            self._state = INITIAL_READING
        else:
            t, h, p = self._state
            t = _clamp(t + self.rng.uniform(-WALK_STEPS[0], WALK_STEPS[0]), TEMP_RANGE)
            h = _clamp(h + self.rng.uniform(-WALK_STEPS[1], WALK_STEPS[1]), HUM_RANGE)
            p = _clamp(p + self.rng.uniform(-WALK_STEPS[2], WALK_STEPS[2]), PRES_RANGE)
            self._state = (t, h, p)
        return SensorReading(*self._state, t_us=t_us)


def _clamp(x: float, bounds: tuple[float, float]) -> float:
    return min(max(x, bounds[0]), bounds[1])


def pack_sensor_payload(reading: SensorReading, payload_len: int) -> bytes:
    """Float triple plus zero padding up to payload_len."""
    if payload_len < SENSOR_PAYLOAD_LEN:
        raise PayloadFormatError(
            f"payload_len {payload_len} below minimum {SENSOR_PAYLOAD_LEN}")
    packed = struct.pack("<fff", reading.temperature, reading.humidity,
                         reading.pressure)
    return packed + bytes(payload_len - SENSOR_PAYLOAD_LEN)


def parse_sensor_payload(payload: bytes) -> tuple[float, float, float]:
    """The machine-checkable 'in clear format' test.

    Accepts only a plausible sensor triple: finite floats inside the sensor's
    physical ranges, and all padding bytes zero. Raises PayloadFormatError
    otherwise (e.g. after decryption with the wrong key).
    """
    if len(payload) < SENSOR_PAYLOAD_LEN:
        raise PayloadFormatError(f"payload too short: {len(payload)}")
    t, h, p = struct.unpack("<fff", payload[:SENSOR_PAYLOAD_LEN])
    if not (TEMP_RANGE[0] <= t <= TEMP_RANGE[1]):
        raise PayloadFormatError(f"temperature {t} out of range")
    if not (HUM_RANGE[0] <= h <= HUM_RANGE[1]):
        raise PayloadFormatError(f"humidity {h} out of range")
    if not (PRES_RANGE[0] <= p <= PRES_RANGE[1]):
        raise PayloadFormatError(f"pressure {p} out of range")
    if any(payload[SENSOR_PAYLOAD_LEN:]):
        raise PayloadFormatError("nonzero padding")
    return t, h, p


@dataclass
class DeviceSession:
    dev_addr: int
    nwk_s_key: bytes
    app_s_key: bytes
    join_nonce: int
    fcnt_up: int = 0
    edge_keys: crypto.EdgeSessionKeys | None = None


def build_uplink(session: DeviceSession, reading: SensorReading,
                 payload_len: int) -> frames.UplinkFrame:
    """Encrypt a reading under the session's active key and bump the counter."""
    session.fcnt_up += 1
    key = (session.edge_keys.edge_s_enc_key if session.edge_keys is not None
           else session.app_s_key)
    plaintext = pack_sensor_payload(reading, payload_len)
    encrypted = frames.encrypt_payload(key, session.dev_addr, session.fcnt_up,
                                       frames.DIR_UP, plaintext)
    return frames.make_uplink(session.nwk_s_key, session.dev_addr,
                              session.fcnt_up, frames.FPORT_SENSOR_DATA,
                              encrypted)


class DeviceState(Enum):
    IDLE = "idle"
    JOIN_WAIT = "join_wait"
    ACTIVE_LEGACY = "active_legacy"
    EDGE_WAIT = "edge_wait"
    ACTIVE_EDGE = "active_edge"
    GAVE_UP = "gave_up"


@dataclass
class DownlinkMsg:
    """Control downlink delivered to the device radio (reliable, fixed delay)."""

    kind: str  # "join_accept" | "edge_accept"
    data: bytes
    echo_pub: bytes = b""


class EndDevice:
    """One terminal as a logical actor on the event loop."""

    def __init__(self, engine, medium, profile: DeviceProfile,
                 rng: random.Random, start_at_us: int = 0,
                 on_event=None):
        self.engine = engine
        self.medium = medium
        self.profile = profile
        self.rng = rng
        self.sensor = SensorWalk(rng)
        self.state = DeviceState.IDLE
        self.session: DeviceSession | None = None
        self.dev_nonce = 0
        self.frames_sent = 0
        self.start_at_us = start_at_us
        self.on_event = on_event or (lambda name, **kw: None)
        self._generation = 0
        self._join_attempts = 0
        self._edge_attempts = 0
        self._ephemeral: crypto.EcKeyPair | None = None
        self._anchor_us = 0
        self._next_tx_index = 0

    # -- lifecycle --------------------------------------------------------

    def start(self) -> None:
        self.engine.schedule(self.start_at_us, self._guarded, self._generation,
                             self._begin_join)

    def reset_activation(self) -> None:
        """Mode flip or manual reset: drop the session and re-join."""
        self._generation += 1
        self.state = DeviceState.IDLE
        self.session = None
        self._join_attempts = 0
        self._edge_attempts = 0
        self.frames_sent = 0
        self.engine.schedule_in(0, self._guarded, self._generation,
                                self._begin_join)

    def _guarded(self, generation: int, fn, *args) -> None:
        if generation == self._generation:
            fn(*args)

    # -- join -------------------------------------------------------------

    def _begin_join(self) -> None:
        if self._join_attempts >= MAX_JOIN_RETRIES:
            self.state = DeviceState.GAVE_UP
            self.on_event("join_gave_up", device=self.profile.name)
            return
        self._join_attempts += 1
        self.dev_nonce += 1
        req = frames.make_join_request(self.profile.root_key,
                                       self.profile.join_eui,
                                       self.profile.dev_eui, self.dev_nonce)
        self.state = DeviceState.JOIN_WAIT
        self.medium.transmit(self.profile.name, self.profile.channel,
                             frames.encode_join_request(req))
        self.engine.schedule_in(JOIN_TIMEOUT_US, self._guarded,
                                self._generation, self._join_timeout,
                                self.dev_nonce)

    def _join_timeout(self, nonce: int) -> None:
        if self.state is DeviceState.JOIN_WAIT and nonce == self.dev_nonce:
            self._begin_join()

    def on_downlink(self, msg: DownlinkMsg) -> None:
        if msg.kind == "join_accept" and self.state is DeviceState.JOIN_WAIT:
            self._handle_join_accept(msg.data)
        elif msg.kind == "edge_accept" and self.state is DeviceState.EDGE_WAIT:
            self._handle_edge_accept(msg)

    def _handle_join_accept(self, data: bytes) -> None:
        try:
            accept = frames.decode_join_accept(self.profile.root_key, data)
        except frames.FrameError:
            return
        nwk, app = derive_session_keys(self.profile.root_key,
                                       accept.join_nonce, self.dev_nonce)
        self.session = DeviceSession(dev_addr=accept.dev_addr, nwk_s_key=nwk,
                                     app_s_key=app,
                                     join_nonce=accept.join_nonce)
        if self.profile.mode == "e2ed":
            self._edge_attempts = 0
            self._begin_edge_join()
        else:
            self._go_active(DeviceState.ACTIVE_LEGACY)

    # -- edge join ----------------------------------------------------------

    def _begin_edge_join(self) -> None:
        if self._edge_attempts >= MAX_JOIN_RETRIES:
            self.on_event("edge_join_gave_up", device=self.profile.name)
            self._go_active(DeviceState.ACTIVE_LEGACY)
            return
        self._edge_attempts += 1
        self._ephemeral = crypto.generate_keypair(self.rng)
        payload = frames.encode_edge_join(frames.EdgeJoinPayload(
            self._ephemeral.public, frames.EdgeRole.DEVICE))
        session = self.session
        assert session is not None
        session.fcnt_up += 1
        encrypted = frames.encrypt_payload(session.app_s_key, session.dev_addr,
                                           session.fcnt_up, frames.DIR_UP,
                                           payload)
        frame = frames.make_uplink(session.nwk_s_key, session.dev_addr,
                                   session.fcnt_up, frames.FPORT_EDGE_JOIN,
                                   encrypted)
        self.state = DeviceState.EDGE_WAIT
        self.medium.transmit(self.profile.name, self.profile.channel,
                             frames.encode_uplink(frame))
        self.engine.schedule_in(JOIN_TIMEOUT_US, self._guarded,
                                self._generation, self._edge_timeout,
                                self._edge_attempts)

    def _edge_timeout(self, attempt: int) -> None:
        if self.state is DeviceState.EDGE_WAIT and attempt == self._edge_attempts:
            self._begin_edge_join()

    def _handle_edge_accept(self, msg: DownlinkMsg) -> None:
        assert self.session is not None and self._ephemeral is not None
        if msg.echo_pub != self._ephemeral.public:
            return  # stale accept for a superseded ephemeral
        try:
            payload = frames.decode_edge_join(msg.data)
        except frames.FrameError:
            return
        if payload.role is not frames.EdgeRole.GATEWAY:
            return
        shared = crypto.dh_shared(self._ephemeral.private, payload.ephemeral_pub)
        self.session.edge_keys = crypto.derive_edge_keys(
            shared, self.session.dev_addr, self.session.join_nonce)
        self._go_active(DeviceState.ACTIVE_EDGE)

    # -- data plane -----------------------------------------------------------

    def _go_active(self, state: DeviceState) -> None:
        self.state = state
        self._anchor_us = self.engine.now_us
        self._next_tx_index = 0
        self.on_event("device_active", device=self.profile.name,
                      mode=self.profile.mode, state=state.value)
        self._schedule_next_tx()

    def _schedule_next_tx(self) -> None:
        if self.profile.max_frames is not None \
                and self.frames_sent >= self.profile.max_frames:
            return
        self._next_tx_index += 1
        period_us = self.profile.period_ms * 1000
        jitter = round(period_us * self.rng.uniform(-JITTER_FRACTION,
                                                    JITTER_FRACTION))
        at = self._anchor_us + self._next_tx_index * period_us + jitter
        self.engine.schedule(max(at, self.engine.now_us), self._guarded,
                             self._generation, self._transmit_data)

    def _transmit_data(self) -> None:
        if self.state not in (DeviceState.ACTIVE_LEGACY, DeviceState.ACTIVE_EDGE):
            return
        assert self.session is not None
        reading = self.sensor.next_reading(self.engine.now_us)
        frame = build_uplink(self.session, reading, self.profile.payload_len)
        self.frames_sent += 1
        self.medium.transmit(self.profile.name, self.profile.channel,
                             frames.encode_uplink(frame))
        self._schedule_next_tx()


def derive_session_keys(root_key: bytes, join_nonce: int,
                        dev_nonce: int) -> tuple[bytes, bytes]:
    """LoRaWAN 1.0.x-style session keys: AES over labeled nonce blocks."""
    def block(label: int) -> bytes:
        b = bytes([label]) + join_nonce.to_bytes(3, "little") \
            + dev_nonce.to_bytes(2, "little")
        return b + bytes(16 - len(b))

    nwk = frames.aes_encrypt_block(root_key, block(0x01))
    app = frames.aes_encrypt_block(root_key, block(0x02))
    return nwk, app
